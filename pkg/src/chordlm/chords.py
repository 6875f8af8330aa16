# encoding: utf-8
"""
Chord label parsing and the 25-class major/minor vocabulary.

Labels follow the common ``Root:quality(intervals)/bass`` text syntax used
by most chord annotation files ("Harte" notation).  Every label is reduced
to one of 25 modelling classes: 12 roots x {maj, min} plus a "no chord"
class.  A chord counts as minor if its interval structure contains a minor
third above the root; everything else (major thirds, suspensions, power
chords) is filed under major with the same root.
"""

from dataclasses import dataclass, field


__all__ = [
    'MalformedLabel', 'UnknownClassString', 'ParsedLabel',
    'VOCAB_SIZE', 'NO_CHORD', 'PAD', 'CLASS_NAMES',
    'parse_chord_label', 'reduce_to_majmin', 'transpose',
    'class_to_string', 'string_to_class', 'vocabulary_hash',
]


class MalformedLabel(ValueError):
    """Raised when a chord label cannot be parsed."""


class UnknownClassString(ValueError):
    """Raised when a string is not one of the 25 canonical class names."""


# semitones of the natural notes C D E F G A B
_NATURAL_SEMITONES = {'C': 0, 'D': 2, 'E': 4, 'F': 5, 'G': 7, 'A': 9, 'B': 11}

# semitones of the scale degrees 1..7; higher degrees wrap (9 -> 2, 11 -> 5, ...)
_DEGREE_SEMITONES = (0, 2, 4, 5, 7, 9, 11)

# shorthand qualities expanded to semitone sets above the root
_SHORTHANDS = {
    'maj':     '1,3,5',
    'min':     '1,b3,5',
    'dim':     '1,b3,b5',
    'aug':     '1,3,#5',
    'maj7':    '1,3,5,7',
    'min7':    '1,b3,5,b7',
    '7':       '1,3,5,b7',
    'dim7':    '1,b3,b5,bb7',
    'hdim7':   '1,b3,b5,b7',
    'minmaj7': '1,b3,5,7',
    'maj6':    '1,3,5,6',
    'min6':    '1,b3,5,6',
    '9':       '1,3,5,b7,9',
    'maj9':    '1,3,5,7,9',
    'min9':    '1,b3,5,b7,9',
    'sus2':    '1,2,5',
    'sus4':    '1,4,5',
    '5':       '1,5',
    '1':       '1',
}

# canonical (sharp) spellings of the 12 pitch classes
PITCH_NAMES = ('C', 'C#', 'D', 'D#', 'E', 'F', 'F#', 'G', 'G#', 'A', 'A#', 'B')

VOCAB_SIZE = 25
NO_CHORD = 24
# reserved start-of-sequence token used as model input before the first chord;
# never part of the 25-symbol vocabulary
PAD = 25

CLASS_NAMES = tuple(
    '%s:%s' % (PITCH_NAMES[idx // 2], 'maj' if idx % 2 == 0 else 'min')
    for idx in range(24)
) + ('N',)

_CLASS_INDICES = {name: idx for idx, name in enumerate(CLASS_NAMES)}


@dataclass(frozen=True)
class ParsedLabel:
    """
    Intermediate parse of a chord label.

    Attributes
    ----------
    root : int or None
        Pitch class of the root (0..11, C=0), or None for no-chord.
    intervals : frozenset of int
        Semitone offsets above the root that sound in the chord.
        Contains 0 for every real chord; empty for no-chord.
    bass : int
        Semitone offset of the bass note above the root (informational).
    is_nochord : bool
        True for the "N" (and "X") annotations.
    """

    root: int | None
    intervals: frozenset = field(default_factory=frozenset)
    bass: int = 0
    is_nochord: bool = False


def _parse_pitch(text):
    """Parse a note name with accidentals ('C', 'Db', 'F##') to 0..11."""
    if not text or text[0] not in _NATURAL_SEMITONES:
        raise MalformedLabel('unknown root note: %r' % text)
    semitone = _NATURAL_SEMITONES[text[0]]
    for accidental in text[1:]:
        if accidental == '#':
            semitone += 1
        elif accidental == 'b':
            semitone -= 1
        else:
            raise MalformedLabel('bad accidental %r in %r' % (accidental, text))
    return semitone % 12


def _parse_interval(text):
    """Parse an interval like '3', 'b7' or '#11' to a semitone offset 0..11."""
    stripped = text.strip()
    shift = 0
    pos = 0
    while pos < len(stripped) and stripped[pos] in '#b':
        shift += 1 if stripped[pos] == '#' else -1
        pos += 1
    degree_text = stripped[pos:]
    if not degree_text.isdigit():
        raise MalformedLabel('bad interval: %r' % text)
    degree = int(degree_text)
    if degree < 1:
        raise MalformedLabel('bad interval: %r' % text)
    return (_DEGREE_SEMITONES[(degree - 1) % 7] + shift) % 12


def _expand_shorthand(name):
    if name not in _SHORTHANDS:
        raise MalformedLabel('unknown chord quality: %r' % name)
    return {_parse_interval(part) for part in _SHORTHANDS[name].split(',')}


def _apply_interval_list(intervals, text):
    """Apply a '(...)' interval list; entries prefixed '*' remove notes."""
    for part in text.split(','):
        part = part.strip()
        if not part:
            raise MalformedLabel('empty entry in interval list')
        if part.startswith('*'):
            intervals.discard(_parse_interval(part[1:]))
        else:
            intervals.add(_parse_interval(part))
    return intervals


def parse_chord_label(text):
    """
    Parse a textual chord label.

    Parameters
    ----------
    text : str
        A label such as ``"C:maj7"``, ``"Db:min7/b7"``, ``"G"``,
        ``"C:(1,b3,5)"`` or ``"N"``.

    Returns
    -------
    ParsedLabel

    Raises
    ------
    MalformedLabel
        On unknown root letters, unknown quality shorthands or unbalanced
        parentheses.
    """
    label = text.strip()
    if not label:
        raise MalformedLabel('empty chord label')
    if label in ('N', 'X'):
        # "X" (unknown harmony) has no slot in the vocabulary; treat as no-chord
        return ParsedLabel(root=None, is_nochord=True)

    bass_text = ''
    if '/' in label:
        label, bass_text = label.split('/', 1)

    root_text, _, quality_text = label.partition(':')
    root = _parse_pitch(root_text)

    list_text = ''
    if '(' in quality_text:
        head, _, rest = quality_text.partition('(')
        if not rest.endswith(')') or '(' in rest:
            raise MalformedLabel('unbalanced parentheses in %r' % text)
        quality_text, list_text = head, rest[:-1]
    elif ')' in quality_text:
        raise MalformedLabel('unbalanced parentheses in %r' % text)

    if quality_text:
        intervals = _expand_shorthand(quality_text)
    elif list_text:
        # bare interval list, e.g. "C:(1,b3,5)"
        intervals = {0}
    else:
        # bare root means major
        intervals = _expand_shorthand('maj')
    if list_text:
        intervals = _apply_interval_list(intervals, list_text)
    intervals.add(0)

    bass = _parse_interval(bass_text) if bass_text else 0
    return ParsedLabel(root=root, intervals=frozenset(intervals), bass=bass)


def reduce_to_majmin(label):
    """
    Reduce a parsed label to its class index in the 25-symbol vocabulary.

    A minor third above the root (interval 3) makes the chord minor; all
    other chords keep their root and become major.  No-chord maps to the
    reserved index 24.

    Parameters
    ----------
    label : ParsedLabel

    Returns
    -------
    int
        Class index in 0..24.
    """
    if label.is_nochord:
        return NO_CHORD
    minor = 3 in label.intervals
    return label.root * 2 + (1 if minor else 0)


def transpose(chord_class, semitones):
    """
    Transpose a chord class by a number of semitones.

    The root moves by ``semitones`` (mod 12), the mode is unchanged, and
    no-chord is invariant under any transposition.

    Parameters
    ----------
    chord_class : int
        Class index in 0..24.
    semitones : int
        Any integer offset, positive or negative.

    Returns
    -------
    int
    """
    if chord_class == NO_CHORD:
        return NO_CHORD
    root, mode = divmod(chord_class, 2)
    return ((root + semitones) % 12) * 2 + mode


def class_to_string(chord_class):
    """Return the canonical (sharp-spelled) name of a class index."""
    if not 0 <= chord_class < VOCAB_SIZE:
        raise UnknownClassString('class index out of range: %r' % chord_class)
    return CLASS_NAMES[chord_class]


def string_to_class(name):
    """Return the class index of a canonical name; inverse of class_to_string."""
    try:
        return _CLASS_INDICES[name]
    except KeyError:
        raise UnknownClassString('not a canonical class name: %r' % name) from None


def label_to_class(text):
    """Parse a raw label and reduce it to its class index in one step."""
    return reduce_to_majmin(parse_chord_label(text))


def vocabulary_hash():
    """Short fingerprint of the class vocabulary, stored in model files."""
    import hashlib
    return hashlib.sha256(','.join(CLASS_NAMES).encode()).hexdigest()[:16]
