# encoding: utf-8
"""
Corpus ingestion and preparation.

Reads time-aligned ``.lab`` annotation files, normalises each song into a
sequence of the 25 chord classes (reduce, then merge consecutive repeats,
durations discarded), removes duplicate songs, splits the corpus into
train/validation/test stratified by source dataset, and multiplies the
training portion by transposing every sequence to all 12 keys.
"""

import glob
import json
import math
import os
from dataclasses import dataclass, field

from .chords import (MalformedLabel, class_to_string, label_to_class,
                     string_to_class, transpose)
from .utils import derive_rng


class LabParseError(ValueError):
    """A malformed line in a .lab file; carries the 1-based line number."""

    def __init__(self, message, line_number):
        super().__init__('%s (line %d)' % (message, line_number))
        self.line_number = line_number


class NonMonotonicTimestamps(ValueError):
    """Event times are unordered or overlapping."""


class EmptySong(ValueError):
    """An annotation file contained no events."""


class StratumTooSmall(ValueError):
    """A dataset has too few songs to be split into three parts."""


@dataclass
class AnnotatedSong:
    """A song's raw annotation: (start, end, label) events in seconds."""

    song_id: str
    dataset_id: str
    events: list
    artist: str | None = None
    title: str | None = None


@dataclass(frozen=True)
class ChordSequence:
    """A song reduced to its chord-class symbols (durations dropped)."""

    song_id: str
    dataset_id: str
    chords: tuple


@dataclass
class CorpusSplit:
    """Train/validation/test partition of a corpus, plus the split seed."""

    train: list
    validation: list
    test: list
    seed: int
    augmented_train: list | None = None


# ---------------------------------------------------------------------------
# loading and normalisation
# ---------------------------------------------------------------------------

_OVERLAP_TOLERANCE = 1e-6


def load_lab_file(path, dataset_id, song_id=None):
    """
    Load a ``.lab`` annotation file.

    Each non-empty, non-comment line must read ``start end label`` with
    whitespace separation.  Lines starting with ``#`` are skipped.

    Parameters
    ----------
    path : str or Path
        File to read.
    dataset_id : str
        Name of the source dataset the file belongs to.
    song_id : str, optional
        Defaults to the file name without its extension.

    Returns
    -------
    AnnotatedSong

    Raises
    ------
    LabParseError, NonMonotonicTimestamps, EmptySong
    """
    if song_id is None:
        song_id = os.path.splitext(os.path.basename(path))[0]
    events = []
    with open(path, 'r', encoding='utf-8') as handle:
        for line_number, raw in enumerate(handle, start=1):
            line = raw.strip()
            if not line or line.startswith('#'):
                continue
            parts = line.split()
            if len(parts) != 3:
                raise LabParseError(
                    '%s: expected "start end label", got %r' % (path, line),
                    line_number)
            try:
                start, end = float(parts[0]), float(parts[1])
            except ValueError:
                raise LabParseError(
                    '%s: bad timestamps in %r' % (path, line),
                    line_number) from None
            events.append((start, end, parts[2]))
    if not events:
        raise EmptySong('%s: no chord events' % path)
    _check_monotonic(events, path)
    return AnnotatedSong(song_id=song_id, dataset_id=dataset_id, events=events)


def _check_monotonic(events, context):
    previous_end = None
    for index, (start, end, _) in enumerate(events):
        if end <= start:
            raise NonMonotonicTimestamps(
                '%s: event %d ends at %g before it starts at %g'
                % (context, index + 1, end, start))
        if previous_end is not None and start < previous_end - _OVERLAP_TOLERANCE:
            raise NonMonotonicTimestamps(
                '%s: event %d starts at %g inside the previous event'
                % (context, index + 1, start))
        previous_end = end


def to_sequence(song):
    """
    Reduce an annotated song to its ChordSequence.

    Every label is parsed and mapped into the 25-class vocabulary, then
    consecutive identical classes are merged into a single symbol.  Event
    durations are discarded; the models operate on symbols only.
    """
    chords = []
    for _, _, label in song.events:
        try:
            chord_class = label_to_class(label)
        except MalformedLabel as err:
            raise MalformedLabel('%s: %s' % (song.song_id, err)) from err
        if not chords or chords[-1] != chord_class:
            chords.append(chord_class)
    return ChordSequence(song_id=song.song_id, dataset_id=song.dataset_id,
                         chords=tuple(chords))


# ---------------------------------------------------------------------------
# deduplication
# ---------------------------------------------------------------------------

def _normalise_metadata(text):
    return ''.join(ch for ch in text.casefold() if ch.isalnum())


def deduplicate(songs, dataset_priority=None):
    """
    Drop duplicate songs, keeping one representative per duplicate group.

    Songs with artist and title metadata are grouped by the normalised
    (case-folded, punctuation-stripped) ``artist+title`` string; songs
    without metadata fall back to exact equality of their reduced chord
    sequences.  Within a group the representative is the first song under
    the deterministic dataset priority order (alphabetical unless an
    explicit priority list is given), with song ids as tie breaker.
    """
    if dataset_priority:
        rank = {name: pos for pos, name in enumerate(dataset_priority)}
        order_key = lambda s: (rank.get(s.dataset_id, len(rank)),
                               s.dataset_id, s.song_id)
    else:
        order_key = lambda s: (s.dataset_id, s.song_id)

    groups = {}
    for song in songs:
        if song.artist and song.title:
            key = ('meta', _normalise_metadata(song.artist + song.title))
        else:
            key = ('seq', to_sequence(song).chords)
        groups.setdefault(key, []).append(song)

    survivors = {id(min(group, key=order_key)) for group in groups.values()}
    return [song for song in songs if id(song) in survivors]


# ---------------------------------------------------------------------------
# splitting and augmentation
# ---------------------------------------------------------------------------

def _round_half_up(value):
    return int(math.floor(value + 0.5))


def stratified_split(sequences, seed, test_fraction=0.2,
                     validation_fraction=0.15):
    """
    Split sequences into train/validation/test, stratified by dataset.

    Within each dataset the songs are shuffled with a seed derived from
    ``seed`` and the dataset id, then ``test_fraction`` of them become the
    test set and ``validation_fraction`` of the remainder the validation
    set (fractions rounded half-up, remainder to train).  Deterministic
    for a fixed seed, independent of the input ordering.

    Raises
    ------
    StratumTooSmall
        If any dataset holds fewer than 3 songs.
    """
    strata = {}
    for sequence in sequences:
        strata.setdefault(sequence.dataset_id, []).append(sequence)

    train, validation, test = [], [], []
    for dataset_id in sorted(strata):
        members = sorted(strata[dataset_id], key=lambda s: s.song_id)
        if len(members) < 3:
            raise StratumTooSmall(
                'dataset %r has only %d song(s)' % (dataset_id, len(members)))
        rng = derive_rng(seed, 'split', dataset_id)
        order = rng.permutation(len(members))
        shuffled = [members[i] for i in order]

        n_test = _round_half_up(test_fraction * len(members))
        n_validation = _round_half_up(
            validation_fraction * (len(members) - n_test))
        test.extend(shuffled[:n_test])
        validation.extend(shuffled[n_test:n_test + n_validation])
        train.extend(shuffled[n_test + n_validation:])
    return CorpusSplit(train=train, validation=validation, test=test,
                       seed=seed)


def augment_transpositions(sequences):
    """
    Emit 12 copies of every sequence, transposed to all keys.

    The offset-0 copy is the original sequence object; copies for offsets
    1..11 carry a ``@+k`` suffix on the song id.  Output size is exactly
    12x the input size.
    """
    augmented = []
    for sequence in sequences:
        for offset in range(12):
            if offset == 0:
                augmented.append(sequence)
            else:
                augmented.append(ChordSequence(
                    song_id='%s@+%d' % (sequence.song_id, offset),
                    dataset_id=sequence.dataset_id,
                    chords=tuple(transpose(c, offset)
                                 for c in sequence.chords)))
    return augmented


# ---------------------------------------------------------------------------
# manifests and on-disk formats
# ---------------------------------------------------------------------------

def load_manifest(path):
    """
    Load all songs described by a corpus manifest.

    The manifest is a JSON file::

        {"datasets": {
            "<dataset-id>": {
                "files": "<glob, relative to the manifest>",
                "metadata": {"<song-id>": {"artist": ..., "title": ...}}
            }, ...}}

    Song ids are ``<dataset-id>/<file path without extension>`` with the
    path taken relative to the manifest directory.

    Returns
    -------
    (songs, errors) : (list of AnnotatedSong, list of (path, Exception))
        Files that fail to load are collected instead of aborting the run.
    """
    with open(path, 'r', encoding='utf-8') as handle:
        manifest = json.load(handle)
    base = os.path.dirname(os.path.abspath(path))

    songs, errors = [], []
    for dataset_id in sorted(manifest['datasets']):
        entry = manifest['datasets'][dataset_id]
        metadata = entry.get('metadata', {})
        pattern = os.path.join(base, entry['files'])
        for file_path in sorted(glob.glob(pattern, recursive=True)):
            relative = os.path.relpath(file_path, base)
            stem = os.path.splitext(relative)[0].replace(os.sep, '/')
            song_id = '%s/%s' % (dataset_id, stem)
            try:
                song = load_lab_file(file_path, dataset_id, song_id=song_id)
            except (LabParseError, NonMonotonicTimestamps, EmptySong) as err:
                errors.append((file_path, err))
                continue
            meta = metadata.get(stem) or metadata.get(song_id) or {}
            song.artist = meta.get('artist')
            song.title = meta.get('title')
            songs.append(song)
    return songs, errors


def write_corpus(path, sequences):
    """Write sequences as JSON Lines with canonical class names."""
    with open(path, 'w', encoding='utf-8') as handle:
        for sequence in sequences:
            record = {
                'song_id': sequence.song_id,
                'dataset_id': sequence.dataset_id,
                'chords': [class_to_string(c) for c in sequence.chords],
            }
            handle.write(json.dumps(record, sort_keys=True) + '\n')


def read_corpus(path):
    """Read a JSON Lines corpus written by :func:`write_corpus`."""
    sequences = []
    with open(path, 'r', encoding='utf-8') as handle:
        for line in handle:
            line = line.strip()
            if not line:
                continue
            record = json.loads(line)
            sequences.append(ChordSequence(
                song_id=record['song_id'],
                dataset_id=record['dataset_id'],
                chords=tuple(string_to_class(name)
                             for name in record['chords'])))
    return sequences


def write_split(path, split):
    """Write the song-id lists of a CorpusSplit as JSON."""
    record = {
        'seed': split.seed,
        'parts': {
            'train': [s.song_id for s in split.train],
            'validation': [s.song_id for s in split.validation],
            'test': [s.song_id for s in split.test],
        },
    }
    with open(path, 'w', encoding='utf-8') as handle:
        json.dump(record, handle, sort_keys=True, indent=2)
        handle.write('\n')


def read_split(path, sequences):
    """Rebuild a CorpusSplit from a split file and the corpus it refers to."""
    with open(path, 'r', encoding='utf-8') as handle:
        record = json.load(handle)
    by_id = {s.song_id: s for s in sequences}
    parts = {}
    for name in ('train', 'validation', 'test'):
        missing = [i for i in record['parts'][name] if i not in by_id]
        if missing:
            raise KeyError('split refers to unknown song ids: %s'
                           % ', '.join(missing[:5]))
        parts[name] = [by_id[i] for i in record['parts'][name]]
    return CorpusSplit(train=parts['train'], validation=parts['validation'],
                       test=parts['test'], seed=record['seed'])
