# encoding: utf-8
"""
Synthetic chord corpora.

The real annotation datasets cannot be redistributed, so the toolkit ships
generators for controlled synthetic corpora instead: a second-order Markov
chain with an analytically known entropy rate, a motif corpus whose songs
repeat a short random progression (for probing within-song adaptation), a
fully deterministic periodic corpus, and a writer that lays out songs as a
tree of .lab files with a manifest, for exercising the ingestion pipeline.
"""

import json
import os
from dataclasses import dataclass

import numpy as np

from .chords import NO_CHORD, PITCH_NAMES, class_to_string
from .corpus import ChordSequence
from .utils import derive_rng


@dataclass
class SecondOrderChain:
    """
    A second-order Markov chain over a subset of chord classes.

    ``kernel`` maps every ordered state pair (a, b) with a != b to
    (successors, probabilities); successors never repeat b, so sampled
    songs respect the no-adjacent-duplicates invariant.  The first symbol
    is uniform over the states, the second uniform over the others.
    """

    states: tuple
    kernel: dict

    def sample_song(self, length, rng):
        states = self.states
        first = states[int(rng.integers(len(states)))]
        others = [s for s in states if s != first]
        second = others[int(rng.integers(len(others)))]
        song = [first, second]
        while len(song) < length:
            successors, probs = self.kernel[(song[-2], song[-1])]
            song.append(int(rng.choice(successors, p=probs)))
        return tuple(song)

    def entropy_rate(self):
        """
        Exact asymptotic entropy rate in nats per symbol.

        Lifts the chain to a first-order chain over state pairs, finds its
        stationary distribution, and averages the conditional entropies.
        """
        pairs = [(a, b) for a in self.states for b in self.states if a != b]
        index = {pair: i for i, pair in enumerate(pairs)}
        transition = np.zeros((len(pairs), len(pairs)))
        for (a, b), i in index.items():
            successors, probs = self.kernel[(a, b)]
            for successor, prob in zip(successors, probs):
                transition[i, index[(b, successor)]] += prob
        values, vectors = np.linalg.eig(transition.T)
        stationary = np.real(vectors[:, np.argmax(np.real(values))])
        stationary = np.abs(stationary)
        stationary /= stationary.sum()
        rate = 0.0
        for (a, b), i in index.items():
            _, probs = self.kernel[(a, b)]
            probs = np.asarray(probs)
            rate += stationary[i] * float(-(probs * np.log(probs)).sum())
        return rate


def make_second_order_chain(num_states=6, branching=3,
                            probabilities=(0.7, 0.2, 0.1), seed=0):
    """
    Build a chain whose every context has the same conditional entropy.

    Each context (a, b) gets ``branching`` successor states drawn (without
    replacement, excluding b) and the fixed probability profile, so the
    entropy rate equals the profile's entropy regardless of the stationary
    distribution.
    """
    rng = derive_rng(seed, 'chain')
    states = tuple(int(s) for s in
                   rng.choice(NO_CHORD, size=num_states, replace=False))
    probabilities = tuple(probabilities)
    assert len(probabilities) == branching
    kernel = {}
    for a in states:
        for b in states:
            if a == b:
                continue
            candidates = [s for s in states if s != b]
            chosen = rng.choice(len(candidates), size=branching,
                                replace=False)
            successors = tuple(candidates[i] for i in chosen)
            kernel[(a, b)] = (successors, probabilities)
    return SecondOrderChain(states=states, kernel=kernel)


def make_markov_corpus(chain, n_songs, length, seed=0,
                       dataset_id='markov', prefix='song'):
    """Sample ``n_songs`` songs of ``length`` symbols from the chain."""
    rng = derive_rng(seed, 'markov-corpus', dataset_id)
    return [
        ChordSequence(song_id='%s-%03d' % (prefix, i), dataset_id=dataset_id,
                      chords=chain.sample_song(length, rng))
        for i in range(n_songs)
    ]


def make_motif_corpus(n_songs=100, motif_length=8, min_length=120, seed=0,
                      dataset_id='motifs'):
    """
    Songs that cyclically repeat a random chord progression.

    Each song draws ``motif_length`` distinct chord classes and repeats
    them until at least ``min_length`` symbols.  Progressions are song
    specific, so static cross-song statistics carry little information
    about a new song, while remembering the current song's progression
    predicts it almost perfectly.
    """
    rng = derive_rng(seed, 'motif-corpus')
    repeats = -(-min_length // motif_length)
    songs = []
    for i in range(n_songs):
        motif = rng.choice(NO_CHORD + 1, size=motif_length, replace=False)
        chords = tuple(int(c) for c in np.tile(motif, repeats))
        songs.append(ChordSequence(song_id='motif-%03d' % i,
                                   dataset_id=dataset_id, chords=chords))
    return songs


def make_periodic_corpus(pattern, n_songs=8, length=60,
                         dataset_id='periodic'):
    """Every song is the same repeated pattern: a zero-entropy generator."""
    repeats = -(-length // len(pattern))
    chords = tuple(pattern) * repeats
    return [
        ChordSequence(song_id='periodic-%02d' % i, dataset_id=dataset_id,
                      chords=chords[:length])
        for i in range(n_songs)
    ]


# ---------------------------------------------------------------------------
# .lab fixture trees
# ---------------------------------------------------------------------------

# surface spellings that reduce to a major / minor class on the same root
_MAJOR_SURFACES = ('{root}', '{root}:maj', '{root}:maj7', '{root}:7',
                   '{root}:sus4', '{root}:maj6', '{root}:9')
_MINOR_SURFACES = ('{root}:min', '{root}:min7', '{root}:dim', '{root}:min9',
                   '{root}:hdim7')
_FLAT_NAMES = {1: 'Db', 3: 'Eb', 6: 'Gb', 8: 'Ab', 10: 'Bb'}


def _surface_label(chord_class, rng):
    if chord_class == NO_CHORD:
        return 'N'
    root, minor = divmod(chord_class, 2)
    if root in _FLAT_NAMES and rng.integers(2):
        root_name = _FLAT_NAMES[root]
    else:
        root_name = PITCH_NAMES[root]
    surfaces = _MINOR_SURFACES if minor else _MAJOR_SURFACES
    return surfaces[int(rng.integers(len(surfaces)))].format(root=root_name)


def write_lab_corpus(directory, datasets=('alpha', 'beta', 'gamma'),
                     songs_per_dataset=10, song_length=40, seed=0,
                     duplicate_pair=True):
    """
    Write a synthetic .lab corpus tree plus its JSON manifest.

    Labels use varied surface spellings (sevenths, suspensions, flats) that
    all reduce into the 25-class vocabulary; chord classes never repeat
    consecutively, so the expected chord count is exact.  With
    ``duplicate_pair`` the last two datasets share one song under the same
    artist/title metadata, to exercise deduplication.

    Returns
    -------
    (manifest_path, expected) : (str, dict)
        ``expected`` holds the song/chord counts the ingest step should
        report: keys 'songs', 'chords', 'unique_songs', 'unique_chords'.
    """
    rng = derive_rng(seed, 'lab-corpus')
    os.makedirs(directory, exist_ok=True)
    manifest = {'datasets': {}}
    total_songs, total_chords = 0, 0

    duplicate_classes = None
    for dataset_index, dataset_id in enumerate(datasets):
        dataset_dir = os.path.join(directory, dataset_id)
        os.makedirs(dataset_dir, exist_ok=True)
        metadata = {}
        for song_index in range(songs_per_dataset):
            stem = '%s/%s-%02d' % (dataset_id, dataset_id, song_index)
            is_duplicate = (duplicate_pair and song_index == 0
                            and dataset_index >= len(datasets) - 2)
            if is_duplicate and duplicate_classes is not None:
                classes = duplicate_classes
            else:
                classes = []
                while len(classes) < song_length:
                    chord_class = int(rng.integers(NO_CHORD + 1))
                    if not classes or classes[-1] != chord_class:
                        classes.append(chord_class)
                if is_duplicate:
                    duplicate_classes = classes
            if is_duplicate:
                metadata[stem] = {'artist': 'The Doubles',
                                  'title': 'Same Song Twice'}

            path = os.path.join(directory, stem + '.lab')
            with open(path, 'w', encoding='utf-8') as handle:
                handle.write('# synthetic annotation\n')
                clock = 0.0
                for chord_class in classes:
                    duration = float(rng.uniform(0.5, 4.0))
                    handle.write('%.3f\t%.3f\t%s\n'
                                 % (clock, clock + duration,
                                    _surface_label(chord_class, rng)))
                    clock += duration
            total_songs += 1
            total_chords += len(classes)
        manifest['datasets'][dataset_id] = {
            'files': '%s/*.lab' % dataset_id,
            'metadata': metadata,
        }

    manifest_path = os.path.join(directory, 'manifest.json')
    with open(manifest_path, 'w', encoding='utf-8') as handle:
        json.dump(manifest, handle, sort_keys=True, indent=2)
        handle.write('\n')

    duplicates_removed = 1 if duplicate_pair else 0
    expected = {
        'songs': total_songs,
        'chords': total_chords,
        'unique_songs': total_songs - duplicates_removed,
        'unique_chords': total_chords - duplicates_removed * song_length,
    }
    return manifest_path, expected
