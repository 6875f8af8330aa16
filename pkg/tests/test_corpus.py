# encoding: utf-8
"""Lab-file loading, normalisation, dedup, splitting and augmentation."""

import collections

import numpy as np
import pytest

from chordlm.chords import MalformedLabel, string_to_class, transpose
from chordlm.corpus import (AnnotatedSong, ChordSequence, EmptySong,
                            LabParseError, NonMonotonicTimestamps,
                            StratumTooSmall, augment_transpositions,
                            deduplicate, load_lab_file, load_manifest,
                            read_corpus, read_split, stratified_split,
                            to_sequence, write_corpus, write_split)
from chordlm.synthetic import write_lab_corpus


def song(labels, song_id='s', dataset_id='d'):
    events = [(float(i), float(i + 1), label)
              for i, label in enumerate(labels)]
    return AnnotatedSong(song_id=song_id, dataset_id=dataset_id,
                         events=events)


def sequence(names, song_id='s', dataset_id='d'):
    return ChordSequence(song_id=song_id, dataset_id=dataset_id,
                         chords=tuple(string_to_class(n) for n in names))


class TestLoadLab:

    def test_two_events(self, tmp_path):
        path = tmp_path / 'a.lab'
        path.write_text('0.0 1.5 C:maj\n1.5 3.0 G:maj\n')
        loaded = load_lab_file(path, 'demo')
        assert loaded.song_id == 'a'
        assert loaded.events == [(0.0, 1.5, 'C:maj'), (1.5, 3.0, 'G:maj')]

    def test_comments_and_blanks_skipped(self, tmp_path):
        path = tmp_path / 'a.lab'
        path.write_text('# header\n\n0.0\t1.0\tC:maj\n')
        assert len(load_lab_file(path, 'demo').events) == 1

    def test_empty_file(self, tmp_path):
        path = tmp_path / 'a.lab'
        path.write_text('# only a comment\n')
        with pytest.raises(EmptySong):
            load_lab_file(path, 'demo')

    def test_end_before_start(self, tmp_path):
        path = tmp_path / 'a.lab'
        path.write_text('1.0 0.5 C:maj\n')
        with pytest.raises(NonMonotonicTimestamps):
            load_lab_file(path, 'demo')

    def test_overlapping_events(self, tmp_path):
        path = tmp_path / 'a.lab'
        path.write_text('0.0 2.0 C:maj\n1.0 3.0 G:maj\n')
        with pytest.raises(NonMonotonicTimestamps):
            load_lab_file(path, 'demo')

    def test_bad_line_reports_number(self, tmp_path):
        path = tmp_path / 'a.lab'
        path.write_text('0.0 1.0 C:maj\nnot a lab line at all whatsoever\n')
        with pytest.raises(LabParseError) as excinfo:
            load_lab_file(path, 'demo')
        assert excinfo.value.line_number == 2


class TestToSequence:

    def test_reduction_merges(self):
        seq = to_sequence(song(['C:maj', 'C:maj7', 'G:maj']))
        assert seq.chords == (string_to_class('C:maj'),
                              string_to_class('G:maj'))

    def test_all_no_chord(self):
        assert to_sequence(song(['N', 'N', 'N'])).chords == (24,)

    def test_no_adjacent_duplicates_preserved(self):
        seq = to_sequence(song(['C:maj', 'A:min', 'C:maj']))
        assert len(seq.chords) == 3

    def test_malformed_label_carries_song_id(self):
        with pytest.raises(MalformedLabel, match='badsong'):
            to_sequence(song(['C:maj', 'Q:maj'], song_id='badsong'))

    def test_never_adjacent_equal(self):
        rng = np.random.default_rng(7)
        labels = ['C:maj', 'C:maj7', 'C:sus4', 'A:min', 'A:min7', 'N', 'X']
        for _ in range(50):
            draw = [labels[i] for i in rng.integers(len(labels), size=30)]
            chords = to_sequence(song(draw)).chords
            assert all(a != b for a, b in zip(chords, chords[1:]))


class TestDeduplicate:

    def test_metadata_duplicates_collapse(self):
        first = song(['C:maj', 'G:maj'], song_id='a', dataset_id='one')
        second = song(['D:maj', 'A:maj'], song_id='b', dataset_id='two')
        first.artist = second.artist = 'Someone'
        first.title, second.title = 'A Song!', 'a song'
        survivors = deduplicate([first, second])
        assert [s.song_id for s in survivors] == ['a']

    def test_sequence_fallback(self):
        first = song(['C:maj', 'G:maj', 'C:maj'], song_id='x',
                     dataset_id='one')
        second = song(['C:maj7', 'G:sus4', 'C:maj'], song_id='y',
                      dataset_id='two')  # reduces to the same classes
        survivors = deduplicate([first, second])
        assert [s.song_id for s in survivors] == ['x']

    def test_disjoint_unchanged(self):
        songs = [song(['C:maj', 'G:maj'], song_id='a'),
                 song(['D:min', 'A:maj'], song_id='b')]
        assert deduplicate(songs) == songs

    def test_priority_order(self):
        first = song(['C:maj', 'G:maj'], song_id='a', dataset_id='zeta')
        second = song(['C:maj', 'G:maj'], song_id='b', dataset_id='alpha')
        assert deduplicate([first, second])[0].song_id == 'b'
        chosen = deduplicate([first, second], dataset_priority=['zeta'])
        assert chosen[0].song_id == 'a'


class TestStratifiedSplit:

    def make(self, count, dataset_id='d'):
        return [sequence(['C:maj', 'G:maj'], song_id='%s-%03d'
                         % (dataset_id, i), dataset_id=dataset_id)
                for i in range(count)]

    def test_hundred_songs(self):
        # 0.2 * 100 = 20 test; 0.15 * 80 = 12 validation; 68 train
        split = stratified_split(self.make(100), seed=1)
        assert len(split.test) == 20
        assert len(split.validation) == 12
        assert len(split.train) == 68

    def test_deterministic(self):
        songs = self.make(37)
        one = stratified_split(songs, seed=5)
        two = stratified_split(list(reversed(songs)), seed=5)
        assert [s.song_id for s in one.train] == \
            [s.song_id for s in two.train]
        assert [s.song_id for s in one.test] == [s.song_id for s in two.test]

    def test_two_strata(self):
        songs = self.make(50, 'one') + self.make(50, 'two')
        split = stratified_split(songs, seed=2)
        by_dataset = collections.Counter(s.dataset_id for s in split.test)
        assert by_dataset == {'one': 10, 'two': 10}

    def test_partition(self):
        songs = self.make(23, 'one') + self.make(11, 'two')
        split = stratified_split(songs, seed=3)
        ids = [s.song_id for part in (split.train, split.validation,
                                      split.test) for s in part]
        assert sorted(ids) == sorted(s.song_id for s in songs)

    def test_fraction_invariants(self):
        rng = np.random.default_rng(11)
        for trial in range(20):
            count = int(rng.integers(3, 200))
            split = stratified_split(self.make(count), seed=trial)
            assert abs(len(split.test) - 0.2 * count) <= 1
            pool = len(split.train) + len(split.validation)
            assert abs(len(split.validation) - 0.15 * pool) <= 1

    def test_small_stratum(self):
        with pytest.raises(StratumTooSmall):
            stratified_split(self.make(2), seed=0)


class TestAugmentation:

    def test_count_and_offsets(self):
        base = sequence(['C:maj', 'G:maj'])
        out = augment_transpositions([base])
        assert len(out) == 12
        assert out[0] is base
        assert out[2].chords == (string_to_class('D:maj'),
                                 string_to_class('A:maj'))

    def test_no_chord_copies(self):
        out = augment_transpositions([sequence(['N'])])
        assert all(s.chords == (24,) for s in out)

    def test_times_twelve(self):
        songs = [sequence(['C:maj', 'F:maj'], song_id=str(i))
                 for i in range(147)]
        assert len(augment_transpositions(songs)) == 1764

    def test_closure_under_transposition(self):
        rng = np.random.default_rng(3)
        songs = []
        for i in range(5):
            chords = [int(rng.integers(25))]
            while len(chords) < 12:
                nxt = int(rng.integers(25))
                if nxt != chords[-1]:
                    chords.append(nxt)
            songs.append(ChordSequence(song_id=str(i), dataset_id='d',
                                       chords=tuple(chords)))
        augmented = augment_transpositions(songs)
        bag = collections.Counter(s.chords for s in augmented)
        for offset in range(12):
            shifted = collections.Counter(
                tuple(transpose(c, offset) for c in chords)
                for chords in bag.elements())
            assert shifted == bag


class TestOnDiskFormats:

    def test_corpus_roundtrip(self, tmp_path):
        songs = [sequence(['C:maj', 'N', 'F#:min'], song_id='a'),
                 sequence(['D:maj', 'G:maj'], song_id='b')]
        path = tmp_path / 'corpus.jsonl'
        write_corpus(path, songs)
        assert read_corpus(path) == songs

    def test_split_roundtrip(self, tmp_path):
        songs = [sequence(['C:maj', 'G:maj'], song_id=str(i))
                 for i in range(10)]
        split = stratified_split(songs, seed=9)
        path = tmp_path / 'split.json'
        write_split(path, split)
        loaded = read_split(path, songs)
        assert loaded.seed == 9
        assert loaded.train == split.train
        assert loaded.validation == split.validation
        assert loaded.test == split.test

    def test_split_with_unknown_ids(self, tmp_path):
        songs = [sequence(['C:maj', 'G:maj'], song_id=str(i))
                 for i in range(10)]
        path = tmp_path / 'split.json'
        write_split(path, stratified_split(songs, seed=0))
        with pytest.raises(KeyError):
            read_split(path, songs[:5])


class TestManifest:

    def test_synthetic_tree_loads(self, tmp_path):
        manifest_path, expected = write_lab_corpus(
            tmp_path / 'labs', songs_per_dataset=4, song_length=12, seed=1)
        songs, errors = load_manifest(manifest_path)
        assert not errors
        assert len(songs) == expected['songs']
        unique = deduplicate(songs)
        assert len(unique) == expected['unique_songs']
        total = sum(len(to_sequence(s).chords) for s in songs)
        assert total == expected['chords']

    def test_bad_file_collected(self, tmp_path):
        manifest_path, expected = write_lab_corpus(
            tmp_path / 'labs', datasets=('solo',), songs_per_dataset=3,
            song_length=8, seed=2, duplicate_pair=False)
        bad = tmp_path / 'labs' / 'solo' / 'broken.lab'
        bad.write_text('5.0 1.0 C:maj\n')
        songs, errors = load_manifest(manifest_path)
        assert len(songs) == expected['songs']
        assert len(errors) == 1
