# encoding: utf-8
"""
The evaluation protocol shared by every model backend.

Core quantity: the average log-probability of a dataset — the per-symbol
mean of ln P(y_k | y_1..y_{k-1}) over all songs (natural log, higher is
better; its negation is the cross-entropy in nats).  On top of it:
per-dataset breakdowns, cumulative per-position curves that reveal
within-song adaptation, bootstrap confidence intervals over songs, and
paired t-tests with Bonferroni correction for model comparisons.

Backends are interchangeable: anything that maps a chord tuple to its
per-symbol log-probabilities can be scored.
"""

from dataclasses import dataclass

import numpy as np
from scipy import stats

from .chords import VOCAB_SIZE


class EmptyDataset(ValueError):
    """No songs (or no symbols) to evaluate."""


class NoEligibleSongs(ValueError):
    """No song reaches the minimum length required for curves."""


class TooFewSongs(ValueError):
    """Bootstrap needs at least two songs."""


class MisalignedSongs(ValueError):
    """Paired comparison got different song sets."""


class UniformModel:
    """Baseline assigning 1/25 to everything."""

    def sequence_log_probs(self, chords):
        return np.full(len(chords), -np.log(VOCAB_SIZE))


def as_log_prob_fn(model):
    """Adapt a model object (or callable) to the chords -> log-probs protocol."""
    if callable(model) and not hasattr(model, 'sequence_log_probs') \
            and not hasattr(model, 'predict_log_probs'):
        return model
    if hasattr(model, 'sequence_log_probs'):
        return model.sequence_log_probs
    return model.predict_log_probs


@dataclass
class EvalResult:
    """Average log-probability with per-song and per-dataset aggregates."""

    avg_log_prob: float
    total_symbols: int
    per_song: dict      # song_id -> (symbol count, summed log-prob)
    per_dataset: dict   # dataset_id -> (symbol count, summed log-prob)

    def per_song_means(self):
        return {song_id: log_sum / count
                for song_id, (count, log_sum) in self.per_song.items()}

    def per_dataset_means(self):
        return {dataset_id: log_sum / count
                for dataset_id, (count, log_sum) in self.per_dataset.items()}


@dataclass
class CumulativeCurve:
    """Mean cumulative log-probability per chord position."""

    positions: np.ndarray   # 1..min_length
    values: np.ndarray      # L_<=(k) for each position
    song_count: int
    min_length: int


def avg_log_prob(model, sequences):
    """
    Score a dataset: per-symbol mean log-probability.

    Parameters
    ----------
    model : object or callable
        A model with ``sequence_log_probs``/``predict_log_probs``, or a
        plain function from chord tuples to log-probability arrays.
    sequences : list of ChordSequence

    Returns
    -------
    EvalResult
    """
    log_prob_fn = as_log_prob_fn(model)
    per_song, per_dataset = {}, {}
    total, symbols = 0.0, 0
    for sequence in sequences:
        log_probs = np.asarray(log_prob_fn(sequence.chords))
        song_sum = float(log_probs.sum())
        count = len(log_probs)
        per_song[sequence.song_id] = (count, song_sum)
        ds_count, ds_sum = per_dataset.get(sequence.dataset_id, (0, 0.0))
        per_dataset[sequence.dataset_id] = (ds_count + count,
                                            ds_sum + song_sum)
        total += song_sum
        symbols += count
    if symbols == 0:
        raise EmptyDataset('nothing to evaluate')
    return EvalResult(avg_log_prob=total / symbols, total_symbols=symbols,
                      per_song=per_song, per_dataset=per_dataset)


def cumulative_curve(model, sequences, min_length=100):
    """
    Average cumulative log-probability per chord position.

    Only songs with at least ``min_length`` chords take part.  Position k
    averages each eligible song's summed log-probability of its first k
    chords, divided by k.  At k = min_length this equals the average
    log-probability of the length-truncated songs.
    """
    log_prob_fn = as_log_prob_fn(model)
    eligible = [s for s in sequences if len(s.chords) >= min_length]
    if not eligible:
        raise NoEligibleSongs('no song has %d chords' % min_length)
    prefix_logs = np.stack([
        np.asarray(log_prob_fn(s.chords))[:min_length] for s in eligible])
    positions = np.arange(1, min_length + 1)
    values = prefix_logs.cumsum(axis=1).mean(axis=0) / positions
    return CumulativeCurve(positions=positions, values=values,
                           song_count=len(eligible), min_length=min_length)


def bootstrap_ci(per_song, level=0.95, resamples=1000, seed=0):
    """
    Percentile bootstrap interval for the average log-probability.

    Songs are the resampling unit (chords within a song are dependent);
    each resample recomputes the symbol-weighted mean.

    Parameters
    ----------
    per_song : dict or list
        ``{song_id: (symbols, summed log-prob)}`` or a list of such pairs,
        e.g. ``EvalResult.per_song``.

    Returns
    -------
    (low, high) : tuple of float
    """
    pairs = list(per_song.values()) if isinstance(per_song, dict) \
        else list(per_song)
    if len(pairs) < 2:
        raise TooFewSongs('bootstrap needs >= 2 songs, got %d' % len(pairs))
    counts = np.array([p[0] for p in pairs], dtype=float)
    sums = np.array([p[1] for p in pairs], dtype=float)
    rng = np.random.default_rng(seed)
    draws = rng.integers(len(pairs), size=(resamples, len(pairs)))
    resampled = sums[draws].sum(axis=1) / counts[draws].sum(axis=1)
    tail = 100.0 * (1.0 - level) / 2.0
    low, high = np.percentile(resampled, [tail, 100.0 - tail])
    return float(low), float(high)


@dataclass
class PairedTestResult:
    t_statistic: float
    p_value: float
    significant: bool
    alpha: float
    zero_variance: bool = False


def paired_test(scores_a, scores_b, num_comparisons=1):
    """
    Two-sided paired t-test on per-song mean log-probabilities.

    Parameters
    ----------
    scores_a, scores_b : dict
        song_id -> per-song mean log-probability, aligned by song id.
    num_comparisons : int
        Bonferroni divisor: significance is declared at 0.05 / m.

    Returns
    -------
    PairedTestResult

    Raises
    ------
    MisalignedSongs
        If the two score sets cover different songs or fewer than 2.
    """
    if set(scores_a) != set(scores_b):
        raise MisalignedSongs('song sets differ')
    song_ids = sorted(scores_a)
    if len(song_ids) < 2:
        raise MisalignedSongs('need >= 2 paired songs')
    differences = np.array([scores_a[s] - scores_b[s] for s in song_ids])
    alpha = 0.05 / num_comparisons
    spread = differences.std(ddof=1)
    n = len(differences)
    if spread == 0.0:
        if differences.mean() == 0.0:
            return PairedTestResult(t_statistic=0.0, p_value=1.0,
                                    significant=False, alpha=alpha)
        # constant non-zero difference: degenerate t -> infinity
        return PairedTestResult(t_statistic=float(np.inf), p_value=0.0,
                                significant=True, alpha=alpha,
                                zero_variance=True)
    t_statistic = differences.mean() / (spread / np.sqrt(n))
    p_value = 2.0 * stats.t.sf(abs(t_statistic), df=n - 1)
    return PairedTestResult(t_statistic=float(t_statistic),
                            p_value=float(p_value),
                            significant=bool(p_value < alpha), alpha=alpha)
