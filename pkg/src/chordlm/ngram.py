# encoding: utf-8
"""
N-gram chord models with additive (Lidstone) smoothing.

An order-N model conditions each symbol on the previous N-1 symbols.
Contexts at the start of a song are left-padded with a reserved token, so
the first symbol's probability is well defined; the pad token is never a
prediction target and does not count towards the vocabulary size.
Probabilities add a pseudo-count ``alpha`` to every possible continuation:

    P(s | ctx) = (count(ctx, s) + alpha) / (total(ctx) + alpha * V)

with V = 25.  The pseudo-count is chosen on held-out data by grid search.
"""

import json

import numpy as np

from .chords import PAD, VOCAB_SIZE, vocabulary_hash


DEFAULT_ALPHA_GRID = (0.01, 0.03, 0.1, 0.3, 1.0, 3.0)

FORMAT_NAME = 'chordlm-ngram'
FORMAT_VERSION = 1


class UndefinedDistribution(ValueError):
    """Unsmoothed (alpha = 0) probability asked for an unseen context."""


def padded_context(history, order):
    """The last order-1 symbols of ``history``, left-padded at song start."""
    if order == 1:
        return ()
    window = tuple(history[-(order - 1):])
    return (PAD,) * (order - 1 - len(window)) + window


class NGramModel:
    """
    Count-based chord model of a fixed order.

    Counts are stored sparsely: a hash table maps each observed context
    (tuple of N-1 symbol indices, pads included) to a dense successor
    count vector over the 25 classes.
    """

    def __init__(self, order, alpha=0.0, vocab_size=VOCAB_SIZE):
        if not 1 <= order <= 6:
            raise ValueError('order must be in 1..6, got %r' % order)
        if alpha < 0:
            raise ValueError('alpha must be >= 0')
        self.order = order
        self.alpha = alpha
        self.vocab_size = vocab_size
        self.counts = {}
        self.context_totals = {}

    # -- estimation ---------------------------------------------------------

    def fit(self, sequences):
        """Count every (context, successor) pair in the training sequences."""
        pad_context = (PAD,) * (self.order - 1)
        for sequence in sequences:
            context = pad_context
            for symbol in sequence.chords:
                successors = self.counts.get(context)
                if successors is None:
                    successors = np.zeros(self.vocab_size, dtype=np.int64)
                    self.counts[context] = successors
                successors[symbol] += 1
                if self.order > 1:
                    context = context[1:] + (symbol,)
        self.context_totals = {
            context: int(successors.sum())
            for context, successors in self.counts.items()
        }
        return self

    # -- probabilities ------------------------------------------------------

    def prob_row(self, context):
        """Smoothed distribution over all 25 classes for one context."""
        successors = self.counts.get(tuple(context))
        if successors is None:
            if self.alpha == 0.0:
                raise UndefinedDistribution(
                    'context %r unseen and alpha = 0' % (tuple(context),))
            return np.full(self.vocab_size, 1.0 / self.vocab_size)
        total = self.context_totals[tuple(context)]
        return (successors + self.alpha) / (total + self.alpha * self.vocab_size)

    def prob(self, context, symbol):
        """Smoothed probability of ``symbol`` after ``context``."""
        successors = self.counts.get(tuple(context))
        if successors is None:
            if self.alpha == 0.0:
                raise UndefinedDistribution(
                    'context %r unseen and alpha = 0' % (tuple(context),))
            return 1.0 / self.vocab_size
        total = self.context_totals[tuple(context)]
        return ((successors[symbol] + self.alpha)
                / (total + self.alpha * self.vocab_size))

    def sequence_log_probs(self, chords):
        """
        Natural-log probability of each symbol of a song, in order.

        The sum of the returned array is the log-probability of the whole
        sequence under the model.
        """
        log_probs = np.empty(len(chords))
        context = (PAD,) * (self.order - 1)
        for position, symbol in enumerate(chords):
            log_probs[position] = np.log(self.prob(context, symbol))
            if self.order > 1:
                context = context[1:] + (symbol,)
        return log_probs

    # -- smoothing selection -------------------------------------------------

    def with_alpha(self, alpha):
        """A view of the same counts under a different pseudo-count."""
        model = NGramModel(self.order, alpha=alpha, vocab_size=self.vocab_size)
        model.counts = self.counts
        model.context_totals = self.context_totals
        return model

    # -- persistence ----------------------------------------------------------

    def save(self, path):
        """Serialise order, alpha and the sparse count table as JSON."""
        entries = [
            [list(context), {str(s): int(c) for s, c in enumerate(successors)
                             if c}]
            for context, successors in sorted(self.counts.items())
        ]
        record = {
            'format': FORMAT_NAME,
            'version': FORMAT_VERSION,
            'vocab_hash': vocabulary_hash(),
            'order': self.order,
            'alpha': self.alpha,
            'vocab_size': self.vocab_size,
            'counts': entries,
        }
        with open(path, 'w', encoding='utf-8') as handle:
            json.dump(record, handle, sort_keys=True)
            handle.write('\n')

    @classmethod
    def load(cls, path):
        with open(path, 'r', encoding='utf-8') as handle:
            record = json.load(handle)
        if record.get('format') != FORMAT_NAME:
            raise ValueError('%s is not an n-gram model file' % path)
        if record.get('vocab_hash') != vocabulary_hash():
            raise ValueError('%s was built against a different vocabulary'
                             % path)
        model = cls(record['order'], alpha=record['alpha'],
                    vocab_size=record['vocab_size'])
        for context, successors in record['counts']:
            row = np.zeros(model.vocab_size, dtype=np.int64)
            for symbol, count in successors.items():
                row[int(symbol)] = count
            model.counts[tuple(context)] = row
        model.context_totals = {
            context: int(row.sum()) for context, row in model.counts.items()
        }
        return model


def fit_ngram(sequences, order, alpha=0.0):
    """Convenience constructor: a fitted NGramModel."""
    return NGramModel(order, alpha=alpha).fit(sequences)


def average_log_prob(model, sequences):
    """Per-symbol mean log-probability of ``sequences`` under ``model``."""
    total, count = 0.0, 0
    for sequence in sequences:
        log_probs = model.sequence_log_probs(sequence.chords)
        total += float(log_probs.sum())
        count += len(log_probs)
    if count == 0:
        raise ValueError('no symbols to score')
    return total / count


def tune_alpha(model, validation_sequences, grid=DEFAULT_ALPHA_GRID):
    """
    Choose the pseudo-count that maximises the average log-probability of
    the validation sequences.  Ties break toward the smaller value.

    Returns
    -------
    (best_alpha, scores) : (float, dict)
        The winning value and the score of every grid point.
    """
    scores = {}
    best_alpha, best_score = None, -np.inf
    for alpha in sorted(grid):
        candidate = model.with_alpha(alpha)
        score = average_log_prob(candidate, validation_sequences)
        scores[alpha] = score
        if score > best_score:
            best_alpha, best_score = alpha, score
    return best_alpha, scores
