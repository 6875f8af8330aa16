# encoding: utf-8
"""
Chord embeddings: the vector inputs of the recurrent models.

Three kinds are supported.  ``one-hot`` uses the 25-dimensional standard
basis (pad row all zeros).  ``learned`` starts random and is trained
jointly with the language model.  ``skipgram`` is pre-trained here with a
word2vec-style skip-gram objective and negative sampling, then kept fixed
during language-model training.
"""

from dataclasses import dataclass, field

import numpy as np

from .chords import CLASS_NAMES, PAD, VOCAB_SIZE

# the table has one row per class plus one for the start pad
TABLE_ROWS = VOCAB_SIZE + 1

_ROW_NAMES = CLASS_NAMES + ('<pad>',)


class InsufficientData(ValueError):
    """Too few training symbols to fit an embedding."""


@dataclass
class EmbeddingMatrix:
    """A (26, dim) table of row vectors: 25 chord classes plus the pad."""

    kind: str
    dim: int
    table: np.ndarray
    loss_history: list = field(default_factory=list)

    def lookup(self, index):
        """Row vector of a class index (or the pad); read-only."""
        return self.table[index]


def one_hot_embedding():
    """The identity embedding: class i -> e_i, pad -> zero vector."""
    table = np.zeros((TABLE_ROWS, VOCAB_SIZE))
    table[:VOCAB_SIZE] = np.eye(VOCAB_SIZE)
    return EmbeddingMatrix(kind='one-hot', dim=VOCAB_SIZE, table=table)


def random_embedding(dim, rng):
    """Random init for a jointly-learned embedding, pad row included."""
    scale = 1.0 / np.sqrt(dim)
    table = rng.uniform(-scale, scale, size=(TABLE_ROWS, dim))
    return EmbeddingMatrix(kind='learned', dim=dim, table=table)


def _sigmoid(x):
    return 1.0 / (1.0 + np.exp(-x))


def train_skipgram(sequences, dim, window=4, negatives=5, epochs=50,
                   learning_rate=0.025, seed=0):
    """
    Train skip-gram chord embeddings with negative sampling.

    Every chord predicts its neighbours within ``window`` positions.  Each
    sequence is prepended with the start-pad token so the pad row receives
    training signal too.  Negative samples are drawn from the unigram
    distribution raised to 3/4.  The learning rate decays linearly over
    the run.  Deterministic for a fixed seed.

    Parameters
    ----------
    sequences : list
        ChordSequence objects (or plain index tuples).
    dim : int
        Embedding size; the search space samples from {4, 8, 16, 24}.
    window : int
        Context half-width, >= 1.
    negatives : int
        Negative samples per (centre, context) pair.
    epochs, learning_rate, seed :
        Training-loop settings.

    Returns
    -------
    EmbeddingMatrix
        kind='skipgram', with the per-epoch mean objective recorded in
        ``loss_history``.

    Raises
    ------
    InsufficientData
        If the corpus holds fewer than 10 symbols per vocabulary entry.
    """
    streams = [(PAD,) + tuple(getattr(s, 'chords', s)) for s in sequences]
    total_symbols = sum(len(t) - 1 for t in streams)
    if total_symbols < 10 * VOCAB_SIZE:
        raise InsufficientData(
            '%d symbols < %d required' % (total_symbols, 10 * VOCAB_SIZE))

    token_counts = np.zeros(TABLE_ROWS)
    for stream in streams:
        np.add.at(token_counts, np.asarray(stream), 1)
    noise = token_counts ** 0.75
    noise /= noise.sum()

    rng = np.random.default_rng(seed)
    vectors = rng.uniform(-0.5 / dim, 0.5 / dim, size=(TABLE_ROWS, dim))
    outputs = np.zeros((TABLE_ROWS, dim))

    pairs = [
        (stream[centre], stream[j])
        for stream in streams
        for centre in range(len(stream))
        for j in range(max(0, centre - window),
                       min(len(stream), centre + window + 1))
        if j != centre
    ]
    centres = np.array([p[0] for p in pairs])
    contexts = np.array([p[1] for p in pairs])
    total_steps = epochs * len(pairs)

    loss_history = []
    step = 0
    targets = np.empty(negatives + 1, dtype=np.intp)
    labels = np.zeros(negatives + 1)
    labels[0] = 1.0
    signs = 1.0 - 2.0 * labels
    for _ in range(epochs):
        negative_draws = rng.choice(TABLE_ROWS, size=(len(pairs), negatives),
                                    p=noise)
        epoch_loss = 0.0
        for pair_index in range(len(pairs)):
            centre = centres[pair_index]
            targets[0] = contexts[pair_index]
            targets[1:] = negative_draws[pair_index]
            lr = learning_rate * max(1e-3, 1.0 - step / total_steps)
            step += 1

            centre_vec = vectors[centre]
            rows = outputs[targets]
            scores = rows @ centre_vec
            residual = _sigmoid(scores) - labels
            # -log sigmoid(score) for the context, -log sigmoid(-score)
            # for the negatives, in a numerically stable form
            epoch_loss += np.logaddexp(0.0, signs * scores).sum()
            grad_centre = residual @ rows
            np.add.at(outputs, targets,
                      -lr * residual[:, None] * centre_vec[None, :])
            vectors[centre] = centre_vec - lr * grad_centre
        loss_history.append(epoch_loss / len(pairs))

    return EmbeddingMatrix(kind='skipgram', dim=dim, table=vectors,
                           loss_history=loss_history)


def save_embedding(path, matrix):
    """Text format: kind/dim line, class-name header row, one row per line."""
    with open(path, 'w', encoding='utf-8') as handle:
        handle.write('chordlm-embedding\t1\n')
        handle.write('%s\t%d\n' % (matrix.kind, matrix.dim))
        handle.write('\t'.join(_ROW_NAMES) + '\n')
        for row in matrix.table:
            handle.write('\t'.join(repr(float(v)) for v in row) + '\n')


def load_embedding(path):
    """Reload a saved embedding bit-exactly."""
    with open(path, 'r', encoding='utf-8') as handle:
        magic = handle.readline().strip().split('\t')
        if magic[0] != 'chordlm-embedding':
            raise ValueError('%s is not an embedding file' % path)
        kind, dim = handle.readline().strip().split('\t')
        header = handle.readline().strip().split('\t')
        if tuple(header) != _ROW_NAMES:
            raise ValueError('%s has an unexpected class header' % path)
        rows = [
            [float(v) for v in handle.readline().strip().split('\t')]
            for _ in range(TABLE_ROWS)
        ]
    return EmbeddingMatrix(kind=kind, dim=int(dim), table=np.array(rows))
