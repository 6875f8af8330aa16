# encoding: utf-8
"""
Recurrent chord language models, implemented directly on numpy.

The input at step k is the embedding of the previous chord (the start pad
for k = 1); stacked recurrent layers (simple tanh cells, LSTM or GRU)
transform it and a softmax output layer yields the distribution over the
next chord class.  With skip connections enabled, every hidden layer also
receives the embedded input and the output layer sees the states of all
hidden layers.

Gradients are exact: full backpropagation through time over the whole
sequence, no truncation.  Training uses ADAM on mini-batches of songs,
early stopping on held-out average log-probability, and supports exact
checkpoint/resume (parameters, optimiser moments and RNG state are all
persisted), which the hyper-parameter search relies on.

Everything runs in float64 for reproducibility and easy gradient checking.
"""

import json
import time
from dataclasses import dataclass, field, replace

import numpy as np

from .chords import PAD, VOCAB_SIZE, vocabulary_hash
from .embeddings import (EmbeddingMatrix, TABLE_ROWS, one_hot_embedding,
                         train_skipgram)
from .utils import derive_rng, derive_seed


CELL_KINDS = ('simple', 'lstm', 'gru')
EMBEDDING_KINDS = ('one-hot', 'learned', 'skipgram')

# gate blocks per cell: lstm rows are [input, forget, candidate, output],
# gru rows are [reset, update, candidate]
_GATE_MULTIPLIER = {'simple': 1, 'lstm': 4, 'gru': 3}

GRADIENT_CLIP_NORM = 5.0

CHECKPOINT_FORMAT = 'chordlm-rnn'
CHECKPOINT_VERSION = 1


class NonFiniteActivation(FloatingPointError):
    """The forward pass produced inf/nan activations."""


class NonFiniteGradient(FloatingPointError):
    """A gradient tensor became inf/nan; the message names the tensor."""


class DivergedRun(RuntimeError):
    """Training aborted because the numerics blew up."""


class MissingCheckpoint(RuntimeError):
    """Fine-tuning requested without a stored best checkpoint."""


@dataclass
class NeuralConfig:
    """Architecture and training settings of one model."""

    cell: str
    num_layers: int = 1
    hidden_size: int = 128
    embedding: str = 'one-hot'
    embedding_dim: int = VOCAB_SIZE
    skip_connections: bool = False
    learning_rate: float = 0.001
    batch_size: int = 4
    patience: int = 15
    max_epochs: int = 1000
    seed: int = 0

    def __post_init__(self):
        if self.cell not in CELL_KINDS:
            raise ValueError('unknown cell kind: %r' % self.cell)
        if self.embedding not in EMBEDDING_KINDS:
            raise ValueError('unknown embedding kind: %r' % self.embedding)
        if self.embedding == 'one-hot':
            self.embedding_dim = VOCAB_SIZE
        if self.learning_rate <= 0:
            raise ValueError('learning rate must be positive')

    def to_dict(self):
        return {
            'cell': self.cell, 'num_layers': self.num_layers,
            'hidden_size': self.hidden_size, 'embedding': self.embedding,
            'embedding_dim': self.embedding_dim,
            'skip_connections': self.skip_connections,
            'learning_rate': self.learning_rate,
            'batch_size': self.batch_size, 'patience': self.patience,
            'max_epochs': self.max_epochs, 'seed': self.seed,
        }

    @classmethod
    def from_dict(cls, record):
        return cls(**record)


@dataclass
class TrainReport:
    """Per-epoch training curve and the stopping outcome of one run."""

    train_losses: list
    val_scores: list
    best_epoch: int
    best_score: float
    stopping_reason: str
    epoch_seconds: list = field(default_factory=list)


def make_batch(sequences):
    """
    Pack chord tuples into padded input/target/mask arrays.

    Inputs at step k hold the previous symbol (pad at k = 0 and beyond a
    song's end); targets hold the symbol to predict; masked steps carry
    zero weight in loss and gradients.
    """
    chords = [tuple(getattr(s, 'chords', s)) for s in sequences]
    batch = len(chords)
    steps = max(len(c) for c in chords)
    inputs = np.full((batch, steps), PAD, dtype=np.intp)
    targets = np.zeros((batch, steps), dtype=np.intp)
    mask = np.zeros((batch, steps))
    for row, song in enumerate(chords):
        length = len(song)
        inputs[row, 1:length] = song[:-1]
        targets[row, :length] = song
        mask[row, :length] = 1.0
    return inputs, targets, mask


def _softmax(logits):
    shifted = logits - logits.max(axis=-1, keepdims=True)
    exp = np.exp(shifted)
    return exp / exp.sum(axis=-1, keepdims=True)


def _sigmoid(x):
    return 1.0 / (1.0 + np.exp(-x))


def cross_entropy(prob_rows, chords):
    """Mean over steps of -ln(row_k[y_k]); the training criterion."""
    rows = np.asarray(prob_rows)
    picked = rows[np.arange(len(chords)), list(chords)]
    return float(-np.log(picked).mean())


class RecurrentLM:
    """A stack of recurrent layers plus a softmax output over 25 classes."""

    def __init__(self, config, embedding_table=None, params=None):
        self.config = config
        self.hidden_size = config.hidden_size
        self.num_layers = config.num_layers
        self.gates = _GATE_MULTIPLIER[config.cell]

        if config.embedding == 'one-hot':
            self.fixed_table = one_hot_embedding().table
        elif config.embedding == 'skipgram':
            if embedding_table is None:
                raise ValueError('skipgram embedding requires a table')
            table = getattr(embedding_table, 'table', embedding_table)
            if table.shape != (TABLE_ROWS, config.embedding_dim):
                raise ValueError('embedding table shape %s does not match '
                                 'embedding_dim %d'
                                 % (table.shape, config.embedding_dim))
            self.fixed_table = np.array(table, dtype=float)
        else:
            self.fixed_table = None

        self.params = params if params is not None else self._init_params()

    # -- construction ---------------------------------------------------------

    def _layer_input_dim(self, layer):
        embed = self.config.embedding_dim
        if layer == 0:
            return embed
        if self.config.skip_connections:
            return self.hidden_size + embed
        return self.hidden_size

    def _output_input_dim(self):
        if self.config.skip_connections:
            return self.num_layers * self.hidden_size
        return self.hidden_size

    def _init_params(self):
        rng = derive_rng(self.config.seed, 'init')
        hidden, gates = self.hidden_size, self.gates

        def uniform(shape):
            bound = 1.0 / np.sqrt(shape[1])
            return rng.uniform(-bound, bound, size=shape)

        params = {}
        for layer in range(self.num_layers):
            in_dim = self._layer_input_dim(layer)
            params['layer%d.w_in' % layer] = uniform((gates * hidden, in_dim))
            params['layer%d.w_rec' % layer] = uniform((gates * hidden, hidden))
            bias = np.zeros(gates * hidden)
            if self.config.cell == 'lstm':
                bias[hidden:2 * hidden] = 1.0  # open forget gates initially
            params['layer%d.bias' % layer] = bias
        params['output.weight'] = uniform((VOCAB_SIZE,
                                           self._output_input_dim()))
        params['output.bias'] = np.zeros(VOCAB_SIZE)
        if self.config.embedding == 'learned':
            dim = self.config.embedding_dim
            params['embedding'] = rng.uniform(
                -1.0 / np.sqrt(dim), 1.0 / np.sqrt(dim),
                size=(TABLE_ROWS, dim))
        return params

    def embedding_table(self):
        if self.config.embedding == 'learned':
            return self.params['embedding']
        return self.fixed_table

    # -- forward --------------------------------------------------------------

    def forward_batch(self, inputs, want_cache=False):
        """
        Probabilities for a batch of input-token arrays.

        Parameters
        ----------
        inputs : (batch, steps) int array
            Previous-symbol tokens (pad where no symbol exists).
        want_cache : bool
            Keep the intermediate activations needed for the backward pass.

        Returns
        -------
        probs : (batch, steps, 25) array
        cache : dict or None
        """
        batch, steps = inputs.shape
        hidden = self.hidden_size
        embedded = self.embedding_table()[inputs]        # (B, K, E)

        layer_caches = []
        layer_states = []
        current = embedded
        for layer in range(self.num_layers):
            if layer > 0 and self.config.skip_connections:
                current = np.concatenate([current, embedded], axis=2)
            states, cache = self._run_layer(layer, current)
            layer_caches.append(cache)
            layer_states.append(states)
            current = states[:, 1:]                      # (B, K, H)

        if self.config.skip_connections and self.num_layers > 1:
            output_input = np.concatenate(
                [states[:, 1:] for states in layer_states], axis=2)
        else:
            output_input = layer_states[-1][:, 1:]

        logits = (output_input.reshape(batch * steps, -1)
                  @ self.params['output.weight'].T
                  + self.params['output.bias']).reshape(batch, steps,
                                                        VOCAB_SIZE)
        if not np.isfinite(logits).all():
            raise NonFiniteActivation('non-finite output logits')
        probs = _softmax(logits)

        if not want_cache:
            return probs, None
        cache = {
            'inputs': inputs, 'embedded': embedded,
            'layers': layer_caches, 'states': layer_states,
            'output_input': output_input, 'probs': probs,
        }
        return probs, cache

    def _run_layer(self, layer, layer_input):
        """One recurrent layer over the whole batch; returns states+cache."""
        batch, steps, _ = layer_input.shape
        hidden = self.hidden_size
        w_in = self.params['layer%d.w_in' % layer]
        w_rec = self.params['layer%d.w_rec' % layer]
        bias = self.params['layer%d.bias' % layer]

        # the input projection has no recurrent dependency: do it in one go
        pre = (layer_input.reshape(batch * steps, -1) @ w_in.T
               + bias).reshape(batch, steps, -1)

        states = np.zeros((batch, steps + 1, hidden))
        cell = self.config.cell
        cache = {'input': layer_input}

        if cell == 'simple':
            for k in range(steps):
                states[:, k + 1] = np.tanh(pre[:, k]
                                           + states[:, k] @ w_rec.T)
            cache['h'] = states

        elif cell == 'lstm':
            gate_acts = np.empty((batch, steps, 4 * hidden))
            cells = np.zeros((batch, steps + 1, hidden))
            tanh_cells = np.empty((batch, steps, hidden))
            for k in range(steps):
                a = pre[:, k] + states[:, k] @ w_rec.T
                in_gate = _sigmoid(a[:, :hidden])
                forget = _sigmoid(a[:, hidden:2 * hidden])
                candidate = np.tanh(a[:, 2 * hidden:3 * hidden])
                out_gate = _sigmoid(a[:, 3 * hidden:])
                cells[:, k + 1] = forget * cells[:, k] + in_gate * candidate
                tanh_cells[:, k] = np.tanh(cells[:, k + 1])
                states[:, k + 1] = out_gate * tanh_cells[:, k]
                gate_acts[:, k, :hidden] = in_gate
                gate_acts[:, k, hidden:2 * hidden] = forget
                gate_acts[:, k, 2 * hidden:3 * hidden] = candidate
                gate_acts[:, k, 3 * hidden:] = out_gate
            cache.update(h=states, gates=gate_acts, c=cells, tc=tanh_cells)

        else:  # gru
            w_rec_rz = w_rec[:2 * hidden]
            w_rec_n = w_rec[2 * hidden:]
            gate_acts = np.empty((batch, steps, 3 * hidden))
            reset_h = np.empty((batch, steps, hidden))
            for k in range(steps):
                h_prev = states[:, k]
                a_rz = pre[:, k, :2 * hidden] + h_prev @ w_rec_rz.T
                reset = _sigmoid(a_rz[:, :hidden])
                update = _sigmoid(a_rz[:, hidden:])
                rh = reset * h_prev
                candidate = np.tanh(pre[:, k, 2 * hidden:] + rh @ w_rec_n.T)
                states[:, k + 1] = (update * h_prev
                                    + (1.0 - update) * candidate)
                gate_acts[:, k, :hidden] = reset
                gate_acts[:, k, hidden:2 * hidden] = update
                gate_acts[:, k, 2 * hidden:] = candidate
                reset_h[:, k] = rh
            cache.update(h=states, gates=gate_acts, rh=reset_h)

        if not np.isfinite(states).all():
            raise NonFiniteActivation('non-finite state in layer %d' % layer)
        return states, cache

    # -- loss and gradients -----------------------------------------------------

    def loss_and_grads(self, inputs, targets, mask):
        """
        Masked mean cross-entropy and its exact gradients.

        Masked steps contribute zero loss and exactly zero gradient; the
        divisor is the number of unmasked steps in the batch.
        """
        probs, cache = self.forward_batch(inputs, want_cache=True)
        batch, steps = targets.shape
        effective = mask.sum()
        rows = np.arange(batch)[:, None]
        cols = np.arange(steps)[None, :]
        if effective == 0:
            return 0.0, {name: np.zeros_like(p)
                         for name, p in self.params.items()}

        picked = probs[rows, cols, targets]
        loss = float(-(np.log(picked) * mask).sum() / effective)

        dlogits = probs.copy()
        dlogits[rows, cols, targets] -= 1.0
        dlogits *= (mask / effective)[:, :, None]

        grads = self._backward(cache, dlogits)
        for name, grad in grads.items():
            if not np.isfinite(grad).all():
                raise NonFiniteGradient('non-finite gradient in %s' % name)
        return loss, grads

    def _backward(self, cache, dlogits):
        batch, steps, _ = dlogits.shape
        hidden = self.hidden_size
        flat_dlogits = dlogits.reshape(batch * steps, VOCAB_SIZE)
        output_input = cache['output_input']

        grads = {
            'output.weight': flat_dlogits.T
                             @ output_input.reshape(batch * steps, -1),
            'output.bias': flat_dlogits.sum(axis=0),
        }
        d_output_input = (flat_dlogits @ self.params['output.weight']
                          ).reshape(batch, steps, -1)

        # gradient w.r.t. each layer's state sequence, from the output layer
        dh_layers = [np.zeros((batch, steps, hidden))
                     for _ in range(self.num_layers)]
        if self.config.skip_connections and self.num_layers > 1:
            for layer in range(self.num_layers):
                dh_layers[layer] += d_output_input[
                    :, :, layer * hidden:(layer + 1) * hidden]
        else:
            dh_layers[-1] += d_output_input

        d_embedded = np.zeros_like(cache['embedded'])
        for layer in range(self.num_layers - 1, -1, -1):
            d_input = self._backward_layer(layer, cache['layers'][layer],
                                           dh_layers[layer], grads)
            if layer == 0:
                d_embedded += d_input
            else:
                dh_layers[layer - 1] += d_input[:, :, :hidden]
                if self.config.skip_connections:
                    d_embedded += d_input[:, :, hidden:]

        if self.config.embedding == 'learned':
            d_table = np.zeros_like(self.params['embedding'])
            np.add.at(d_table, cache['inputs'].ravel(),
                      d_embedded.reshape(-1, d_embedded.shape[2]))
            grads['embedding'] = d_table
        for name in self.params:
            if name not in grads:
                grads[name] = np.zeros_like(self.params[name])
        return grads

    def _backward_layer(self, layer, cache, dh_seq, grads):
        """BPTT through one layer; fills this layer's weight grads."""
        batch, steps, _ = dh_seq.shape
        hidden = self.hidden_size
        cell = self.config.cell
        w_rec = self.params['layer%d.w_rec' % layer]
        w_in = self.params['layer%d.w_in' % layer]
        states = cache['h']

        gate_grads = np.zeros((batch, steps, self.gates * hidden))
        dh_next = np.zeros((batch, hidden))

        if cell == 'simple':
            for k in range(steps - 1, -1, -1):
                dh = dh_seq[:, k] + dh_next
                da = dh * (1.0 - states[:, k + 1] ** 2)
                gate_grads[:, k] = da
                dh_next = da @ w_rec
            recurrent_inputs = states[:, :-1]

        elif cell == 'lstm':
            gates, cells, tanh_cells = (cache['gates'], cache['c'],
                                        cache['tc'])
            dc_next = np.zeros((batch, hidden))
            for k in range(steps - 1, -1, -1):
                in_gate = gates[:, k, :hidden]
                forget = gates[:, k, hidden:2 * hidden]
                candidate = gates[:, k, 2 * hidden:3 * hidden]
                out_gate = gates[:, k, 3 * hidden:]
                dh = dh_seq[:, k] + dh_next
                d_out = dh * tanh_cells[:, k]
                dc = dc_next + dh * out_gate * (1.0 - tanh_cells[:, k] ** 2)
                da = gate_grads[:, k]
                da[:, :hidden] = dc * candidate * in_gate * (1.0 - in_gate)
                da[:, hidden:2 * hidden] = (dc * cells[:, k]
                                            * forget * (1.0 - forget))
                da[:, 2 * hidden:3 * hidden] = (dc * in_gate
                                                * (1.0 - candidate ** 2))
                da[:, 3 * hidden:] = d_out * out_gate * (1.0 - out_gate)
                dc_next = dc * forget
                dh_next = da @ w_rec
            recurrent_inputs = states[:, :-1]

        else:  # gru
            gates, reset_h = cache['gates'], cache['rh']
            w_rec_rz = w_rec[:2 * hidden]
            w_rec_n = w_rec[2 * hidden:]
            for k in range(steps - 1, -1, -1):
                reset = gates[:, k, :hidden]
                update = gates[:, k, hidden:2 * hidden]
                candidate = gates[:, k, 2 * hidden:]
                h_prev = states[:, k]
                dh = dh_seq[:, k] + dh_next
                d_update = dh * (h_prev - candidate)
                d_cand = dh * (1.0 - update)
                dh_next = dh * update
                da_n = d_cand * (1.0 - candidate ** 2)
                d_reset_h = da_n @ w_rec_n
                d_reset = d_reset_h * h_prev
                dh_next = dh_next + d_reset_h * reset
                da_rz = np.concatenate(
                    [d_reset * reset * (1.0 - reset),
                     d_update * update * (1.0 - update)], axis=1)
                dh_next = dh_next + da_rz @ w_rec_rz
                gate_grads[:, k, :2 * hidden] = da_rz
                gate_grads[:, k, 2 * hidden:] = da_n

        flat_gate_grads = gate_grads.reshape(batch * steps, -1)
        layer_input = cache['input']
        if cell == 'gru':
            # reset/update gates see h_prev, the candidate sees reset * h_prev
            h_prev_flat = cache['h'][:, :-1].reshape(batch * steps, hidden)
            rh_flat = cache['rh'].reshape(batch * steps, hidden)
            d_w_rec = np.empty_like(w_rec)
            d_w_rec[:2 * hidden] = (flat_gate_grads[:, :2 * hidden].T
                                    @ h_prev_flat)
            d_w_rec[2 * hidden:] = (flat_gate_grads[:, 2 * hidden:].T
                                    @ rh_flat)
        else:
            d_w_rec = (flat_gate_grads.T
                       @ recurrent_inputs.reshape(batch * steps, hidden))

        grads['layer%d.w_rec' % layer] = d_w_rec
        grads['layer%d.bias' % layer] = flat_gate_grads.sum(axis=0)
        grads['layer%d.w_in' % layer] = (
            flat_gate_grads.T @ layer_input.reshape(batch * steps, -1))
        return (flat_gate_grads @ w_in).reshape(batch, steps, -1)

    # -- inference ----------------------------------------------------------------

    def predict_rows(self, chords):
        """Per-step probability rows (len(chords), 25) for one song."""
        inputs, _, _ = make_batch([chords])
        probs, _ = self.forward_batch(inputs)
        return probs[0]

    def predict_log_probs(self, chords):
        """ln P(y_k | y_1..y_{k-1}) for each symbol of one song."""
        rows = self.predict_rows(chords)
        return np.log(rows[np.arange(len(chords)), list(chords)])

    @classmethod
    def from_checkpoint(cls, path):
        """
        Load a model from a training checkpoint for inference.

        Uses the best-validation parameters when present, otherwise the
        final ones.
        """
        with np.load(path, allow_pickle=False) as data:
            meta = json.loads(str(data['__meta__']))
            if meta.get('format') != CHECKPOINT_FORMAT:
                raise ValueError('%s is not a model checkpoint' % path)
            if meta.get('vocab_hash') != vocabulary_hash():
                raise ValueError('%s was built against a different '
                                 'vocabulary' % path)
            arrays = {key: data[key] for key in data.files
                      if key != '__meta__'}
        config = NeuralConfig.from_dict(meta['config'])
        prefix = 'best/' if any(k.startswith('best/') for k in arrays) \
            else 'param/'
        params = {name[len(prefix):]: value
                  for name, value in arrays.items()
                  if name.startswith(prefix)}
        return cls(config, embedding_table=arrays.get('fixed_table'),
                   params=params)

    def corpus_log_prob(self, sequences, batch_size=8):
        """Summed log-probability and symbol count over many songs."""
        total, symbols = 0.0, 0
        for start in range(0, len(sequences), batch_size):
            group = sequences[start:start + batch_size]
            inputs, targets, mask = make_batch(group)
            probs, _ = self.forward_batch(inputs)
            batch, steps = targets.shape
            picked = probs[np.arange(batch)[:, None],
                           np.arange(steps)[None, :], targets]
            total += float((np.log(picked) * mask).sum())
            symbols += int(mask.sum())
        return total, symbols


class AdamOptimizer:
    """ADAM with bias-corrected moments; moments persist across steps."""

    def __init__(self, learning_rate, beta1=0.9, beta2=0.999, epsilon=1e-8):
        self.learning_rate = learning_rate
        self.beta1 = beta1
        self.beta2 = beta2
        self.epsilon = epsilon
        self.step_count = 0
        self.m = {}
        self.v = {}

    def step(self, params, grads):
        """Update ``params`` in place from ``grads``."""
        self.step_count += 1
        correction1 = 1.0 - self.beta1 ** self.step_count
        correction2 = 1.0 - self.beta2 ** self.step_count
        for name, grad in grads.items():
            if name not in self.m:
                self.m[name] = np.zeros_like(grad)
                self.v[name] = np.zeros_like(grad)
            m, v = self.m[name], self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * grad
            v *= self.beta2
            v += (1.0 - self.beta2) * grad * grad
            params[name] -= (self.learning_rate * (m / correction1)
                             / (np.sqrt(v / correction2) + self.epsilon))


def clip_gradients(grads, max_norm=GRADIENT_CLIP_NORM):
    """Scale all gradients so their global L2 norm is at most max_norm."""
    total = np.sqrt(sum(float((g * g).sum()) for g in grads.values()))
    if total > max_norm:
        scale = max_norm / total
        for grad in grads.values():
            grad *= scale
    return total


class Trainer:
    """
    Owns one training run: model, optimiser, RNG and stopping state.

    The epoch loop can be driven in slices (``train_until``) so a search
    scheduler can grow a run's budget; extending a run is bit-identical to
    having trained it in one go.
    """

    def __init__(self, config, train_sequences, val_sequences,
                 embedding_table=None):
        if (config.embedding == 'skipgram' and embedding_table is None):
            embedding_table = train_skipgram(
                train_sequences, config.embedding_dim,
                seed=derive_seed(config.seed, 'skipgram'))
        self.config = config
        self.train_sequences = list(train_sequences)
        self.val_sequences = list(val_sequences)
        self.model = RecurrentLM(config, embedding_table=embedding_table)
        self.optimizer = AdamOptimizer(config.learning_rate)
        self.rng = derive_rng(config.seed, 'epochs')
        self.epoch = 0
        self.best_score = -np.inf
        self.best_epoch = 0
        self.best_params = None
        self.best_moments = None
        self.epochs_without_improvement = 0
        self.train_losses = []
        self.val_scores = []
        self.epoch_seconds = []
        self.stopping_reason = None

    # -- epoch loop ------------------------------------------------------------

    def _one_epoch(self):
        started = time.perf_counter()
        order = self.rng.permutation(len(self.train_sequences))
        total_loss, total_symbols = 0.0, 0
        size = self.config.batch_size
        try:
            for start in range(0, len(order), size):
                group = [self.train_sequences[i]
                         for i in order[start:start + size]]
                inputs, targets, mask = make_batch(group)
                loss, grads = self.model.loss_and_grads(inputs, targets,
                                                        mask)
                clip_gradients(grads)
                self.optimizer.step(self.model.params, grads)
                steps = mask.sum()
                total_loss += loss * steps
                total_symbols += int(steps)
        except (NonFiniteActivation, NonFiniteGradient) as err:
            raise DivergedRun('epoch %d: %s' % (self.epoch + 1, err)) from err

        self.epoch += 1
        self.train_losses.append(total_loss / max(total_symbols, 1))

        log_prob, symbols = self.model.corpus_log_prob(self.val_sequences)
        score = log_prob / symbols
        self.val_scores.append(score)
        self.epoch_seconds.append(time.perf_counter() - started)

        if score > self.best_score:
            self.best_score = score
            self.best_epoch = self.epoch
            self.best_params = {k: v.copy()
                                for k, v in self.model.params.items()}
            self.best_moments = {
                'step_count': self.optimizer.step_count,
                'm': {k: v.copy() for k, v in self.optimizer.m.items()},
                'v': {k: v.copy() for k, v in self.optimizer.v.items()},
            }
            self.epochs_without_improvement = 0
        else:
            self.epochs_without_improvement += 1

    def _should_stop(self):
        if self.epochs_without_improvement >= self.config.patience:
            self.stopping_reason = 'patience'
            return True
        if self.epoch >= self.config.max_epochs:
            self.stopping_reason = 'epoch-cap'
            return True
        return False

    def train_until(self, total_epochs):
        """Advance the run to ``total_epochs`` epochs (or an earlier stop).

        A run halted only by the budget can be extended later and behaves
        exactly as if it had been trained in one go.
        """
        while self.stopping_reason is None and self.epoch < total_epochs:
            self._one_epoch()
            if self._should_stop():
                break
        return self.report()

    def train(self):
        """Run to the configured stopping rule (patience or epoch cap)."""
        return self.train_until(self.config.max_epochs)

    def report(self):
        return TrainReport(
            train_losses=list(self.train_losses),
            val_scores=list(self.val_scores),
            best_epoch=self.best_epoch,
            best_score=float(self.best_score),
            stopping_reason=self.stopping_reason or 'budget',
            epoch_seconds=list(self.epoch_seconds),
        )

    def best_model(self):
        """The model at its best validation epoch."""
        if self.best_params is None:
            raise MissingCheckpoint('no epoch has completed yet')
        return RecurrentLM(self.config,
                           embedding_table=self.model.fixed_table,
                           params={k: v.copy()
                                   for k, v in self.best_params.items()})

    # -- persistence -------------------------------------------------------------

    def save(self, path):
        """Persist the full run state; reloading resumes bit-exactly."""
        arrays = {}
        for name, value in self.model.params.items():
            arrays['param/' + name] = value
        for name, value in self.optimizer.m.items():
            arrays['adam_m/' + name] = value
            arrays['adam_v/' + name] = self.optimizer.v[name]
        if self.best_params is not None:
            for name, value in self.best_params.items():
                arrays['best/' + name] = value
            for name, value in self.best_moments['m'].items():
                arrays['best_m/' + name] = value
                arrays['best_v/' + name] = self.best_moments['v'][name]
        if self.model.fixed_table is not None:
            arrays['fixed_table'] = self.model.fixed_table
        meta = {
            'format': CHECKPOINT_FORMAT,
            'version': CHECKPOINT_VERSION,
            'vocab_hash': vocabulary_hash(),
            'config': self.config.to_dict(),
            'epoch': self.epoch,
            'best_score': None if self.best_params is None
                          else float(self.best_score),
            'best_epoch': self.best_epoch,
            'best_step_count': None if self.best_moments is None
                               else self.best_moments['step_count'],
            'epochs_without_improvement': self.epochs_without_improvement,
            'step_count': self.optimizer.step_count,
            'rng_state': self.rng.bit_generator.state,
            'train_losses': self.train_losses,
            'val_scores': self.val_scores,
            'epoch_seconds': self.epoch_seconds,
            'stopping_reason': self.stopping_reason,
        }
        with open(path, 'wb') as handle:
            np.savez(handle, __meta__=json.dumps(meta), **arrays)

    @classmethod
    def resume(cls, path, train_sequences, val_sequences):
        """Rebuild a Trainer from a checkpoint file."""
        with np.load(path, allow_pickle=False) as data:
            meta = json.loads(str(data['__meta__']))
            if meta.get('format') != CHECKPOINT_FORMAT:
                raise ValueError('%s is not a model checkpoint' % path)
            if meta.get('vocab_hash') != vocabulary_hash():
                raise ValueError('%s was built against a different '
                                 'vocabulary' % path)
            arrays = {key: data[key] for key in data.files
                      if key != '__meta__'}

        config = NeuralConfig.from_dict(meta['config'])
        trainer = cls.__new__(cls)
        trainer.config = config
        trainer.train_sequences = list(train_sequences)
        trainer.val_sequences = list(val_sequences)
        fixed = arrays.get('fixed_table')
        params = {name[len('param/'):]: value
                  for name, value in arrays.items()
                  if name.startswith('param/')}
        trainer.model = RecurrentLM(config, embedding_table=fixed,
                                    params=params)
        trainer.optimizer = AdamOptimizer(config.learning_rate)
        trainer.optimizer.step_count = meta['step_count']
        trainer.optimizer.m = {name[len('adam_m/'):]: value
                               for name, value in arrays.items()
                               if name.startswith('adam_m/')}
        trainer.optimizer.v = {name[len('adam_v/'):]: value
                               for name, value in arrays.items()
                               if name.startswith('adam_v/')}
        trainer.rng = np.random.default_rng()
        trainer.rng.bit_generator.state = meta['rng_state']
        trainer.epoch = meta['epoch']
        trainer.best_epoch = meta['best_epoch']
        trainer.best_score = (-np.inf if meta['best_score'] is None
                              else meta['best_score'])
        if any(name.startswith('best/') for name in arrays):
            trainer.best_params = {name[len('best/'):]: value
                                   for name, value in arrays.items()
                                   if name.startswith('best/')}
            trainer.best_moments = {
                'step_count': meta['best_step_count'],
                'm': {name[len('best_m/'):]: value
                      for name, value in arrays.items()
                      if name.startswith('best_m/')},
                'v': {name[len('best_v/'):]: value
                      for name, value in arrays.items()
                      if name.startswith('best_v/')},
            }
        else:
            trainer.best_params = None
            trainer.best_moments = None
        trainer.epochs_without_improvement = (
            meta['epochs_without_improvement'])
        trainer.train_losses = list(meta['train_losses'])
        trainer.val_scores = list(meta['val_scores'])
        trainer.epoch_seconds = list(meta['epoch_seconds'])
        trainer.stopping_reason = meta['stopping_reason']
        return trainer


def train(config, train_sequences, val_sequences, embedding_table=None):
    """
    Train a model to its stopping rule.

    Returns
    -------
    (trainer, report) : (Trainer, TrainReport)
        The trainer keeps the best checkpoint for evaluation/fine-tuning.
    """
    trainer = Trainer(config, train_sequences, val_sequences,
                      embedding_table=embedding_table)
    report = trainer.train()
    return trainer, report


def fine_tune(trainer):
    """
    Resume from the best checkpoint at a tenth of the learning rate.

    A fresh patience window applies; the result keeps whichever of the
    original and fine-tuned checkpoints scores better on validation.

    Returns
    -------
    (model, score, report) : (RecurrentLM, float, TrainReport)
    """
    if trainer.best_params is None:
        raise MissingCheckpoint('train before fine-tuning')
    base_config = trainer.config
    tuned_config = replace(base_config,
                           learning_rate=base_config.learning_rate / 10.0)

    resumed = Trainer(tuned_config, trainer.train_sequences,
                      trainer.val_sequences,
                      embedding_table=trainer.model.fixed_table)
    resumed.model.params = {k: v.copy()
                            for k, v in trainer.best_params.items()}
    resumed.optimizer.step_count = trainer.best_moments['step_count']
    resumed.optimizer.m = {k: v.copy()
                           for k, v in trainer.best_moments['m'].items()}
    resumed.optimizer.v = {k: v.copy()
                           for k, v in trainer.best_moments['v'].items()}
    resumed.rng = derive_rng(base_config.seed, 'finetune')
    resumed.train()

    if resumed.best_score > trainer.best_score:
        return resumed.best_model(), float(resumed.best_score), \
            resumed.report()
    return trainer.best_model(), float(trainer.best_score), resumed.report()
