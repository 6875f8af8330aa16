# encoding: utf-8
"""
Random configuration sampling and Hyperband scheduling.

Configurations are drawn uniformly from the discrete search space (with
the learning-rate choices conditional on cell type and depth).  Hyperband
races them: each bracket starts many configurations on a small epoch
budget, and after every round keeps the best third (in general, 1/eta)
and multiplies the budget by eta.  Runs must be resumable — extending a
configuration's budget continues its training run rather than restarting.
"""

import hashlib
import json
import math
import os
import time
from dataclasses import dataclass, field

import numpy as np

from .rnn import NeuralConfig
from .utils import derive_rng


class ObjectiveFailure(RuntimeError):
    """A single training run failed; recorded, not fatal to the search."""


@dataclass
class SearchSpace:
    """The discrete hyper-parameter sample space."""

    embedding_kinds: tuple = ('one-hot', 'skipgram', 'learned')
    embedding_dims: tuple = (4, 8, 16, 24)
    layer_counts: tuple = (1, 2, 3, 4, 5)
    hidden_sizes: tuple = (128, 256, 512, 1024)
    skip_options: tuple = (False, True)
    # learning-rate choices depend on cell type and on network depth
    shallow_depth: int = 3
    rates: dict = field(default_factory=lambda: {
        'simple': {'shallow': (0.001, 0.0005), 'deep': (0.0005, 0.00025)},
        'lstm':   {'shallow': (0.001, 0.0005), 'deep': (0.0005, 0.00025)},
        'gru':    {'shallow': (0.005, 0.001),  'deep': (0.001, 0.0005)},
    })

    def learning_rates(self, cell, num_layers):
        depth = 'shallow' if num_layers <= self.shallow_depth else 'deep'
        return self.rates[cell][depth]

    def validates(self, config):
        """True if a NeuralConfig lies inside this space."""
        return (
            config.embedding in self.embedding_kinds
            and (config.embedding == 'one-hot'
                 or config.embedding_dim in self.embedding_dims)
            and config.num_layers in self.layer_counts
            and config.hidden_size in self.hidden_sizes
            and config.skip_connections in self.skip_options
            and config.learning_rate in
                self.learning_rates(config.cell, config.num_layers)
        )


def sample_config(space, cell, rng):
    """
    Draw one configuration uniformly from the space.

    The embedding dimension is only drawn for non-one-hot embeddings, and
    the learning-rate table matching the cell type and sampled depth is
    used.  Every config receives its own training seed from ``rng``.
    """
    def pick(options):
        return options[int(rng.integers(len(options)))]

    kind = pick(space.embedding_kinds)
    dim = 25 if kind == 'one-hot' else pick(space.embedding_dims)
    num_layers = pick(space.layer_counts)
    hidden = pick(space.hidden_sizes)
    skip = pick(space.skip_options)
    rate = pick(space.learning_rates(cell, num_layers))
    seed = int(rng.integers(2 ** 31))
    return NeuralConfig(cell=cell, num_layers=num_layers, hidden_size=hidden,
                        embedding=kind, embedding_dim=dim,
                        skip_connections=skip, learning_rate=rate, seed=seed)


def config_hash(config):
    """Deterministic short fingerprint of a configuration."""
    payload = json.dumps(config.to_dict(), sort_keys=True)
    return hashlib.sha256(payload.encode()).hexdigest()[:12]


# ---------------------------------------------------------------------------
# schedules
# ---------------------------------------------------------------------------

@dataclass
class Bracket:
    """One successive-halving bracket: round i races n_i configs for r_i."""

    index: int
    n_configs: int
    rounds: list  # [(n_i, r_i epochs), ...]


def successive_halving_rounds(n_configs, bracket_index, eta, max_resource):
    """The (survivors, epoch budget) table of one bracket."""
    rounds = []
    for i in range(bracket_index + 1):
        n_i = n_configs // eta ** i
        r_i = max(1, int(round(max_resource * eta ** (i - bracket_index))))
        if n_i < 1:
            break
        rounds.append((n_i, r_i))
    return rounds


def hyperband_brackets(eta=3, max_resource=81):
    """
    The closed-form Hyperband schedule.

    Brackets run from the most exploratory (s_max) down to plain full-budget
    evaluation (s = 0).  Bracket s starts ceil((s_max+1)/(s+1) * eta^s)
    configurations at max_resource / eta^s epochs.
    """
    s_max = int(math.floor(math.log(max_resource) / math.log(eta)))
    brackets = []
    for s in range(s_max, -1, -1):
        n = int(math.ceil((s_max + 1) * eta ** s / (s + 1)))
        brackets.append(Bracket(
            index=s, n_configs=n,
            rounds=successive_halving_rounds(n, s, eta, max_resource)))
    return brackets


def paper_scale_brackets(eta=3, max_resource=81, total_configs=128):
    """
    The closed-form schedule rescaled to a fixed configuration budget.

    A full Hyperband at (eta=3, R=81) samples 143 fresh configurations;
    the original study budgeted 128 per cell type.  This keeps the bracket
    structure and resource schedule but apportions ``total_configs``
    across brackets proportionally (largest-remainder rounding), so the
    default search samples exactly the budgeted number of configurations.
    """
    reference = hyperband_brackets(eta, max_resource)
    weights = np.array([b.n_configs for b in reference], dtype=float)
    quotas = total_configs * weights / weights.sum()
    sizes = np.floor(quotas).astype(int)
    remainders = quotas - sizes
    for position in np.argsort(-remainders)[:total_configs - sizes.sum()]:
        sizes[position] += 1
    brackets = []
    for bracket, n in zip(reference, sizes):
        if n < 1:
            continue
        brackets.append(Bracket(
            index=bracket.index, n_configs=int(n),
            rounds=successive_halving_rounds(int(n), bracket.index, eta,
                                             max_resource)))
    return brackets


# ---------------------------------------------------------------------------
# the search itself
# ---------------------------------------------------------------------------

def run_hyperband(space, cell, objective, eta=3, max_resource=81, seed=0,
                  total_configs=None, leaderboard_path=None):
    """
    Execute a Hyperband search.

    Parameters
    ----------
    space : SearchSpace
    cell : str
        'simple', 'lstm' or 'gru'; fixes the learning-rate table.
    objective : callable(config, epochs) -> float
        Validation score (average log-probability, higher is better) of a
        config trained for the given total epoch budget.  Must be
        resumable: a larger budget continues the earlier run.
    eta, max_resource : int
        Halving factor and maximum epochs per run.
    seed : int
        Drives config sampling and per-config training seeds.
    total_configs : int, optional
        Rescale the schedule to this many sampled configs (see
        :func:`paper_scale_brackets`); None runs the closed-form schedule.
    leaderboard_path : str, optional
        JSON Lines file appended with every (config, budget, score)
        evaluation; if it already exists, completed evaluations are reused
        so an interrupted search can resume.

    Returns
    -------
    (best_config, leaderboard) : (NeuralConfig or None, list of dict)
    """
    if total_configs is None:
        brackets = hyperband_brackets(eta, max_resource)
    else:
        brackets = paper_scale_brackets(eta, max_resource, total_configs)

    completed = {}
    if leaderboard_path and os.path.exists(leaderboard_path):
        for record in read_leaderboard(leaderboard_path):
            if record['status'] == 'ok':
                key = (record['config_hash'], record['budget'])
                completed[key] = record['score']

    rng = derive_rng(seed, 'hyperband', cell)
    leaderboard = []
    best_score, best_config = -np.inf, None

    def record_run(config, budget, score, status, error, elapsed, bracket,
                   round_index):
        entry = {
            'config': config.to_dict(), 'config_hash': config_hash(config),
            'budget': budget, 'score': None if score == -np.inf else score,
            'status': status, 'error': error, 'wall_clock': elapsed,
            'bracket': bracket, 'round': round_index,
        }
        leaderboard.append(entry)
        if leaderboard_path:
            with open(leaderboard_path, 'a', encoding='utf-8') as handle:
                handle.write(json.dumps(entry, sort_keys=True) + '\n')

    for bracket in brackets:
        configs = [sample_config(space, cell, rng)
                   for _ in range(bracket.n_configs)]
        current = configs
        for round_index, (n_i, budget) in enumerate(bracket.rounds):
            current = current[:n_i]
            scored = []
            for config in current:
                key = (config_hash(config), budget)
                if key in completed:
                    score = completed[key]
                    record_run(config, budget, score, 'cached', None, 0.0,
                               bracket.index, round_index)
                else:
                    started = time.perf_counter()
                    try:
                        score = float(objective(config, budget))
                        status, error = 'ok', None
                    except Exception as err:  # isolate the failed run
                        score = -np.inf
                        status = 'failed'
                        error = '%s: %s' % (type(err).__name__, err)
                    elapsed = time.perf_counter() - started
                    record_run(config, budget, score, status, error,
                               elapsed, bracket.index, round_index)
                    if status == 'ok':
                        completed[key] = score
                scored.append((score, config))
                if score > best_score:
                    best_score, best_config = score, config
            # keep the best floor(n_i / eta) configs, ties broken by hash
            keep = n_i // eta
            scored.sort(key=lambda pair: (-pair[0], config_hash(pair[1])))
            current = [config for _, config in scored[:keep]]
            if not current:
                break

    return best_config, leaderboard


def read_leaderboard(path):
    records = []
    with open(path, 'r', encoding='utf-8') as handle:
        for line in handle:
            line = line.strip()
            if line:
                records.append(json.loads(line))
    return records
