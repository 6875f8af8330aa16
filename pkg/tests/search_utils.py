# encoding: utf-8
"""A synthetic search objective with a known optimum, for scheduler tests."""

import math

import numpy as np

from chordlm.hyperband import config_hash
from chordlm.utils import derive_rng


def true_value(config):
    """Unimodal in (depth, width): best at 3 layers and 512 units."""
    width = math.log2(config.hidden_size / 128.0)
    return -((config.num_layers - 3) ** 2 / 2.0 + (width - 2.0) ** 2 / 2.0)


def noisy_objective(seed, noise_scale=0.3):
    """An objective whose noise shrinks as the epoch budget grows."""

    def objective(config, budget):
        rng = derive_rng(seed, 'objective', config_hash(config), budget)
        return true_value(config) + float(rng.normal()) * noise_scale / budget

    return objective


def sampled_configs(leaderboard):
    """Every distinct configuration the search evaluated."""
    seen = {}
    for record in leaderboard:
        seen.setdefault(record['config_hash'], record['config'])
    return list(seen.values())
