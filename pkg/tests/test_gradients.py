# encoding: utf-8
"""Analytic BPTT gradients against central finite differences."""

import numpy as np
import pytest

from gradient_utils import max_relative_error, random_instance

CELLS = ('simple', 'lstm', 'gru')


@pytest.mark.parametrize('cell', CELLS)
@pytest.mark.parametrize('skip', (False, True))
def test_gradients_match_finite_differences(cell, skip):
    rng = np.random.default_rng(hash((cell, skip)) % (2 ** 31))
    for _ in range(4):
        model, inputs, targets, mask = random_instance(cell, skip, rng)
        error = max_relative_error(model, inputs, targets, mask, rng)
        assert error < 1e-4, '%s skip=%s: rel err %.2e' % (cell, skip,
                                                           error)
