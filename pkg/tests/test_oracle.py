from __future__ import annotations

import numpy as np
import pytest

from hybridqnet.bellstate import BellDiagonalState, nested_distill
from hybridqnet.oracle import (
    McConfig,
    bell_matrix,
    dm_swap_full,
    dm_swap_oracle,
    expected_max_geometric,
    mc_distill_yield,
    mc_waiting_rounds,
)


def random_states(seed: int, n: int):
    rng = np.random.default_rng(seed)
    return [(BellDiagonalState(*rng.dirichlet(np.ones(4))), BellDiagonalState(*rng.dirichlet(np.ones(4)))) for _ in range(n)]


def test_singlet_swap_is_singlet():
    s = BellDiagonalState.psi_minus()
    assert dm_swap_oracle(s, s, 1.0).fidelity == pytest.approx(1.0, abs=1e-12)


@pytest.mark.parametrize("f", [1.0, 0.9, 0.25])
def test_output_is_a_bell_diagonal_density_matrix(f):
    for a, b in random_states(11, 20):
        rho = dm_swap_full(a, b, f)
        assert np.trace(rho).real == pytest.approx(1.0, abs=1e-12)
        assert np.abs(rho - rho.conj().T).max() < 1e-12
        assert np.linalg.eigvalsh(rho).min() > -1e-10
        m = bell_matrix(rho)
        assert np.abs(m - np.diag(np.diag(m))).max() < 1e-12


def test_config_validation():
    with pytest.raises(ValueError):
        McConfig(trials=0)
    assert sum(McConfig(trials=1003, batches=10).batch_sizes()) == 1003
    assert McConfig(trials=3, batches=10).batch_sizes() == [1, 1, 1]


def test_waiting_examples():
    one = mc_waiting_rounds(1, 0.5, McConfig(1, 200_000))
    assert abs(one.mean - 2.0) < 4 * one.stderr
    two = mc_waiting_rounds(2, 0.5, McConfig(1, 200_000))
    assert abs(two.mean - 8 / 3) < 4 * two.stderr


def test_expected_max_geometric_matches_series():
    for n, p in [(1, 0.3), (2, 0.5), (5, 0.1), (16, 0.5)]:
        k = np.arange(0, 20_000)
        tail = 1.0 - (1.0 - (1.0 - p) ** k) ** n  # P(max > k)
        assert expected_max_geometric(n, p) == pytest.approx(tail.sum(), rel=1e-9)
    assert expected_max_geometric(2, 0.5) == pytest.approx(2 + 2 - 1 / (1 - 0.25))


def test_mc_is_deterministic_per_seed():
    a = mc_waiting_rounds(4, 0.1, McConfig(5, 5000))
    b = mc_waiting_rounds(4, 0.1, McConfig(5, 5000))
    c = mc_waiting_rounds(4, 0.1, McConfig(6, 5000))
    assert a == b and a != c
    assert mc_distill_yield(0.9, 2, McConfig(5, 5000)) == mc_distill_yield(0.9, 2, McConfig(5, 5000))


def test_standard_error_shrinks_with_trials():
    # Batch-split spread: doubling trials should cut the standard error by about sqrt(2).
    small = mc_waiting_rounds(8, 0.1, McConfig(3, 40_000, batches=20))
    large = mc_waiting_rounds(8, 0.1, McConfig(3, 80_000, batches=20))
    spread_small = np.std(small.batch_means, ddof=1) / np.sqrt(20)
    spread_large = np.std(large.batch_means, ddof=1) / np.sqrt(20)
    assert small.stderr / large.stderr == pytest.approx(np.sqrt(2), rel=0.05)
    assert 0.6 < (spread_small / spread_large) / np.sqrt(2) < 1.7


def test_distill_yield_examples():
    est, f = mc_distill_yield(0.8, 0, McConfig(0, 1000))
    assert est.mean == 1.0 and f == 0.8
    est, f = mc_distill_yield(0.8, 1, McConfig(0, 100_000))
    assert abs(est.mean - 2.601) < 3 * est.stderr + 1e-3
    est, f = mc_distill_yield(0.9, 3, McConfig(0, 100_000))
    f_ref, cost = nested_distill(0.9, 3)
    assert f == pytest.approx(f_ref)
    assert abs(est.mean - cost) < 3 * est.stderr
