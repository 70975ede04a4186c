from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hybridqnet.bellstate import (
    BellDiagonalState,
    NoiseParams,
    ParameterError,
    chain_fidelity,
    chain_pauli,
    dephase,
    distill,
    identical_chain_pauli,
    ion_ion_after_photon_bsm,
    nested_distill,
    swap_dbsm,
)
from hybridqnet.oracle import dm_swap_oracle

PSI_MINUS = BellDiagonalState.psi_minus()


def weights(s: BellDiagonalState) -> np.ndarray:
    return np.array([s.w_phi_plus, s.w_phi_minus, s.w_psi_plus, s.w_psi_minus])


simplex = st.lists(st.floats(0.0, 1.0), min_size=4, max_size=4).filter(lambda w: sum(w) > 1e-3)


def to_state(w) -> BellDiagonalState:
    w = np.asarray(w) / sum(w)
    return BellDiagonalState.from_pauli(w)


def test_state_rejects_bad_weights():
    with pytest.raises(ParameterError):
        BellDiagonalState(0.5, 0.5, 0.5, -0.5)
    with pytest.raises(ParameterError):
        BellDiagonalState(0.2, 0.2, 0.2, 0.2)


def test_noise_params_domain():
    with pytest.raises(ParameterError):
        NoiseParams(f0=0.4)
    with pytest.raises(ParameterError):
        NoiseParams(f_swap_ion=1.01)
    with pytest.raises(ParameterError):
        NoiseParams(tau_q=0.0)
    assert NoiseParams(tau_q=math.inf).tau_q == math.inf


@pytest.mark.parametrize(
    "f0, fp, expected",
    [(0.99, 0.99, (1 + 0.98 * 0.9604) / 2), (1.0, 1.0, 1.0), (0.5, 0.8, 0.5)],
)
def test_ion_ion_fidelity(f0, fp, expected):
    s = ion_ion_after_photon_bsm(NoiseParams(f0=f0, f_swap_photon=fp))
    assert s.fidelity == pytest.approx(expected, abs=1e-12)
    assert s.w_psi_plus == pytest.approx(1 - expected, abs=1e-12)
    assert s.w_phi_plus == 0 and s.w_phi_minus == 0


def test_ideal_swap_of_singlets():
    assert weights(swap_dbsm(PSI_MINUS, PSI_MINUS, 1.0)) == pytest.approx([0, 0, 0, 1])


def test_depolarized_swap_of_singlets():
    out = swap_dbsm(PSI_MINUS, PSI_MINUS, 0.99)
    assert out.fidelity == pytest.approx(0.99, abs=1e-12)
    assert weights(out)[:3] == pytest.approx([1 / 300] * 3, abs=1e-12)


def test_quarter_fidelity_swap_is_normalised():
    a = BellDiagonalState(0.1, 0.2, 0.3, 0.4)
    b = BellDiagonalState(0.4, 0.3, 0.2, 0.1)
    out = swap_dbsm(a, b, 0.25)
    assert weights(out).sum() == pytest.approx(1.0, abs=1e-12)
    assert out.fidelity == pytest.approx(dm_swap_oracle(a, b, 0.25).fidelity, abs=1e-12)


@settings(max_examples=60, deadline=None)
@given(simplex, simplex, st.sampled_from([1.0, 0.99, 0.9, 0.25]))
def test_swap_matches_density_matrix(wa, wb, f):
    a, b = to_state(wa), to_state(wb)
    ours = swap_dbsm(a, b, f)
    ref = dm_swap_oracle(a, b, f)
    assert weights(ours) == pytest.approx(weights(ref), abs=1e-12)
    assert ours.fidelity == pytest.approx(swap_dbsm(b, a, f).fidelity, abs=1e-15)


def test_dephase_limits():
    s = BellDiagonalState(0.1, 0.2, 0.3, 0.4)
    assert dephase(s, 0.0, 1.0) == s
    assert weights(dephase(PSI_MINUS, 1e6, 1.0)) == pytest.approx([0, 0, 0.5, 0.5])
    assert dephase(PSI_MINUS, 1.0, 1.0).fidelity == pytest.approx(1 - (1 - math.exp(-1)) / 2, abs=1e-12)
    assert dephase(s, 100.0, math.inf) == s
    with pytest.raises(ParameterError):
        dephase(s, -1.0, 1.0)


def test_dephasing_monotone():
    f = [dephase(PSI_MINUS, t, 2.0).fidelity for t in np.linspace(0, 10, 201)]
    assert all(x >= y for x, y in zip(f, f[1:]))
    assert min(f) >= 0.5


def test_distill_examples():
    assert distill(1.0, 1.0) == (1.0, 1.0)
    f, p = distill(0.5, 0.5)
    assert f == 0.5 and p == pytest.approx(5 / 9)
    f, p = distill(0.8, 0.8)
    assert f == pytest.approx(5.8 / 6.92) and p == pytest.approx(6.92 / 9)
    with pytest.raises(ParameterError):
        distill(0.4, 0.9)


def test_distill_improves_on_grid():
    for x in np.arange(0.501, 1.0, 1e-3):
        assert distill(float(x), float(x))[0] > x


def test_nested_distill():
    assert nested_distill(0.73, 0) == (0.73, 1.0)
    f1, c1 = nested_distill(0.8, 1)
    assert f1 == pytest.approx(0.8382, abs=1e-4) and c1 == pytest.approx(2 / (6.92 / 9))
    f2, c2 = nested_distill(0.8, 2)
    fp, p2 = distill(f1, f1)
    assert f2 == pytest.approx(fp) and c2 == pytest.approx(c1 * 2 / p2)


def test_chain_fidelity():
    assert chain_fidelity([PSI_MINUS], 0.9) == PSI_MINUS
    with pytest.raises(ValueError):
        chain_fidelity([], 0.99)
    a, b = BellDiagonalState(0.1, 0.0, 0.1, 0.8), BellDiagonalState(0.05, 0.05, 0.1, 0.8)
    assert chain_fidelity([a, b], 0.97).fidelity == pytest.approx(dm_swap_oracle(a, b, 0.97).fidelity, abs=1e-12)


def test_chain_loses_entanglement_after_26_links():
    link = ion_ion_after_photon_bsm(NoiseParams())
    f26 = chain_fidelity([link] * 26, 0.99).fidelity
    f27 = chain_fidelity([link] * 27, 0.99).fidelity
    assert f26 >= 0.5 > f27


@settings(max_examples=40, deadline=None)
@given(st.lists(simplex, min_size=1, max_size=8), st.floats(0.5, 1.0))
def test_closed_form_chain_matches_fold(ws, f):
    states = [to_state(w) for w in ws]
    folded = chain_fidelity(states, f)
    closed = chain_pauli(np.stack([s.pauli for s in states]), f)
    assert folded.pauli == pytest.approx(closed, abs=1e-12)


def test_identical_chain_vectorised():
    link = ion_ion_after_photon_bsm(NoiseParams()).pauli
    n = np.arange(1, 30)
    table = identical_chain_pauli(link, n, 0.99)
    for k in (1, 5, 29):
        assert table[k - 1] == pytest.approx(chain_pauli(np.tile(link, (k, 1)), 0.99), abs=1e-12)
