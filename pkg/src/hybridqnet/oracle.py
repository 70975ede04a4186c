"""Brute-force validators for the closed-form models.

Nothing in here is used on the production path. The density-matrix swap works
on the full 16-dimensional two-pair operator, and the Monte Carlo routines
sample the waiting and purification processes directly, so they share no code
with :mod:`hybridqnet.bellstate` or :mod:`hybridqnet.fiberlink` beyond the
state container.
"""

from __future__ import annotations

from dataclasses import dataclass
from math import comb
from typing import NamedTuple

import numpy as np

from .bellstate import BellDiagonalState, distill

_S2 = 1.0 / np.sqrt(2.0)
# Bell vectors in the computational basis |q_a q_b>.
PHI_PLUS = np.array([1.0, 0.0, 0.0, 1.0]) * _S2
PHI_MINUS = np.array([1.0, 0.0, 0.0, -1.0]) * _S2
PSI_PLUS = np.array([0.0, 1.0, 1.0, 0.0]) * _S2
PSI_MINUS = np.array([0.0, 1.0, -1.0, 0.0]) * _S2
BELL_BASIS = np.stack([PHI_PLUS, PHI_MINUS, PSI_PLUS, PSI_MINUS])  # rows

SIGMA_X = np.array([[0.0, 1.0], [1.0, 0.0]], dtype=complex)
SIGMA_Y = np.array([[0.0, -1j], [1j, 0.0]])
SIGMA_Z = np.array([[1.0, 0.0], [0.0, -1.0]], dtype=complex)
I2 = np.eye(2, dtype=complex)


class OracleError(ArithmeticError):
    pass


@dataclass(frozen=True)
class McConfig:
    seed: int = 0
    trials: int = 100_000
    batches: int = 10

    def __post_init__(self) -> None:
        if self.trials < 1:
            raise ValueError("trials must be >= 1")
        if self.batches < 1:
            raise ValueError("batches must be >= 1")

    def batch_sizes(self) -> list[int]:
        k = min(self.batches, self.trials)
        base, extra = divmod(self.trials, k)
        return [base + (i < extra) for i in range(k)]

    def generators(self) -> list[np.random.Generator]:
        seqs = np.random.SeedSequence(self.seed).spawn(min(self.batches, self.trials))
        return [np.random.default_rng(s) for s in seqs]


class McEstimate(NamedTuple):
    mean: float
    stderr: float
    batch_means: tuple[float, ...]


def _estimate(samples_per_batch: list[np.ndarray]) -> McEstimate:
    allv = np.concatenate(samples_per_batch).astype(float)
    stderr = float(allv.std(ddof=1) / np.sqrt(allv.size)) if allv.size > 1 else 0.0
    return McEstimate(float(allv.mean()), stderr, tuple(float(s.mean()) for s in samples_per_batch))


# --- density matrices ---------------------------------------------------------


def density_from_bell(state: BellDiagonalState) -> np.ndarray:
    w = [state.w_phi_plus, state.w_phi_minus, state.w_psi_plus, state.w_psi_minus]
    return sum(wi * np.outer(v, v) for wi, v in zip(w, BELL_BASIS)).astype(complex)


def bell_matrix(rho: np.ndarray) -> np.ndarray:
    """``rho`` expressed in the (Phi+, Phi-, Psi+, Psi-) basis."""
    b = BELL_BASIS.astype(complex)
    return b.conj() @ rho @ b.T


def depolarize_matrix(rho: np.ndarray, f: float) -> np.ndarray:
    ops = [np.kron(I2, s) for s in (SIGMA_Z, SIGMA_Y, SIGMA_X)]
    return f * rho + (1.0 - f) / 3.0 * sum(s @ rho @ s.conj().T for s in ops)


def swap_density(rho_12: np.ndarray, rho_34: np.ndarray) -> np.ndarray:
    """Project qubits 2 and 3 of ``rho_12 (x) rho_34`` onto Psi- and trace them out."""
    full = np.kron(rho_12, rho_34).reshape((2,) * 8)
    # psi[b, c] is the singlet amplitude on qubits (2, 3).
    psi = PSI_MINUS.reshape(2, 2)
    # rho_14[a, d; a', d'] = sum psi*[b,c] psi[b',c'] full[a,b,c,d; a',b',c',d']
    out = np.einsum("bc,abcdwxyz,xy->adwz", psi.conj(), full, psi, optimize=True).reshape(4, 4)
    prob = np.trace(out).real
    if prob < 1e-14:
        raise OracleError("Bell projection has vanishing probability")
    return out / prob


def dm_swap_oracle(a: BellDiagonalState, b: BellDiagonalState, f_swap: float) -> BellDiagonalState:
    rho = depolarize_matrix(swap_density(density_from_bell(a), density_from_bell(b)), f_swap)
    m = bell_matrix(rho)
    diag = np.clip(np.diag(m).real, 0.0, None)
    diag = diag / diag.sum()
    return BellDiagonalState(*(float(x) for x in diag))


def dm_swap_full(a: BellDiagonalState, b: BellDiagonalState, f_swap: float) -> np.ndarray:
    """The 4x4 output density matrix, for Hermiticity / positivity checks."""
    return depolarize_matrix(swap_density(density_from_bell(a), density_from_bell(b)), f_swap)


# --- waiting time ---------------------------------------------------------------


def mc_waiting_rounds(n_segment_pairs: int, p_success: float, cfg: McConfig = McConfig()) -> McEstimate:
    """Mean over trials of the slowest of ``n`` independent geometric waits."""
    if not 0.0 < p_success <= 1.0:
        raise ValueError(f"p_success={p_success!r} outside (0, 1]")
    if n_segment_pairs < 1:
        raise ValueError("need at least one segment pair")
    samples = [
        rng.geometric(p_success, size=(size, n_segment_pairs)).max(axis=1)
        for rng, size in zip(cfg.generators(), cfg.batch_sizes())
    ]
    return _estimate(samples)


def expected_max_geometric(n: int, p: float) -> float:
    """Exact ``E[max of n iid Geometric(p)]`` on {1, 2, ...} by inclusion-exclusion."""
    q = 1.0 - p
    return float(sum((-1) ** (j + 1) * comb(n, j) / (1.0 - q**j) for j in range(1, n + 1)))


# --- purification yield -------------------------------------------------------------


def _raw_pairs(rng: np.random.Generator, size: int, probs: list[float]) -> np.ndarray:
    """Raw pairs consumed to build ``size`` pairs at level ``len(probs)``."""
    if not probs:
        return np.ones(size, dtype=np.int64)
    attempts = rng.geometric(probs[-1], size=size)
    children = _raw_pairs(rng, int(2 * attempts.sum()), probs[:-1])
    owner = np.repeat(np.arange(size), 2 * attempts)
    return np.bincount(owner, weights=children, minlength=size).astype(np.int64)


def mc_distill_yield(f: float, rounds: int, cfg: McConfig = McConfig()) -> tuple[McEstimate, float]:
    """Simulate nested 2->1 purification; returns raw-pair consumption and output fidelity.

    A failed round discards both inputs and the parent draws two fresh
    children, so consumption per level is ``2 * Geometric(p)`` children.
    """
    if not 0.5 < f <= 1.0:
        raise ValueError(f"f={f!r} outside (0.5, 1]")
    probs: list[float] = []
    fid = f
    for _ in range(rounds):
        fid, p = distill(fid, fid)
        probs.append(p)
    samples = [_raw_pairs(rng, size, probs) for rng, size in zip(cfg.generators(), cfg.batch_sizes())]
    return _estimate(samples), fid
