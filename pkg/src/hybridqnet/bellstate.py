"""Bell-diagonal two-qubit states and the channels that act on them.

Every state in the repeater model is a mixture of the four Bell states, so it
is carried as four weights. Internally the weights are indexed as Pauli errors
relative to the target singlet ``|Psi->``::

    0  I  -> Psi-   (the fidelity)
    1  Z  -> Psi+
    2  X  -> Phi-
    3  Y  -> Phi+

With that labelling the error group is Z2 x Z2 under XOR, an ideal swap is a
group convolution of the two weight vectors, and every noise channel used here
(depolarizing DBSM, dephasing) is a convolution with a fixed kernel. The
Walsh-Hadamard transform diagonalises all of them, which gives closed forms
for long chains.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

WEIGHT_TOL = 1e-12

# Walsh-Hadamard matrix of Z2 x Z2 (symmetric, H @ H = 4 I).
_HADAMARD = np.array(
    [
        [1.0, 1.0, 1.0, 1.0],
        [1.0, -1.0, 1.0, -1.0],
        [1.0, 1.0, -1.0, -1.0],
        [1.0, -1.0, -1.0, 1.0],
    ]
)
_XOR = np.bitwise_xor.outer(np.arange(4), np.arange(4))


class ParameterError(ValueError):
    """A physical parameter lies outside its allowed domain."""


def _check_fidelity(name: str, value: float, low: float = 0.5) -> None:
    if not (low <= value <= 1.0) or math.isnan(value):
        raise ParameterError(f"{name}={value!r} outside [{low}, 1]")


def _clean(p: np.ndarray) -> np.ndarray:
    """Clamp float residue and renormalise; larger drift is a bug."""
    total = p.sum()
    if abs(total - 1.0) > 1e-9 or p.min() < -1e-9:
        raise ArithmeticError(f"Bell weights drifted: {p!r}")
    p = np.clip(p, 0.0, 1.0)
    total = p.sum()
    if abs(total - 1.0) > WEIGHT_TOL:
        p = p / total
    return p


@dataclass(frozen=True)
class BellDiagonalState:
    """Mixture of the four Bell states; fidelity is the ``Psi-`` weight."""

    w_phi_plus: float
    w_phi_minus: float
    w_psi_plus: float
    w_psi_minus: float

    def __post_init__(self) -> None:
        w = (self.w_phi_plus, self.w_phi_minus, self.w_psi_plus, self.w_psi_minus)
        if any(x < 0.0 or math.isnan(x) for x in w):
            raise ParameterError(f"negative Bell weight in {w}")
        if abs(sum(w) - 1.0) > WEIGHT_TOL:
            raise ParameterError(f"Bell weights sum to {sum(w)!r}, not 1")

    @property
    def fidelity(self) -> float:
        return self.w_psi_minus

    @property
    def pauli(self) -> np.ndarray:
        """Weights in error order (I, Z, X, Y)."""
        return np.array([self.w_psi_minus, self.w_psi_plus, self.w_phi_minus, self.w_phi_plus])

    @classmethod
    def from_pauli(cls, p: Sequence[float]) -> BellDiagonalState:
        p = _clean(np.asarray(p, dtype=float))
        return cls(w_phi_plus=float(p[3]), w_phi_minus=float(p[2]), w_psi_plus=float(p[1]), w_psi_minus=float(p[0]))

    @classmethod
    def psi_minus(cls) -> BellDiagonalState:
        return cls(0.0, 0.0, 0.0, 1.0)

    @classmethod
    def two_component(cls, fidelity: float) -> BellDiagonalState:
        """``F |Psi-><Psi-| + (1 - F) |Psi+><Psi+|``, the form used for raw links."""
        if not (0.0 <= fidelity <= 1.0):
            raise ParameterError(f"fidelity={fidelity!r} outside [0, 1]")
        return cls(0.0, 0.0, 1.0 - fidelity, fidelity)


@dataclass(frozen=True)
class NoiseParams:
    """Hardware imperfections of the trapped-ion repeater chain.

    ``tau_q = math.inf`` switches memory dephasing off.
    """

    f0: float = 0.99
    f_swap_photon: float = 0.99
    f_swap_ion: float = 0.99
    tau_q: float = math.inf

    def __post_init__(self) -> None:
        _check_fidelity("f0", self.f0)
        _check_fidelity("f_swap_photon", self.f_swap_photon)
        _check_fidelity("f_swap_ion", self.f_swap_ion)
        if not self.tau_q > 0:
            raise ParameterError(f"tau_q={self.tau_q!r} must be > 0 (or inf)")

    @property
    def visibility(self) -> float:
        return 2.0 * self.f_swap_photon - 1.0


# --- Walsh-Hadamard helpers ------------------------------------------------


def to_characters(p: np.ndarray) -> np.ndarray:
    """Fourier transform over Z2 x Z2; works on trailing axis of length 4."""
    return p @ _HADAMARD


def from_characters(c: np.ndarray) -> np.ndarray:
    return (c @ _HADAMARD) / 4.0


def depolarizing_characters(f: float) -> np.ndarray:
    lam = (4.0 * f - 1.0) / 3.0
    return np.array([1.0, lam, lam, lam])


def dephasing_probability(t: float, tau_q: float) -> float:
    """Weight moved onto the ``S_z`` image after storing for ``t`` seconds."""
    if t < 0:
        raise ParameterError(f"negative storage time t={t!r}")
    if math.isinf(tau_q):
        return 0.0
    return 0.5 * (1.0 - math.exp(-((t / tau_q) ** 2)))


# --- operations --------------------------------------------------------------


def ion_ion_after_photon_bsm(noise: NoiseParams) -> BellDiagonalState:
    """Ion-ion pair heralded by a photon Bell measurement between two ion-photon pairs."""
    f_ii = 0.5 * (1.0 + noise.visibility * (1.0 - 2.0 * noise.f0) ** 2)
    return BellDiagonalState.two_component(f_ii)


def compose(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Ideal swap of two Bell-diagonal pairs in Pauli-error order (group convolution)."""
    out = np.zeros(4)
    np.add.at(out, _XOR, np.outer(a, b))
    return out


def depolarize(p: np.ndarray, f: float) -> np.ndarray:
    """``F rho + (1 - F)/3 (S_z rho S_z + S_y rho S_y + S_x rho S_x)`` on Pauli weights."""
    return f * p + (1.0 - f) / 3.0 * (p[_XOR[:, 1]] + p[_XOR[:, 2]] + p[_XOR[:, 3]])


def swap_dbsm(a: BellDiagonalState, b: BellDiagonalState, f_swap_ion: float) -> BellDiagonalState:
    """Swap ``a`` and ``b`` at a trapped-ion node with a depolarizing DBSM.

    ``f_swap_ion`` may go down to 0.25 (fully depolarizing) here; the chain
    parameters in :class:`NoiseParams` stay within [0.5, 1].
    """
    _check_fidelity("f_swap_ion", f_swap_ion, low=0.25)
    return BellDiagonalState.from_pauli(depolarize(compose(a.pauli, b.pauli), f_swap_ion))


def dephase(s: BellDiagonalState, t: float, tau_q: float) -> BellDiagonalState:
    """Memory dephasing: ``[1 - q(t)] rho + q(t) S_z rho S_z``.

    The printed form in the source model has ``q`` and ``1 - q`` exchanged,
    which would fully dephase at ``t = 0``; the physical ordering is used.
    """
    q = dephasing_probability(t, tau_q)
    if q == 0.0:
        return s
    p = s.pauli
    return BellDiagonalState.from_pauli((1.0 - q) * p + q * p[_XOR[:, 1]])


def distill(f1: float, f2: float) -> tuple[float, float]:
    """One recurrence purification round; returns ``(F_out, p_success)``."""
    _check_fidelity("f1", f1)
    _check_fidelity("f2", f2)
    prod = f1 * f2
    denom = 8.0 * prod - 2.0 * f1 - 2.0 * f2 + 5.0
    f_out = (10.0 * prod - f1 - f2 + 1.0) / denom
    return min(max(f_out, 0.5), 1.0), denom / 9.0


def nested_distill(f: float, rounds: int) -> tuple[float, float]:
    """Binary-tree purification of identical pairs.

    Returns the output fidelity and the expected number of raw pairs consumed
    per surviving pair, ``prod(2 / p_success)`` over the rounds.
    """
    if rounds < 0:
        raise ParameterError(f"rounds={rounds!r} must be >= 0")
    _check_fidelity("f", f)
    cost = 1.0
    for _ in range(rounds):
        f, p = distill(f, f)
        cost *= 2.0 / p
    return f, cost


def chain_fidelity(link_states: Sequence[BellDiagonalState], f_swap_ion: float) -> BellDiagonalState:
    """Left fold of :func:`swap_dbsm` across consecutive links."""
    if not link_states:
        raise ValueError("chain_fidelity needs at least one link")
    state = link_states[0]
    for nxt in link_states[1:]:
        state = swap_dbsm(state, nxt, f_swap_ion)
    return state


def chain_pauli(links: np.ndarray, f_swap_ion: float) -> np.ndarray:
    """Closed-form chain of arbitrary links given as rows of Pauli weights.

    Equivalent to :func:`chain_fidelity` but O(n) with no Python fold;
    ``links`` may carry leading batch axes, the link axis is ``-2``.
    """
    links = np.asarray(links, dtype=float)
    n = links.shape[-2]
    chars = np.prod(to_characters(links), axis=-2) * depolarizing_characters(f_swap_ion) ** (n - 1)
    return from_characters(chars)


def identical_chain_pauli(link: np.ndarray, n: int | np.ndarray, f_swap_ion: float) -> np.ndarray:
    """Chain of ``n`` copies of one link; ``n`` may be an integer array."""
    n = np.asarray(n)
    chars = to_characters(np.asarray(link, dtype=float))
    lam = depolarizing_characters(f_swap_ion)
    out = chars ** n[..., None] * lam ** (n[..., None] - 1)
    return from_characters(out)
