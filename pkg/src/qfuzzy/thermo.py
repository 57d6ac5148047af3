"""Density-matrix information thermodynamics.

Entropies are in nats. Matrix functions go through ``numpy.linalg.eigh``;
logarithms of rank-deficient operators are taken on a spectral floor and the
results carry a ``regularized`` flag when that happened.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

HERMITIAN_TOL = 1e-10
SPECTRAL_FLOOR = 1e-12
MAX_DIM = 16


class InvalidStateError(ValueError):
    pass


class OptimizationError(RuntimeError):
    pass


def _as_matrix(a) -> np.ndarray:
    m = np.asarray(a, dtype=complex)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise InvalidStateError(f"expected a square matrix, got shape {m.shape}")
    return m


def is_hermitian(a: np.ndarray, tol: float = HERMITIAN_TOL) -> bool:
    return bool(np.max(np.abs(a - a.conj().T), initial=0.0) <= tol)


def check_density(rho, tol: float = HERMITIAN_TOL) -> np.ndarray:
    """Validate and return ``rho`` as a complex density matrix."""
    rho = _as_matrix(rho)
    if not np.all(np.isfinite(rho)):
        raise InvalidStateError("density matrix has non-finite entries")
    if not is_hermitian(rho, tol):
        raise InvalidStateError("density matrix is not Hermitian")
    if abs(np.trace(rho).real - 1.0) > tol:
        raise InvalidStateError(f"trace {np.trace(rho).real!r} != 1")
    if np.linalg.eigvalsh(rho).min() < -tol:
        raise InvalidStateError("density matrix has negative eigenvalues")
    return rho


def herm_fn(a: np.ndarray, fn: Callable[[np.ndarray], np.ndarray]) -> np.ndarray:
    """Apply a scalar function to a Hermitian matrix through its spectrum."""
    a = 0.5 * (a + a.conj().T)
    w, v = np.linalg.eigh(a)
    return (v * fn(w)) @ v.conj().T


def logm_h(a: np.ndarray, floor: float = SPECTRAL_FLOOR) -> tuple[np.ndarray, bool]:
    """Matrix log of a PSD Hermitian matrix; eigenvalues below ``floor`` are lifted."""
    w = np.linalg.eigvalsh(0.5 * (a + a.conj().T))
    regularized = bool(w.min() < floor)
    return herm_fn(a, lambda x: np.log(np.maximum(x, floor))), regularized


def sqrtm_psd(a: np.ndarray) -> np.ndarray:
    return herm_fn(a, lambda x: np.sqrt(np.clip(x, 0.0, None)))


def _xlogx(w: np.ndarray) -> float:
    w = w[w > 0]
    return float(np.sum(w * np.log(w)))


def von_neumann_entropy(rho) -> float:
    rho = check_density(rho)
    return -_xlogx(np.clip(np.linalg.eigvalsh(rho), 0.0, None))


def shannon_entropy(p: Sequence[float]) -> float:
    return -_xlogx(np.clip(np.asarray(p, dtype=float), 0.0, None))


def relative_entropy(rho, sigma, tol: float = 1e-12) -> float:
    """``Tr rho (ln rho - ln sigma)``; ``math.inf`` when supp(rho) is not inside supp(sigma)."""
    rho, sigma = check_density(rho), check_density(sigma)
    wr, vr = np.linalg.eigh(rho)
    ws, vs = np.linalg.eigh(sigma)
    # overlap |<r_i|s_j>|^2
    ov = np.abs(vr.conj().T @ vs) ** 2
    keep = wr > tol
    if np.any(ov[keep][:, ws <= tol] * wr[keep, None] > tol):
        return math.inf
    wr_k = wr[keep]
    term1 = float(np.sum(wr_k * np.log(wr_k)))
    log_s = np.where(ws > tol, np.log(np.maximum(ws, tol)), 0.0)
    term2 = float(np.sum(wr_k[:, None] * ov[keep] * log_s[None, :]))
    return max(term1 - term2, 0.0) if term1 - term2 > -1e-12 else term1 - term2


def gibbs_state(h, alpha: float) -> np.ndarray:
    h = _as_matrix(h)
    w, v = np.linalg.eigh(0.5 * (h + h.conj().T))
    x = -alpha * w
    x -= x.max()
    p = np.exp(x)
    p /= p.sum()
    return (v * p) @ v.conj().T


def _log_partition(h: np.ndarray, alpha: float) -> float:
    x = -alpha * np.linalg.eigvalsh(0.5 * (h + h.conj().T))
    xm = x.max()
    return float(xm + math.log(np.exp(x - xm).sum()))


def free_energy(h, alpha: float) -> float:
    """Helmholtz free energy ``-ln Z / alpha`` at inverse temperature ``alpha``."""
    return -_log_partition(_as_matrix(h), alpha) / alpha


def relative_entropy_to_gibbs(rho, h, alpha: float) -> float:
    """``D[rho || exp(-alpha h)/Z]`` through ``ln(can) = -alpha h - ln Z``.

    Exact for any ``alpha``: no logarithm of the (possibly nearly singular)
    canonical state is formed.
    """
    rho, h = check_density(rho), _as_matrix(h)
    d = -von_neumann_entropy(rho) + alpha * float(np.trace(rho @ h).real) + _log_partition(h, alpha)
    return max(d, 0.0)


# ------------------------------------------------------------ entropy production

@dataclass(frozen=True)
class ProductionRate:
    rate: float
    work_rate: float
    regularized: bool = False


def entropy_production_rate(rho_t, rho_dot, rho_eq, beta: float = 1.0) -> ProductionRate:
    """``Tr[F V]`` with ``F = rho_eq^-1 (ln rho_eq - ln rho_t)`` and ``V = rho_dot rho_eq``.

    ``work_rate`` is ``rate / beta``.
    """
    rho_t, rho_eq = check_density(rho_t), check_density(rho_eq)
    rho_dot = _as_matrix(rho_dot)
    if np.linalg.eigvalsh(rho_eq).min() <= SPECTRAL_FLOOR:
        raise InvalidStateError("thermal reference state must be full rank")
    ln_eq, _ = logm_h(rho_eq)
    ln_t, reg = logm_h(rho_t)
    force = np.linalg.solve(rho_eq, ln_eq - ln_t)
    flow = rho_dot @ rho_eq
    rate = float(np.trace(force @ flow).real)
    return ProductionRate(rate, rate / beta, reg)


# ----------------------------------------------------------------------- demon

@dataclass
class PovmSet:
    elements: list[np.ndarray]

    def __post_init__(self):
        self.elements = [_as_matrix(d) for d in self.elements]
        if not self.elements:
            raise ValueError("POVM needs at least one element")
        dim = self.elements[0].shape[0]
        if dim > MAX_DIM:
            raise ValueError(f"dimension {dim} exceeds {MAX_DIM}")
        for d in self.elements:
            if d.shape != (dim, dim) or not is_hermitian(d):
                raise ValueError("POVM elements must be Hermitian and equally sized")
            if np.linalg.eigvalsh(d).min() < -1e-9:
                raise ValueError("POVM element is not positive semidefinite")
        if np.max(np.abs(sum(self.elements) - np.eye(dim))) > 1e-9:
            raise ValueError("POVM elements do not sum to identity")

    @property
    def dim(self) -> int:
        return self.elements[0].shape[0]

    @classmethod
    def trivial(cls, dim: int, k: int) -> "PovmSet":
        return cls([np.eye(dim, dtype=complex) / k for _ in range(k)])

    @classmethod
    def projective(cls, basis: np.ndarray) -> "PovmSet":
        """Rank-one projectors onto the columns of a unitary ``basis``."""
        basis = np.asarray(basis, dtype=complex)
        return cls([np.outer(basis[:, i], basis[:, i].conj()) for i in range(basis.shape[1])])

    def roots(self) -> list[np.ndarray]:
        return [sqrtm_psd(d) for d in self.elements]


@dataclass(frozen=True)
class DemonInformation:
    information: float
    entropy: float
    outcome_entropy: float
    post_entropy: float
    probabilities: tuple[float, ...] = ()
    regularized: bool = False

    def __iter__(self):
        return iter((self.information, self.entropy, self.outcome_entropy, self.post_entropy))


def _post_measurement_entropy(rho, roots) -> tuple[float, bool]:
    """``-sum_k Tr[sigma_k ln sigma_k]`` with ``sigma_k = sqrt(D_k) rho sqrt(D_k)``."""
    total = 0.0
    for r in roots:
        sigma = r @ rho @ r
        total -= _xlogx(np.clip(np.linalg.eigvalsh(0.5 * (sigma + sigma.conj().T)), 0.0, None))
    return total, False


def demon_information(rho1, povm: PovmSet, beta: float = 1.0) -> DemonInformation:
    """Information gained by measuring ``rho1`` with ``povm``.

    Returns ``I = (S(rho1) + H(p) - H(rho1:X)) / beta`` along with the three
    entropies, where ``H(rho1:X) = -sum_k Tr[s_k ln s_k]`` over the
    unnormalized post-measurement blocks ``s_k``. ``I`` vanishes for
    identity-proportional POVMs, and ``-I`` is the potential whose time
    derivative is :func:`demon_work_rate`.
    """
    rho1 = check_density(rho1)
    if povm.dim != rho1.shape[0]:
        raise ValueError("POVM and state dimensions differ")
    s = von_neumann_entropy(rho1)
    p = np.array([np.trace(d @ rho1).real for d in povm.elements])
    h_p = shannon_entropy(p)
    h_x, reg = _post_measurement_entropy(rho1, povm.roots())
    return DemonInformation((s + h_p - h_x) / beta, s, h_p, h_x, tuple(p.tolist()), reg)


@dataclass(frozen=True)
class ThermoForces:
    """Force/flow triple of a demon-assisted process.

    The three components live in different spaces and are kept apart;
    ``powers`` gives each component's pairing ``Tr[F V]`` (summed over k for
    the indexed components).
    """

    f1: np.ndarray
    f2: tuple[float, ...]
    f3: tuple[np.ndarray, ...]
    v1: np.ndarray
    v2: tuple[float, ...]
    v3: tuple[np.ndarray, ...]

    @property
    def powers(self) -> tuple[float, float, float]:
        p1 = float(np.trace(self.f1 @ self.v1).real)
        p2 = float(sum(f * v for f, v in zip(self.f2, self.v2)))
        p3 = float(sum(np.trace(f @ v).real for f, v in zip(self.f3, self.v3)))
        return p1, p2, p3


@dataclass(frozen=True)
class DemonWorkRate:
    rate: float
    forces: ThermoForces
    regularized: bool = False
    terms: tuple[float, float, float] = field(default=(0.0, 0.0, 0.0))


def demon_work_rate(rho1, rho1_dot, povm: PovmSet, beta: float = 1.0,
                    rho_eq=None, pdot=None) -> DemonWorkRate:
    """Irreversible work rate due to the measuring controller.

    ``(1/beta) [Tr(rho_dot ln rho) + sum_k pdot_k ln p_k
    - sum_k Tr(sqrt(D_k) rho_dot sqrt(D_k) ln sqrt(D_k) rho sqrt(D_k))]``.
    ``rho_eq`` is the reference state used to form the force/flow operators
    (maximally mixed by default); the rate itself does not depend on it.
    """
    rho1 = check_density(rho1)
    rho_dot = _as_matrix(rho1_dot)
    dim = rho1.shape[0]
    rho_eq = np.eye(dim, dtype=complex) / dim if rho_eq is None else check_density(rho_eq)
    roots = povm.roots()
    p = np.array([np.trace(d @ rho1).real for d in povm.elements])
    if pdot is None:
        pdot = np.array([np.trace(d @ rho_dot).real for d in povm.elements])
    pdot = np.asarray(pdot, dtype=float)
    p_eq = np.array([np.trace(d @ rho_eq).real for d in povm.elements])

    ln_rho, reg = logm_h(rho1)
    eq_inv = np.linalg.inv(rho_eq)
    t1 = float(np.trace(rho_dot @ ln_rho).real)
    ln_p = np.log(np.maximum(p, SPECTRAL_FLOOR))
    reg = reg or bool(np.any(p < SPECTRAL_FLOOR))
    t2 = float(np.dot(pdot, ln_p))
    t3 = 0.0
    f3, v3 = [], []
    for r in roots:
        sigma = r @ rho1 @ r
        sigma_dot = r @ rho_dot @ r
        ln_sigma, reg_k = logm_h(sigma)
        # zero blocks contribute nothing; their log only matters on their support
        if np.trace(sigma).real > SPECTRAL_FLOOR:
            reg = reg or reg_k
        t3 += float(np.trace(sigma_dot @ ln_sigma).real)
        f3.append(-eq_inv @ ln_sigma)
        v3.append(sigma_dot @ rho_eq)
    forces = ThermoForces(
        f1=eq_inv @ ln_rho,
        f2=tuple((ln_p / np.maximum(p_eq, SPECTRAL_FLOOR)).tolist()),
        f3=tuple(f3),
        v1=rho_dot @ rho_eq,
        v2=tuple((pdot * p_eq).tolist()),
        v3=tuple(v3),
    )
    return DemonWorkRate((t1 + t2 - t3) / beta, forces, reg, (t1, t2, -t3))


# ------------------------------------------------------------------ work bounds

@dataclass(frozen=True)
class WorkBounds:
    work: float
    delta_free: float
    lower_bound: float
    d_final: float
    d_initial: float

    def __iter__(self):
        return iter((self.work, self.delta_free, self.lower_bound))


def work_bounds(rho_0, rho_T, h_0, h_T, alpha: float) -> WorkBounds:
    """Work equality and its ``alpha``-parameterized lower bound.

    ``W = dF + D[rho_T||can_T]/alpha - D[rho_0||can_0]/alpha`` and
    ``W_LB = dF - D[rho_0||can_0]/alpha``.
    """
    if not alpha > 0:
        raise ValueError("alpha must be positive")
    d_f = free_energy(h_T, alpha) - free_energy(h_0, alpha)
    d0 = relative_entropy_to_gibbs(rho_0, h_0, alpha)
    dT = relative_entropy_to_gibbs(rho_T, h_T, alpha)
    lb = d_f - d0 / alpha
    return WorkBounds(d_f + dT / alpha - d0 / alpha, d_f, lb, dT, d0)


def lower_bound(rho_0, h_0, h_T, alpha: float) -> float:
    d0 = relative_entropy_to_gibbs(rho_0, h_0, alpha)
    return free_energy(h_T, alpha) - free_energy(h_0, alpha) - d0 / alpha


def golden_max(fn: Callable[[float], float], lo: float, hi: float, tol: float = 1e-6) -> float:
    """Golden-section maximization on ``[lo, hi]``; endpoints are also compared."""
    if hi < lo:
        lo, hi = hi, lo
    if hi - lo <= tol:
        return lo if fn(lo) >= fn(hi) else hi
    invphi = (math.sqrt(5.0) - 1.0) / 2.0
    a, b = lo, hi
    c, d = b - invphi * (b - a), a + invphi * (b - a)
    fc, fd = fn(c), fn(d)
    while b - a > tol:
        if fc >= fd:
            b, d, fd = d, c, fc
            c = b - invphi * (b - a)
            fc = fn(c)
        else:
            a, c, fc = c, d, fd
            d = a + invphi * (b - a)
            fd = fn(d)
    best = 0.5 * (a + b)
    cands = [(fn(best), best), (fn(lo), lo), (fn(hi), hi)]
    if not all(math.isfinite(v) for v, _ in cands):
        raise OptimizationError("objective is not finite on the interval")
    return max(cands, key=lambda c: c[0])[1]


def best_alpha(rho_0, h_0, h_T, interval: tuple[float, float] = (0.1, 10.0),
               tol: float = 1e-6) -> float:
    """The ``alpha`` maximizing ``W_LB(alpha)`` over ``interval``."""
    lo, hi = interval
    if not (lo > 0 and hi > 0):
        raise ValueError("alpha interval must be positive")

    def objective(a):
        v = lower_bound(rho_0, h_0, h_T, a)
        if not math.isfinite(v):
            raise OptimizationError(f"W_LB not finite at alpha={a}")
        return v

    return golden_max(objective, lo, hi, tol)


# ---------------------------------------------------------------- random states

def random_density(dim: int, rng: np.random.Generator, rank: int | None = None) -> np.ndarray:
    rank = dim if rank is None else rank
    g = rng.standard_normal((dim, rank)) + 1j * rng.standard_normal((dim, rank))
    rho = g @ g.conj().T
    return rho / np.trace(rho).real


def random_hermitian(dim: int, rng: np.random.Generator, traceless: bool = False) -> np.ndarray:
    g = rng.standard_normal((dim, dim)) + 1j * rng.standard_normal((dim, dim))
    h = 0.5 * (g + g.conj().T)
    if traceless:
        h -= np.trace(h) / dim * np.eye(dim)
    return h
