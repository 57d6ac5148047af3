"""Classically simulated quantum fuzzy inference.

Controller gains are encoded as single-qubit amplitudes, tensored into a
superposition, and the maximum-probability basis state picks which
controllers contribute to the robust gain. The module also builds the
correlation-locking state shared between two registers and evaluates its
accessible classical correlation with and without the one-bit basis message.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field
from functools import reduce
from typing import Sequence

import numpy as np

NORM_TOL = 1e-12
MAX_QUBITS = 8
MODES = ("spatial", "temporal", "spatiotemporal")
_MODE_ALIASES = {"q-s": "spatial", "q-t": "temporal", "q-st": "spatiotemporal",
                 "qs": "spatial", "qt": "temporal", "qst": "spatiotemporal"}


@dataclass(frozen=True)
class AmplitudeVector:
    amplitudes: np.ndarray
    labels: tuple[str, ...] = ()

    def __post_init__(self):
        a = np.asarray(self.amplitudes, dtype=complex)
        n = a.size.bit_length() - 1
        if a.ndim != 1 or a.size < 2 or 2 ** n != a.size:
            raise ValueError("amplitude vector length must be 2**n with n >= 1")
        if abs(np.vdot(a, a).real - 1.0) > 1e-10:
            raise ValueError("amplitude vector is not normalized")
        object.__setattr__(self, "amplitudes", a)

    @property
    def n_qubits(self) -> int:
        return self.amplitudes.size.bit_length() - 1

    @property
    def probabilities(self) -> np.ndarray:
        return np.abs(self.amplitudes) ** 2


def encode_qubit(value: float, running_max: float) -> np.ndarray:
    """``sqrt(1-p)|0> + sqrt(p)|1>`` with ``p = min(value / running_max, 1)``."""
    if value < 0:
        raise ValueError(f"gain value must be non-negative, got {value}")
    if not running_max > 0:
        raise ValueError("running maximum must be positive")
    p = min(value / running_max, 1.0)
    return np.array([math.sqrt(1.0 - p), math.sqrt(p)])


def superpose(qubits: Sequence[np.ndarray], labels: Sequence[str] = ()) -> AmplitudeVector:
    """Tensor product; the first qubit is the most significant bit."""
    if not 1 <= len(qubits) <= MAX_QUBITS:
        raise ValueError(f"need 1..{MAX_QUBITS} qubits, got {len(qubits)}")
    state = reduce(np.kron, (np.asarray(q, dtype=complex) for q in qubits))
    state = state / np.linalg.norm(state)
    return AmplitudeVector(state, tuple(labels))


def hadamard_n(state: AmplitudeVector) -> AmplitudeVector:
    """Apply ``H`` to every qubit (fast Walsh-Hadamard transform)."""
    a = state.amplitudes.copy()
    h = 1
    while h < a.size:
        a = a.reshape(-1, 2, h)
        a = np.stack((a[:, 0] + a[:, 1], a[:, 0] - a[:, 1]), axis=1).reshape(-1)
        h *= 2
    a /= math.sqrt(state.amplitudes.size)
    return AmplitudeVector(a, state.labels)


def hadamard_matrix(n: int) -> np.ndarray:
    h1 = np.array([[1.0, 1.0], [1.0, -1.0]]) / math.sqrt(2.0)
    return reduce(np.kron, [h1] * n)


def oracle_select(state: AmplitudeVector, rtol: float = 1e-12) -> int:
    """Index of the most probable basis state.

    Ties (within ``rtol``) go to the state with more set bits, then to the
    smaller index.
    """
    p = state.probabilities
    top = p.max()
    cands = np.flatnonzero(p >= top * (1.0 - rtol))
    return int(min(cands, key=lambda i: (-bin(int(i)).count("1"), int(i))))


def bits_of(index: int, n: int) -> tuple[int, ...]:
    return tuple((index >> (n - 1 - k)) & 1 for k in range(n))


def decode_gain(bits: Sequence[int], values: Sequence[float], scale: float = 1.0) -> float:
    """``scale`` times the mean of the selected values (or their minimum if none is selected)."""
    if len(bits) != len(values):
        raise ValueError("bits and values must have the same length")
    chosen = [v for b, v in zip(bits, values) if b]
    g = scale * (sum(chosen) / len(chosen) if chosen else min(values))
    return max(g, 0.0)


def select_and_decode(values: Sequence[float], maxima: Sequence[float], scale: float) -> float:
    state = superpose([encode_qubit(v, m) for v, m in zip(values, maxima)])
    bits = bits_of(oracle_select(state), state.n_qubits)
    return decode_gain(bits, values, scale)


# ------------------------------------------------------------------ QFI block

@dataclass(frozen=True)
class QfiConfig:
    mode: str = "spatial"
    lag: int = 1
    scales: tuple[float, float, float] = (1.0, 1.0, 1.0)
    floor: float = 1e-9

    def __post_init__(self):
        mode = _MODE_ALIASES.get(self.mode.lower(), self.mode.lower())
        if mode not in MODES:
            raise ValueError(f"unknown correlation mode {self.mode!r}")
        object.__setattr__(self, "mode", mode)
        object.__setattr__(self, "scales", tuple(float(s) for s in self.scales))
        if len(self.scales) != 3 or any(not s > 0 for s in self.scales):
            raise ValueError("scaling factors must be three positive numbers")
        if mode != "spatial" and self.lag < 1:
            raise ValueError("temporal modes need lag >= 1")
        if not self.floor > 0:
            raise ValueError("running-max floor must be positive")


@dataclass
class ChannelHistory:
    """Recent outputs and running maxima per (controller, gain channel)."""

    n_controllers: int
    depth: int = 1
    floor: float = 1e-9
    buffers: list[list[deque]] = field(init=False)
    maxima: np.ndarray = field(init=False)

    def __post_init__(self):
        self.buffers = [[deque(maxlen=self.depth + 1) for _ in range(3)] for _ in range(self.n_controllers)]
        self.maxima = np.full((self.n_controllers, 3), self.floor)

    def push(self, outputs: Sequence[Sequence[float]]) -> None:
        for c, triple in enumerate(outputs):
            for ch, v in enumerate(triple):
                self.buffers[c][ch].append(float(v))
                if v > self.maxima[c, ch]:
                    self.maxima[c, ch] = float(v)

    def lagged(self, c: int, ch: int, lag: int) -> float:
        return self.buffers[c][ch][-1 - lag]

    def filled(self) -> int:
        return len(self.buffers[0][0]) if self.buffers else 0


def new_history(n_controllers: int, cfg: QfiConfig) -> ChannelHistory:
    return ChannelHistory(n_controllers, depth=cfg.lag, floor=cfg.floor)


def qfi_step(outputs: Sequence[Sequence[float]], history: ChannelHistory,
             cfg: QfiConfig) -> tuple[float, float, float]:
    """Fuse several controllers' gain triples into one robust triple.

    ``history`` is updated with the raw outputs before encoding, so the
    running maxima always bound the current values.
    """
    n = len(outputs)
    if cfg.mode != "temporal" and n < 2:
        raise ValueError("spatial correlation modes need at least two controllers")
    history.push(outputs)
    out = []
    for ch in range(3):
        s = cfg.scales[ch]
        now = [float(o[ch]) for o in outputs]
        if cfg.mode != "spatial" and history.filled() <= cfg.lag:
            out.append(s * sum(now) / n)
            continue
        if cfg.mode == "spatial":
            g = select_and_decode(now, history.maxima[:, ch], s)
        elif cfg.mode == "temporal":
            per = []
            for c in range(n):
                vals = [now[c], history.lagged(c, ch, cfg.lag)]
                m = history.maxima[c, ch]
                per.append(select_and_decode(vals, [m, m], s))
            g = sum(per) / n
        else:
            vals, maxima = [], []
            for c in range(n):
                vals += [now[c], history.lagged(c, ch, cfg.lag)]
                maxima += [history.maxima[c, ch]] * 2
            g = select_and_decode(vals, maxima, s)
        out.append(g)
    return out[0], out[1], out[2]


# ------------------------------------------------------------ correlation locking

def build_locking_state(n: int) -> np.ndarray:
    """Density matrix on ``A = (k, t)`` times ``B``, with ``d = 2**n``.

    ``rho = 1/(2d) sum_{k,t} |k><k| (x) |t><t| (x) U_t|k><k|U_t^dag`` where
    ``U_0 = I`` and ``U_1 = H^{(x)n}``. Basis order is ``k``, ``t``, ``B``.
    """
    if not 1 <= n <= 4:
        raise ValueError("locking demo supports 1 <= n <= 4 qubits")
    d = 2 ** n
    unitaries = (np.eye(d), hadamard_matrix(n))
    rho = np.zeros((2 * d * d, 2 * d * d), dtype=complex)
    for k in range(d):
        for t in range(2):
            a = np.zeros(2 * d)
            a[2 * k + t] = 1.0
            b = unitaries[t][:, k]
            v = np.kron(a, b)
            rho += np.outer(v, v.conj())
    return rho / (2 * d)


def _mutual_information_bits(joint: np.ndarray) -> float:
    joint = joint / joint.sum()
    px = joint.sum(axis=1, keepdims=True)
    py = joint.sum(axis=0, keepdims=True)
    mask = joint > 0
    return float(np.sum(joint[mask] * np.log2(joint[mask] / (px @ py)[mask])))


def classical_correlation(rho: np.ndarray, strategy: str = "locked") -> float:
    """Classical mutual information (bits) between A's ``(k, t)`` and B's outcome.

    ``locked``: B measures in the computational basis without knowing ``t``.
    ``unlocked``: ``t`` is sent to B, who measures in basis ``U_t`` and so
    holds ``(t, outcome)``. The joint distribution is enumerated by the Born
    rule over every A-projector and B-outcome.
    """
    dim = rho.shape[0]
    d = math.isqrt(dim // 2)
    if 2 * d * d != dim:
        raise ValueError("not a locking-state density matrix")
    n = d.bit_length() - 1
    unitaries = (np.eye(d), hadamard_matrix(n))
    r = rho.reshape(2 * d, d, 2 * d, d)
    # block_a[a] = B-marginal conditioned on A basis state a (unnormalized)
    block_a = np.array([r[a, :, a, :] for a in range(2 * d)])
    if strategy == "locked":
        joint = np.array([[np.real(block_a[a][b, b]) for b in range(d)] for a in range(2 * d)])
        return _mutual_information_bits(joint)
    if strategy == "unlocked":
        joint = np.zeros((2 * d, 2 * d))
        for a in range(2 * d):
            t = a % 2
            u = unitaries[t]
            for b in range(d):
                vec = u[:, b]
                joint[a, 2 * b + t] = np.real(vec.conj() @ block_a[a] @ vec)
        return _mutual_information_bits(joint)
    raise ValueError(f"unknown strategy {strategy!r}")


def locking_table(ns: Sequence[int] = (1, 2)) -> list[tuple[int, float, float]]:
    rows = []
    for n in ns:
        rho = build_locking_state(n)
        rows.append((2 ** n, classical_correlation(rho, "locked"), classical_correlation(rho, "unlocked")))
    return rows
