"""Zero-order Sugeno knowledge bases producing PID gain triples."""

from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

KB_FORMAT = "qfuzzy-kb"
KB_VERSION = 1
INPUT_NAMES = ("e", "edot", "eint")
OUTPUT_NAMES = ("kp", "kd", "ki")
DEFAULT_GAIN_RANGE = (0.0, 20.0)


class InvalidKBError(ValueError):
    pass


@dataclass(frozen=True)
class MembershipFunction:
    """Triangular ``(left, peak, right)`` or gaussian ``(center, width)``."""

    shape: str
    params: tuple[float, ...]

    def __post_init__(self):
        object.__setattr__(self, "params", tuple(float(p) for p in self.params))
        if self.shape == "triangular":
            a, b, c = self.params
            if not a <= b <= c:
                raise ValueError(f"triangular supports out of order: {self.params}")
        elif self.shape == "gaussian":
            if len(self.params) != 2 or not self.params[1] > 0:
                raise ValueError("gaussian MF needs (center, width > 0)")
        else:
            raise ValueError(f"unknown MF shape {self.shape!r}")

    @property
    def peak(self) -> float:
        return self.params[1] if self.shape == "triangular" else self.params[0]

    def __call__(self, x: float) -> float:
        if self.shape == "gaussian":
            c, w = self.params
            return math.exp(-0.5 * ((x - c) / w) ** 2)
        a, b, c = self.params
        if x < a or x > c:
            return 0.0
        if x <= b:
            return 1.0 if b == a else (x - a) / (b - a)
        return 1.0 if c == b else (c - x) / (c - b)


def triangular(left: float, peak: float, right: float) -> MembershipFunction:
    return MembershipFunction("triangular", (left, peak, right))


def gaussian(center: float, width: float) -> MembershipFunction:
    return MembershipFunction("gaussian", (center, width))


@dataclass(frozen=True)
class LinguisticVariable:
    name: str
    universe: tuple[float, float]
    mfs: tuple[MembershipFunction, ...]

    def __post_init__(self):
        lo, hi = (float(v) for v in self.universe)
        object.__setattr__(self, "universe", (lo, hi))
        object.__setattr__(self, "mfs", tuple(self.mfs))
        if not lo < hi:
            raise ValueError(f"{self.name}: empty universe")
        if len(self.mfs) < 2:
            raise ValueError(f"{self.name}: need at least two membership functions")
        for mf in self.mfs:
            if mf.shape == "triangular" and not (lo <= mf.params[0] and mf.params[2] <= hi):
                raise ValueError(f"{self.name}: triangular MF leaves the universe")
        tri = [mf for mf in self.mfs if mf.shape == "triangular"]
        arr = np.array([mf.params for mf in tri]).reshape(-1, 3)
        object.__setattr__(self, "_tri_idx", np.array([i for i, mf in enumerate(self.mfs) if mf.shape == "triangular"], dtype=int))
        object.__setattr__(self, "_tri", arr)
        gau = [mf.params for mf in self.mfs if mf.shape == "gaussian"]
        object.__setattr__(self, "_gau_idx", np.array([i for i, mf in enumerate(self.mfs) if mf.shape == "gaussian"], dtype=int))
        object.__setattr__(self, "_gau", np.array(gau).reshape(-1, 2))
        if not len(gau):
            # memberships are linear between breakpoints: checking every
            # breakpoint and every midpoint covers the whole universe
            pts = np.unique(np.clip(np.r_[arr.reshape(-1), lo, hi], lo, hi))
            probe = np.r_[pts, 0.5 * (pts[1:] + pts[:-1])]
            if np.any(self.memberships_batch(probe).max(axis=1) <= 0.0):
                raise ValueError(f"{self.name}: membership functions leave part of the universe uncovered")

    @classmethod
    def uniform(cls, name: str, universe: tuple[float, float], n: int) -> "LinguisticVariable":
        """``n`` evenly spaced triangles forming a partition of unity."""
        lo, hi = universe
        peaks = np.linspace(lo, hi, n)
        mfs = []
        for i, p in enumerate(peaks):
            left = peaks[i - 1] if i > 0 else lo
            right = peaks[i + 1] if i < n - 1 else hi
            mfs.append(triangular(float(left), float(p), float(right)))
        return cls(name, (lo, hi), tuple(mfs))

    @classmethod
    def from_peaks(cls, name: str, universe: tuple[float, float], peaks: Sequence[float]) -> "LinguisticVariable":
        """Partition-of-unity triangles on sorted, universe-clipped ``peaks``."""
        lo, hi = universe
        pk = np.clip(np.sort(np.asarray(peaks, dtype=float)), lo, hi)
        pk[0], pk[-1] = lo, hi
        mfs = []
        for i, p in enumerate(pk):
            left = pk[i - 1] if i > 0 else lo
            right = pk[i + 1] if i < len(pk) - 1 else hi
            mfs.append(triangular(float(left), float(p), float(right)))
        return cls(name, (lo, hi), tuple(mfs))

    def __len__(self) -> int:
        return len(self.mfs)

    def clamp(self, x: float) -> float:
        lo, hi = self.universe
        return min(max(x, lo), hi)

    def memberships(self, x: float) -> np.ndarray:
        """Membership of the (clamped) scalar ``x`` in every MF."""
        return self.memberships_batch(np.array([x]))[0]

    def memberships_batch(self, xs: np.ndarray) -> np.ndarray:
        """``(len(xs), n_mfs)`` membership matrix for clamped inputs."""
        lo, hi = self.universe
        x = np.clip(np.asarray(xs, dtype=float), lo, hi)[:, None]
        out = np.empty((x.shape[0], len(self.mfs)))
        if len(self._tri_idx):
            a, b, c = self._tri[:, 0], self._tri[:, 1], self._tri[:, 2]
            with np.errstate(divide="ignore", invalid="ignore"):
                up = np.where(b > a, (x - a) / (b - a), 1.0)
                down = np.where(c > b, (c - x) / (c - b), 1.0)
            v = np.where(x <= b, up, down)
            v = np.where((x < a) | (x > c), 0.0, v)
            out[:, self._tri_idx] = v
        if len(self._gau_idx):
            c, w = self._gau[:, 0], self._gau[:, 1]
            out[:, self._gau_idx] = np.exp(-0.5 * ((x - c) / w) ** 2)
        return out

    def log_memberships_batch(self, xs: np.ndarray) -> np.ndarray:
        """Natural log of :meth:`memberships_batch`, exact for far Gaussian tails."""
        with np.errstate(divide="ignore"):
            out = np.log(self.memberships_batch(xs))
        if len(self._gau_idx):
            lo, hi = self.universe
            x = np.clip(np.asarray(xs, dtype=float), lo, hi)[:, None]
            c, w = self._gau[:, 0], self._gau[:, 1]
            out[:, self._gau_idx] = -0.5 * ((x - c) / w) ** 2
        return out


@dataclass(frozen=True)
class FuzzyRule:
    antecedent: tuple[int, ...]
    consequent: tuple[float, float, float]
    activation: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "antecedent", tuple(int(i) for i in self.antecedent))
        object.__setattr__(self, "consequent", tuple(float(c) for c in self.consequent))
        if any(c < 0 for c in self.consequent):
            raise InvalidKBError("rule consequent gains must be non-negative")
        if not 0.0 <= self.activation <= 1.0:
            raise InvalidKBError("activation level must lie in [0, 1]")


@dataclass(frozen=True)
class KnowledgeBase:
    variables: tuple[LinguisticVariable, ...]
    rules: tuple[FuzzyRule, ...]
    output_ranges: tuple[tuple[float, float], ...] = (DEFAULT_GAIN_RANGE,) * 3
    defaults: tuple[float, float, float] | None = None
    provenance: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "variables", tuple(self.variables))
        object.__setattr__(self, "rules", tuple(self.rules))
        object.__setattr__(self, "output_ranges", tuple(tuple(float(v) for v in r) for r in self.output_ranges))
        if self.defaults is None:
            object.__setattr__(self, "defaults", tuple(0.5 * (lo + hi) for lo, hi in self.output_ranges))
        else:
            object.__setattr__(self, "defaults", tuple(float(v) for v in self.defaults))
        sizes = [len(v) for v in self.variables]
        seen = set()
        for r in self.rules:
            if len(r.antecedent) != len(sizes):
                raise InvalidKBError("antecedent arity does not match the input variables")
            if any(not 0 <= i < n for i, n in zip(r.antecedent, sizes)):
                raise InvalidKBError(f"antecedent {r.antecedent} out of range")
            if r.antecedent in seen:
                raise InvalidKBError(f"duplicate antecedent {r.antecedent}")
            seen.add(r.antecedent)
        if len(self.rules) > math.prod(sizes):
            raise InvalidKBError("more rules than grid cells")
        ante = np.array([r.antecedent for r in self.rules], dtype=int).reshape(-1, len(sizes))
        cons = np.array([r.consequent for r in self.rules], dtype=float).reshape(-1, 3)
        object.__setattr__(self, "_ante", ante)
        object.__setattr__(self, "_cons", cons)

    @property
    def grid_size(self) -> int:
        return math.prod(len(v) for v in self.variables)

    @property
    def consequents(self) -> np.ndarray:
        return self._cons.copy()

    @property
    def antecedents(self) -> np.ndarray:
        return self._ante.copy()

    def with_consequents(self, cons: np.ndarray) -> "KnowledgeBase":
        rules = tuple(replace(r, consequent=tuple(float(c) for c in row))
                      for r, row in zip(self.rules, np.asarray(cons).reshape(-1, 3)))
        return replace(self, rules=rules)

    def with_rules(self, rules: Iterable[FuzzyRule]) -> "KnowledgeBase":
        return replace(self, rules=tuple(rules))

    def strengths(self, inputs: Sequence[float]) -> np.ndarray:
        """Product t-norm firing strength of every rule."""
        w = np.ones(len(self.rules))
        for j, (var, x) in enumerate(zip(self.variables, inputs)):
            w = w * var.memberships(x)[self._ante[:, j]]
        return w

    def strengths_batch(self, inputs: np.ndarray) -> np.ndarray:
        """``(N, n_rules)`` firing strengths for an ``(N, 3)`` input array."""
        inputs = np.asarray(inputs, dtype=float)
        w = np.ones((inputs.shape[0], len(self.rules)))
        for j, var in enumerate(self.variables):
            w *= var.memberships_batch(inputs[:, j])[:, self._ante[:, j]]
        return w

    def log_strengths_batch(self, inputs: np.ndarray) -> np.ndarray:
        inputs = np.asarray(inputs, dtype=float)
        lw = np.zeros((inputs.shape[0], len(self.rules)))
        for j, var in enumerate(self.variables):
            lw += var.log_memberships_batch(inputs[:, j])[:, self._ante[:, j]]
        return lw


def full_grid(variables: Sequence[LinguisticVariable], consequent=(0.0, 0.0, 0.0),
              **kw) -> KnowledgeBase:
    rules = [FuzzyRule(idx, consequent) for idx in itertools.product(*(range(len(v)) for v in variables))]
    return KnowledgeBase(tuple(variables), tuple(rules), **kw)


def default_variables(n_mfs: int = 9, universes=((-0.5, 0.5), (-2.0, 2.0), (-0.5, 0.5))) -> tuple[LinguisticVariable, ...]:
    return tuple(LinguisticVariable.uniform(name, u, n_mfs) for name, u in zip(INPUT_NAMES, universes))


def _check_inputs(inputs) -> tuple[float, ...]:
    vals = tuple(float(x) for x in inputs)
    if not all(math.isfinite(v) for v in vals):
        raise ValueError(f"non-finite fuzzy inputs {vals}")
    return vals


def infer(kb: KnowledgeBase, inputs: Sequence[float]) -> tuple[float, float, float]:
    """Sugeno weighted average of rule consequents; inputs are clamped to each universe."""
    if not kb.rules:
        raise InvalidKBError("knowledge base has no rules")
    x = _check_inputs(inputs)
    w = kb.strengths(x)
    total = w.sum()
    if total <= 0.0:
        g = _underflow_output(kb, np.array([x]))[0]
    else:
        g = (w @ kb._cons) / total
    return float(g[0]), float(g[1]), float(g[2])


def infer_batch(kb: KnowledgeBase, inputs: np.ndarray) -> np.ndarray:
    """Vectorized :func:`infer` over the rows of ``inputs``."""
    if not kb.rules:
        raise InvalidKBError("knowledge base has no rules")
    inputs = np.asarray(inputs, dtype=float)
    w = kb.strengths_batch(inputs)
    out = weighted_output(w, kb._cons, kb.defaults)
    dead = w.sum(axis=1) <= 0
    if dead.any():
        out[dead] = _underflow_output(kb, inputs[dead])
    return out


def _underflow_output(kb: KnowledgeBase, inputs: np.ndarray) -> np.ndarray:
    """Rows whose float64 firing strengths all vanished.

    Gaussian tails can underflow even though the rule does fire; redo the
    weighting in the log domain and fall back to the defaults only when no
    rule fires at all.
    """
    lw = kb.log_strengths_batch(inputs)
    top = lw.max(axis=1)
    out = np.tile(np.asarray(kb.defaults, dtype=float), (len(inputs), 1))
    live = np.isfinite(top)
    if live.any():
        w = np.exp(lw[live] - top[live, None])
        out[live] = (w @ kb._cons) / w.sum(axis=1)[:, None]
    return out


def weighted_output(w: np.ndarray, cons: np.ndarray, defaults: Sequence[float]) -> np.ndarray:
    total = w.sum(axis=1)
    safe = np.where(total > 0, total, 1.0)
    out = (w @ cons) / safe[:, None]
    out[total <= 0] = defaults
    return out


def pid_force(gains: Sequence[float], e: float, edot: float, eint: float,
              bounds: tuple[float, float]) -> float:
    kp, kd, ki = gains
    u = kp * e + kd * edot + ki * eint
    return min(max(u, bounds[0]), bounds[1])


def fuzzy_pid(kb: KnowledgeBase, e: float, edot: float, eint: float,
              bounds: tuple[float, float] = (-0.5, 5.0)) -> float:
    return pid_force(infer(kb, (e, edot, eint)), e, edot, eint, bounds)


@dataclass(frozen=True)
class ActivationStats:
    max: np.ndarray
    mean: np.ndarray


def rule_activation_scan(kb: KnowledgeBase, inputs: Sequence[Sequence[float]]) -> ActivationStats:
    inputs = list(inputs)
    if not inputs:
        raise ValueError("activation scan needs at least one input")
    w = kb.strengths_batch(np.array([_check_inputs(x) for x in inputs]))
    return ActivationStats(w.max(axis=0), w.mean(axis=0))


@dataclass
class ErrorIntegrator:
    """Trapezoidal error integral clamped to ``bounds`` (anti-windup)."""

    bounds: tuple[float, float] = (-0.5, 0.5)
    value: float = 0.0
    _last: float | None = None

    def update(self, e: float, dt: float) -> float:
        if self._last is not None:
            self.value += 0.5 * (e + self._last) * dt
        self._last = e
        self.value = min(max(self.value, self.bounds[0]), self.bounds[1])
        return self.value


# --------------------------------------------------------------- serialization

def _mf_to_dict(mf: MembershipFunction) -> dict:
    return {"shape": mf.shape, "params": list(mf.params)}


def kb_to_dict(kb: KnowledgeBase) -> dict:
    return {
        "format": KB_FORMAT,
        "version": KB_VERSION,
        "variables": [
            {"name": v.name, "universe": list(v.universe), "mfs": [_mf_to_dict(m) for m in v.mfs]}
            for v in kb.variables
        ],
        "outputs": [{"name": n, "range": list(r)} for n, r in zip(OUTPUT_NAMES, kb.output_ranges)],
        "rules": [
            {"if": list(r.antecedent), "then": list(r.consequent), "activation": r.activation}
            for r in kb.rules
        ],
        "defaults": list(kb.defaults),
        "provenance": kb.provenance,
    }


def kb_from_dict(doc: dict) -> KnowledgeBase:
    if doc.get("format") != KB_FORMAT:
        raise InvalidKBError(f"not a knowledge-base document: format={doc.get('format')!r}")
    if doc.get("version") != KB_VERSION:
        raise InvalidKBError(f"unsupported KB version {doc.get('version')!r}")
    variables = tuple(
        LinguisticVariable(v["name"], tuple(v["universe"]),
                           tuple(MembershipFunction(m["shape"], tuple(m["params"])) for m in v["mfs"]))
        for v in doc["variables"]
    )
    rules = tuple(FuzzyRule(tuple(r["if"]), tuple(r["then"]), r.get("activation", 0.0)) for r in doc["rules"])
    return KnowledgeBase(
        variables, rules,
        output_ranges=tuple(tuple(o["range"]) for o in doc["outputs"]),
        defaults=tuple(doc["defaults"]),
        provenance=dict(doc.get("provenance", {})),
    )


def dumps_kb(kb: KnowledgeBase) -> str:
    return json.dumps(kb_to_dict(kb), indent=1, sort_keys=True)


def loads_kb(text: str) -> KnowledgeBase:
    return kb_from_dict(json.loads(text))


def save_kb(kb: KnowledgeBase, path) -> None:
    Path(path).write_text(dumps_kb(kb) + "\n")


def load_kb(path) -> KnowledgeBase:
    return loads_kb(Path(path).read_text())
