"""Soft computing optimizer: GA chain that designs knowledge bases.

Stage 1 records a teaching signal (TS) from a GA-tuned PID run on the plant.
Stage 2 (GA1) shapes the membership functions, stage 3 builds and filters
the rule grid, stage 4 (GA2) optimizes consequents and rule keep bits, and
stage 5 (GA3 plus optional BP) fine-tunes MF peaks and consequents.

Approximation errors are mean squared errors normalized per output channel
by the width of that channel's output range, so channels with very
different gain scales weigh equally.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
from scipy.spatial import cKDTree

from .bench import (FixedPID, RunReport, ScenarioConfig, ScheduledPID, ControllerSpec,
                    episode_fitness, run_episode)
from .fuzzy import (FuzzyRule, InvalidKBError, KnowledgeBase, LinguisticVariable, INPUT_NAMES,
                    full_grid, weighted_output)
from .ga import GAConfig, GAResult, run_ga

TS_COLUMNS = ("t", "e", "edot", "eint", "kp", "kd", "ki")
TS_SOURCES = ("math-model", "ga-pid")
FITNESS_KINDS = ("mse_approx", "abs_error", "mutual_information", "control_j1", "control_j2")
DEFAULT_GAIN_BOX = ((0.0, 100.0), (0.0, 400.0), (0.0, 20.0))
EXACT_TOL = 1e-12


class OptimizationFailedError(RuntimeError):
    def __init__(self, message: str, best: RunReport | None = None, genome=None):
        super().__init__(message)
        self.best = best
        self.genome = genome


# ------------------------------------------------------------ teaching signal

@dataclass(frozen=True)
class TeachingSignal:
    t: np.ndarray
    inputs: np.ndarray
    targets: np.ndarray
    source: str = "ga-pid"

    def __post_init__(self):
        t = np.asarray(self.t, dtype=float).reshape(-1)
        x = np.asarray(self.inputs, dtype=float).reshape(-1, 3)
        y = np.asarray(self.targets, dtype=float).reshape(-1, 3)
        if len(t) == 0 or len(t) != len(x) or len(x) != len(y):
            raise ValueError("teaching signal must be nonempty with matching lengths")
        if not (np.all(np.isfinite(t)) and np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
            raise ValueError("teaching signal has non-finite entries")
        if np.any(y < 0):
            raise ValueError("teaching-signal target gains must be non-negative")
        if self.source not in TS_SOURCES:
            raise ValueError(f"unknown TS source {self.source!r}")
        object.__setattr__(self, "t", t)
        object.__setattr__(self, "inputs", x)
        object.__setattr__(self, "targets", y)

    def __len__(self) -> int:
        return len(self.t)

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write(f"# source={self.source}\n")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(TS_COLUMNS)
        for ti, x, y in zip(self.t, self.inputs, self.targets):
            w.writerow([repr(float(v)) for v in (ti, *x, *y)])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> "TeachingSignal":
        lines = text.splitlines()
        source = "ga-pid"
        if lines and lines[0].startswith("# source="):
            source = lines.pop(0).split("=", 1)[1].strip()
        rows = list(csv.reader(lines))
        if not rows or tuple(rows[0]) != TS_COLUMNS:
            raise ValueError(f"teaching-signal header must be {','.join(TS_COLUMNS)}")
        data = np.array([[float(v) for v in r] for r in rows[1:]], dtype=float).reshape(-1, 7)
        return cls(data[:, 0], data[:, 1:4], data[:, 4:7], source)

    def save(self, path) -> None:
        Path(path).write_text(self.to_csv())

    @classmethod
    def load(cls, path) -> "TeachingSignal":
        return cls.from_csv(Path(path).read_text())


def ts_from_report(report: RunReport, source: str = "ga-pid") -> TeachingSignal:
    s = report.series
    if "e" not in s:
        raise ValueError("run report was recorded without controller inputs")
    x = np.column_stack((s["e"], s["edot"], s["eint"]))
    y = np.column_stack((s["kp"], s["kd"], s["ki"]))
    return TeachingSignal(s["t"], x, y, source)


# ---------------------------------------------------------------- criteria

@dataclass(frozen=True)
class FitnessCriterion:
    """Minimized score of a KB output against TS targets (information negated)."""

    kind: str = "mse_approx"
    bins: int = 16

    def __post_init__(self):
        if self.kind not in FITNESS_KINDS:
            raise ValueError(f"unknown fitness criterion {self.kind!r}")

    @property
    def is_control(self) -> bool:
        return self.kind.startswith("control_")

    def score(self, pred: np.ndarray, target: np.ndarray, widths: Sequence[float]) -> float:
        if self.kind == "mse_approx":
            return normalized_mse(pred, target, widths)
        if self.kind == "abs_error":
            return float(np.mean(np.abs(pred - target) / np.asarray(widths)))
        if self.kind == "mutual_information":
            return -mutual_information(pred, target, self.bins)
        raise ValueError(f"{self.kind} is scored on the plant, not on a teaching signal")


def normalized_mse(pred: np.ndarray, target: np.ndarray, widths: Sequence[float]) -> float:
    r = (pred - target) / np.asarray(widths, dtype=float)
    return float(np.mean(r * r))


def mutual_information(pred: np.ndarray, target: np.ndarray, bins: int = 16) -> float:
    """Sum over channels of the histogram MI estimate (nats); constant channels add 0."""
    pred = np.asarray(pred, dtype=float).reshape(len(pred), -1)
    target = np.asarray(target, dtype=float).reshape(len(target), -1)
    total = 0.0
    for c in range(pred.shape[1]):
        x, y = pred[:, c], target[:, c]
        if np.ptp(x) == 0 or np.ptp(y) == 0:
            continue
        joint, _, _ = np.histogram2d(x, y, bins=bins)
        joint /= joint.sum()
        px = joint.sum(axis=1, keepdims=True)
        py = joint.sum(axis=0, keepdims=True)
        m = joint > 0
        total += float(np.sum(joint[m] * np.log(joint[m] / (px @ py)[m])))
    return total


def _widths(ranges) -> np.ndarray:
    return np.array([hi - lo for lo, hi in ranges], dtype=float)


def approx_error(kb: KnowledgeBase, ts: TeachingSignal,
                 criterion: FitnessCriterion | str = "mse_approx") -> float:
    crit = criterion if isinstance(criterion, FitnessCriterion) else FitnessCriterion(criterion)
    pred = weighted_output(kb.strengths_batch(ts.inputs), kb._cons, kb.defaults)
    return crit.score(pred, ts.targets, _widths(kb.output_ranges))


# ------------------------------------------------------------ stage 1: TS

def _default_simulate(scenario: ScenarioConfig):
    def simulate(schedule: np.ndarray, record: bool) -> RunReport:
        if len(schedule) == 1:
            ctrl = FixedPID(tuple(schedule[0]))
        else:
            ctrl = ScheduledPID(schedule, scenario.duration)
        return run_episode(scenario, ctrl, record=record)
    return simulate


def generate_teaching_signal(scenario: ScenarioConfig, ga: GAConfig, horizon: float | None = None,
                             criterion: str | None = None, gain_box=DEFAULT_GAIN_BOX,
                             segments: int = 1, source: str | None = None,
                             simulate: Callable[[np.ndarray, bool], RunReport] | None = None,
                             seeds: Sequence[Sequence[float]] = ()) -> TeachingSignal:
    """GA over PID gains on the plant; the winning run's (inputs, gains) pairs form the TS.

    ``segments > 1`` searches a piecewise-constant gain schedule over the
    horizon instead of one constant triple (tagged ``math-model``).
    ``simulate(schedule, record)`` replaces the plant, e.g. by a stub.
    """
    if horizon is not None:
        scenario = replace(scenario, duration=float(horizon))
    crit = criterion or scenario.criterion
    source = source or ("ga-pid" if segments == 1 else "math-model")
    sim = simulate or _default_simulate(scenario)
    lo = np.tile([b[0] for b in gain_box], segments)
    hi = np.tile([b[1] for b in gain_box], segments)

    def fitness(g):
        rep = sim(g.reshape(segments, 3), False)
        return episode_fitness(rep, crit, scenario.duration)

    res = run_ga(fitness, lo, hi, ga, seeds=[np.tile(s, segments) if len(s) == 3 else s for s in seeds])
    best = sim(res.best.reshape(segments, 3), True)
    if best.diverged:
        raise OptimizationFailedError(
            f"every PID candidate lost stability (best fell at t={best.divergence_time})", best, res.best)
    ts = ts_from_report(best, source)
    object.__setattr__(ts, "_ga", res)
    return ts


# ------------------------------------------------------- array-level helpers

def _grid_index(sizes: Sequence[int]) -> np.ndarray:
    return np.array(np.unravel_index(np.arange(math.prod(sizes)), sizes)).T


def _strengths(mems: Sequence[np.ndarray], ante: np.ndarray) -> np.ndarray:
    w = mems[0][:, ante[:, 0]].copy()
    for j in range(1, len(mems)):
        w *= mems[j][:, ante[:, j]]
    return w


def _clip_inputs(ts: TeachingSignal, universes) -> np.ndarray:
    lo = np.array([u[0] for u in universes])
    hi = np.array([u[1] for u in universes])
    return np.clip(ts.inputs, lo, hi)


def is_partition(var: LinguisticVariable) -> bool:
    """True if ``var`` is a chain of triangles forming a partition of unity."""
    if any(mf.shape != "triangular" for mf in var.mfs):
        return False
    pk = [mf.peak for mf in var.mfs]
    if pk[0] != var.universe[0] or pk[-1] != var.universe[1] or any(b < a for a, b in zip(pk, pk[1:])):
        return False
    return var == LinguisticVariable.from_peaks(var.name, var.universe, pk)


# ------------------------------------------------------------ stage 2: GA1

@dataclass
class MfDesign:
    variables: tuple[LinguisticVariable, ...]
    error: float
    ga: GAResult


def _decode_layout(genome: np.ndarray, universes, mf_range, names) -> tuple[LinguisticVariable, ...]:
    nmin, nmax = mf_range
    block = 1 + (nmax - 2)
    out = []
    for j, (lo, hi) in enumerate(universes):
        g = genome[j * block:(j + 1) * block]
        n = int(min(max(math.floor(g[0]), nmin), nmax))
        interior = np.sort(g[1:1 + n - 2])
        frac = np.concatenate(([0.0], interior, [1.0]))
        out.append(LinguisticVariable.from_peaks(names[j], (lo, hi), lo + frac * (hi - lo)))
    return tuple(out)


def induce_consequents(ts: TeachingSignal, variables: Sequence[LinguisticVariable],
                       tree: cKDTree | None = None) -> np.ndarray:
    """Nearest-consequent assignment: each grid cell takes the target of the
    TS sample closest (in universe-normalized input space) to its peak point."""
    scale = np.array([v.universe[1] - v.universe[0] for v in variables])
    if tree is None:
        tree = cKDTree(_clip_inputs(ts, [v.universe for v in variables]) / scale)
    peaks = [np.array([mf.peak for mf in v.mfs]) for v in variables]
    idx = _grid_index([len(p) for p in peaks])
    pts = np.column_stack([peaks[j][idx[:, j]] for j in range(len(peaks))])
    _, nearest = tree.query(pts / scale)
    return ts.targets[nearest]


def ga1_shape_mfs(ts: TeachingSignal, bounds, ga: GAConfig, mf_range: tuple[int, int] = (3, 9),
                  output_ranges=None, names: Sequence[str] = INPUT_NAMES) -> MfDesign:
    """GA over MF counts and peak placement for every input variable.

    ``bounds`` are the input universes. Fitness is the approximation error of
    the full-grid KB induced by :func:`induce_consequents`; ties (within
    1e-12) go to fewer MFs in total. Uniform layouts for every admissible
    count are seeded into the initial population.
    """
    universes = [tuple(map(float, b)) for b in bounds]
    nmin, nmax = mf_range
    if not 2 <= nmin <= nmax:
        raise ValueError("invalid MF count range")
    widths = _widths(output_ranges or ((0.0, 1.0),) * 3)
    block = 1 + (nmax - 2)
    scale = np.array([hi - lo for lo, hi in universes])
    x = _clip_inputs(ts, universes)
    tree = cKDTree(x / scale)
    lo_g = np.tile(np.r_[nmin, np.zeros(nmax - 2)], len(universes))
    hi_g = np.tile(np.r_[nmax + 1 - 1e-9, np.ones(nmax - 2)], len(universes))

    def error_of(variables):
        cons = induce_consequents(ts, variables, tree)
        mems = [v.memberships_batch(x[:, j]) for j, v in enumerate(variables)]
        ante = _grid_index([len(v) for v in variables])
        pred = weighted_output(_strengths(mems, ante), cons, np.zeros(3))
        return normalized_mse(pred, ts.targets, widths)

    def fitness(g):
        err = error_of(_decode_layout(g, universes, mf_range, names))
        return 0.0 if err < EXACT_TOL else err

    def n_mfs(g):
        return sum(len(v) for v in _decode_layout(g, universes, mf_range, names))

    seeds = []
    for n in range(nmin, nmax + 1):
        frac = np.full(nmax - 2, 0.5)
        frac[:n - 2] = np.linspace(0, 1, n)[1:-1]
        seeds.append(np.tile(np.r_[n + 0.5, frac], len(universes)))
    res = run_ga(fitness, lo_g, hi_g, ga, seeds=seeds, tiebreak=n_mfs)
    variables = _decode_layout(res.best, universes, mf_range, names)
    return MfDesign(variables, error_of(variables), res)


# ------------------------------------------------------------ stage 3: rules

def create_rules(ts: TeachingSignal, variables: Sequence[LinguisticVariable], tl: float,
                 output_ranges=DEFAULT_GAIN_BOX, defaults=None) -> KnowledgeBase:
    """Full grid with activation-weighted TS-mean consequents, filtered by ``tl``.

    Rules whose maximum activation over the TS is below ``tl`` are dropped;
    ``tl`` is clamped to [0, 1].
    """
    tl = min(max(float(tl), 0.0), 1.0)
    grid = full_grid(variables, output_ranges=output_ranges, defaults=defaults)
    w = grid.strengths_batch(ts.inputs)
    act = w.max(axis=0)
    mass = w.sum(axis=0)
    mid = np.array(grid.defaults)
    cons = np.where(mass[:, None] > 0, (w.T @ ts.targets) / np.where(mass > 0, mass, 1.0)[:, None], mid)
    lo = np.array([r[0] for r in grid.output_ranges])
    hi = np.array([r[1] for r in grid.output_ranges])
    cons = np.clip(cons, lo, hi)
    rules = [FuzzyRule(r.antecedent, tuple(c), float(min(a, 1.0)))
             for r, c, a in zip(grid.rules, cons, act) if a >= tl]
    if not rules:
        raise InvalidKBError(f"threshold {tl} removed every rule")
    return replace(grid, rules=tuple(rules), provenance={"stage": "create_rules", "tl": tl})


# ------------------------------------------------------------ stage 4: GA2

@dataclass
class KbDesign:
    kb: KnowledgeBase
    error: float
    ga: GAResult | None = None
    extra: dict = field(default_factory=dict)


def default_lambda(kb: KnowledgeBase, ts: TeachingSignal) -> float:
    return 1e-4 * approx_error(kb, ts)


def ga2_optimize_rules(kb: KnowledgeBase, ts: TeachingSignal, ga: GAConfig,
                       lam: float | None = None, prune: bool = True) -> KbDesign:
    """GA over consequents plus one keep/drop gene per rule (kept if >= 0.5).

    Fitness is the TS approximation error plus ``lam`` times the number of
    kept rules. The input KB (all rules kept) seeds the population.
    ``prune=False`` drops the keep genes and keeps every rule.
    """
    if not kb.rules:
        raise InvalidKBError("knowledge base has no rules")
    lam = default_lambda(kb, ts) if lam is None else float(lam)
    r = len(kb.rules)
    w = kb.strengths_batch(ts.inputs)
    widths = _widths(kb.output_ranges)
    nk = r if prune else 0
    lo = np.r_[np.tile([o[0] for o in kb.output_ranges], r), np.zeros(nk)]
    hi = np.r_[np.tile([o[1] for o in kb.output_ranges], r), np.ones(nk)]

    def split(g):
        keep = g[3 * r:] >= 0.5 if prune else np.ones(r, dtype=bool)
        return g[:3 * r].reshape(r, 3), keep

    def error(g):
        cons, keep = split(g)
        if not keep.any():
            return math.inf
        pred = weighted_output(w[:, keep], cons[keep], kb.defaults)
        return normalized_mse(pred, ts.targets, widths)

    def fitness(g):
        return error(g) + lam * int(split(g)[1].sum())

    seed = np.r_[kb._cons.reshape(-1), np.ones(nk)]
    res = run_ga(fitness, lo, hi, ga, seeds=[seed])
    cons, keep = split(res.best)
    rules = [replace(rule, consequent=tuple(c)) for rule, c, k in zip(kb.rules, cons, keep) if k]
    out = replace(kb, rules=tuple(rules), provenance={**kb.provenance, "stage": "ga2", "lambda": lam})
    return KbDesign(out, error(res.best), res, {"fitness": res.fitness})


# ------------------------------------------------------- stage 5: GA3 + BP

def bp_gradient(kb: KnowledgeBase, ts: TeachingSignal) -> np.ndarray:
    """Exact gradient of the normalized MSE with respect to the consequents."""
    phi, base = _phi(kb, ts)
    return _grad(phi, base, kb._cons, ts.targets, _widths(kb.output_ranges))


def _phi(kb: KnowledgeBase, ts: TeachingSignal) -> tuple[np.ndarray, np.ndarray]:
    w = kb.strengths_batch(ts.inputs)
    total = w.sum(axis=1)
    phi = w / np.where(total > 0, total, 1.0)[:, None]
    base = np.where((total <= 0)[:, None], np.array(kb.defaults), 0.0)
    return phi, base


def _grad(phi, base, cons, targets, widths):
    resid = (phi @ cons + base - targets) / widths ** 2
    return (2.0 / targets.size) * (phi.T @ resid)


def bp_refine(kb: KnowledgeBase, ts: TeachingSignal, steps: int = 500) -> KnowledgeBase:
    """Projected Nesterov gradient descent on consequents, step ``1/L``."""
    phi, base = _phi(kb, ts)
    widths = _widths(kb.output_ranges)
    lo = np.array([o[0] for o in kb.output_ranges])
    hi = np.array([o[1] for o in kb.output_ranges])
    lmax = float(np.linalg.eigvalsh(phi.T @ phi)[-1]) if len(phi) else 0.0
    if lmax <= 0:
        return kb
    step = widths ** 2 * ts.targets.size / (2.0 * lmax)
    c = kb._cons.copy()
    y, tk = c.copy(), 1.0
    for _ in range(steps):
        c_new = np.clip(y - step * _grad(phi, base, y, ts.targets, widths), lo, hi)
        t_new = 0.5 * (1.0 + math.sqrt(1.0 + 4.0 * tk * tk))
        y = c_new + ((tk - 1.0) / t_new) * (c_new - c)
        c, tk = c_new, t_new
    return kb.with_consequents(c)


def ga3_refine(kb: KnowledgeBase, ts: TeachingSignal, criterion: FitnessCriterion | str,
               ga: GAConfig, bp_steps: int = 0) -> KbDesign:
    """GA fine-tune of MF peaks (partition variables only) and consequents, then BP.

    BP always descends the squared error; its result is kept only if it does
    not worsen ``criterion``.
    """
    crit = criterion if isinstance(criterion, FitnessCriterion) else FitnessCriterion(criterion)
    if crit.kind not in ("mse_approx", "mutual_information"):
        raise ValueError("ga3 criterion must be mse_approx or mutual_information")
    widths = _widths(kb.output_ranges)
    tunable = [is_partition(v) for v in kb.variables]
    sizes = [len(v) - 2 if t else 0 for v, t in zip(kb.variables, tunable)]
    n_mf = sum(sizes)
    r = len(kb.rules)
    ante = kb._ante

    def peaks_frac(v):
        lo, hi = v.universe
        return [(mf.peak - lo) / (hi - lo) for mf in v.mfs[1:-1]]

    def decode(g):
        variables, k = [], 0
        for v, t, s in zip(kb.variables, tunable, sizes):
            if t:
                lo, hi = v.universe
                frac = np.concatenate(([0.0], np.sort(g[k:k + s]), [1.0]))
                v = LinguisticVariable.from_peaks(v.name, v.universe, lo + frac * (hi - lo))
            variables.append(v)
            k += s
        return variables, g[n_mf:].reshape(r, 3)

    def predict(g):
        variables, cons = decode(g)
        mems = [v.memberships_batch(ts.inputs[:, j]) for j, v in enumerate(variables)]
        return weighted_output(_strengths(mems, ante), cons, kb.defaults)

    def fitness(g):
        return crit.score(predict(g), ts.targets, widths)

    seed = np.r_[[f for v, t in zip(kb.variables, tunable) if t for f in peaks_frac(v)], kb._cons.reshape(-1)]
    lo = np.r_[np.zeros(n_mf), np.tile([o[0] for o in kb.output_ranges], r)]
    hi = np.r_[np.ones(n_mf), np.tile([o[1] for o in kb.output_ranges], r)]
    res = run_ga(fitness, lo, hi, ga, seeds=[seed])
    variables, cons = decode(res.best)
    out = replace(kb, variables=tuple(variables),
                  rules=tuple(replace(rule, consequent=tuple(c)) for rule, c in zip(kb.rules, cons)),
                  provenance={**kb.provenance, "stage": "ga3", "criterion": crit.kind})
    score = approx_error(out, ts, crit)
    if bp_steps > 0:
        cand = bp_refine(out, ts, bp_steps)
        cand_score = approx_error(cand, ts, crit)
        if cand_score <= score:
            out = replace(cand, provenance={**out.provenance, "bp_steps": bp_steps})
            score = cand_score
    return KbDesign(out, score, res)


# ------------------------------------------------------------ full pipeline

@dataclass
class PipelineReport:
    kb: KnowledgeBase
    errors: dict[str, float]
    histories: dict[str, list[float]]


def design_kb(ts: TeachingSignal, universes, ga: GAConfig, tl: float = 0.0,
              output_ranges=DEFAULT_GAIN_BOX, mf_range: tuple[int, int] = (3, 9),
              criterion: str = "mse_approx", bp_steps: int = 500, lam: float | None = None,
              ga1: GAConfig | None = None, ga2: GAConfig | None = None,
              ga3: GAConfig | None = None, prune: bool = True) -> PipelineReport:
    """Stages 2 to 5 on one TS.

    A stage whose output approximates the TS worse than its input is
    discarded (the input passes through), so the error sequence is
    non-increasing from stage 3 onwards.
    """
    mf = ga1_shape_mfs(ts, universes, ga1 or ga, mf_range, output_ranges)
    kb3 = create_rules(ts, mf.variables, tl, output_ranges)
    errors = {"ga1": mf.error, "create_rules": approx_error(kb3, ts)}
    hist = {"ga1": mf.ga.history}
    d4 = ga2_optimize_rules(kb3, ts, ga2 or ga, lam, prune)
    hist["ga2"] = d4.ga.history
    kb4 = d4.kb if d4.error <= errors["create_rules"] else kb3
    errors["ga2"] = approx_error(kb4, ts)
    d5 = ga3_refine(kb4, ts, criterion, ga3 or ga, bp_steps)
    hist["ga3"] = d5.ga.history
    kb5 = d5.kb
    if approx_error(kb5, ts) > errors["ga2"]:
        kb5 = kb4
    errors["ga3"] = approx_error(kb5, ts)
    kb5 = replace(kb5, provenance={**kb5.provenance, "stage": "sco", "ts_source": ts.source})
    return PipelineReport(kb5, errors, hist)


# ------------------------------------------------------ plant-in-the-loop

CANDIDATE_KINDS = ("kb", "scale")
SCALE_BOUNDS = (0.1, 3.0)


@dataclass(frozen=True)
class PlantTask:
    """What a device evaluates: ``cycles`` control steps under a candidate.

    Fitness is the mean penalized criterion over every scenario in
    ``scenarios`` and ``repeats`` seeds of each (seed, seed+1, ...); each
    scenario uses its own criterion unless ``criterion`` overrides it.
    ``kind='kb'`` candidates are consequent arrays for ``base.kbs[0]``;
    ``kind='scale'`` candidates are QFI scaling triples for ``base``.
    """

    scenarios: tuple[ScenarioConfig, ...]
    base: ControllerSpec
    kind: str = "kb"
    cycles: int = 2000
    criterion: str | None = None
    repeats: int = 1

    def __post_init__(self):
        if isinstance(self.scenarios, ScenarioConfig):
            object.__setattr__(self, "scenarios", (self.scenarios,))
        object.__setattr__(self, "scenarios", tuple(self.scenarios))
        if not self.scenarios:
            raise ValueError("plant task needs at least one scenario")
        if self.kind not in CANDIDATE_KINDS:
            raise ValueError(f"unknown candidate kind {self.kind!r}")
        if self.cycles < 1 or self.repeats < 1:
            raise ValueError("evaluation cycles and repeats must be >= 1")
        if self.kind == "kb" and self.base.kind != "fuzzy_single":
            raise ValueError("kb candidates need a fuzzy_single base controller")
        if self.kind == "scale" and self.base.kind != "qfi":
            raise ValueError("scale candidates need a qfi base controller")

    @property
    def size(self) -> int:
        return 3 * len(self.base.kbs[0].rules) if self.kind == "kb" else 3

    def bounds(self) -> tuple[np.ndarray, np.ndarray]:
        if self.kind == "scale":
            return np.full(3, SCALE_BOUNDS[0]), np.full(3, SCALE_BOUNDS[1])
        kb = self.base.kbs[0]
        r = len(kb.rules)
        return (np.tile([o[0] for o in kb.output_ranges], r), np.tile([o[1] for o in kb.output_ranges], r))

    def current(self) -> np.ndarray:
        if self.kind == "scale":
            return np.array(self.base.qfi.scales, dtype=float)
        return self.base.kbs[0]._cons.reshape(-1).copy()

    def controller(self, genome: Sequence[float]) -> ControllerSpec:
        g = np.asarray(genome, dtype=float)
        if g.size != self.size:
            raise ValueError(f"candidate has {g.size} values, expected {self.size}")
        if self.kind == "scale":
            return replace(self.base, qfi=replace(self.base.qfi, scales=tuple(g)))
        return replace(self.base, kbs=(self.base.kbs[0].with_consequents(g.reshape(-1, 3)),))

    def evaluate(self, genome: Sequence[float]) -> float:
        spec = self.controller(genome)
        total = 0.0
        for sc in self.scenarios:
            crit = self.criterion or sc.criterion
            for r in range(self.repeats):
                rep = run_episode(sc.with_seed(sc.seed + r), spec, n_steps=self.cycles, record=False)
                total += episode_fitness(rep, crit, self.cycles * sc.dt)
        return total / (len(self.scenarios) * self.repeats)


def optimize_on_plant(task: PlantTask, ga: GAConfig) -> GAResult:
    """Local GA with the device's fitness; the base candidate is seeded."""
    lo, hi = task.bounds()
    return run_ga(task.evaluate, lo, hi, ga, seeds=[task.current()])
