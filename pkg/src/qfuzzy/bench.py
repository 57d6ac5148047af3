"""Closed-loop episodes, scenario library, controller comparison and reports.

One episode: the angle sensor (plus scaled Gaussian noise) feeds an error
pipeline whose ring buffer delays the angle error, the rate channel comes
from its own undelayed sensor, the controller turns (e, edot, eint) into PID
gains, and the saturated force drives one RK4 step of the plant.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np

from . import dynamics as dyn
from .dynamics import CartPoleParams, CartPoleState, NoiseSpec
from .fuzzy import ErrorIntegrator, KnowledgeBase, infer, load_kb, kb_to_dict, kb_from_dict
from .qfi import QfiConfig, new_history, qfi_step

FALL_ANGLE = math.pi / 2
SERIES_COLUMNS = ("t", "theta", "theta_dot", "z", "z_dot", "u", "kp", "kd", "ki",
                  "e_raw", "e", "edot", "eint", "dS_theta", "dS_z", "dS_u")
METRIC_NAMES = ("J1", "J2", "ISE", "IAE", "energy")


class ConfigError(ValueError):
    """Bad scenario/controller configuration (CLI exit code 2)."""


def derive_seed(seed: int, stream: int) -> int:
    return int(np.random.SeedSequence([seed % 2 ** 63, stream]).generate_state(1, np.uint64)[0])


# ------------------------------------------------------------------ scenarios

@dataclass(frozen=True)
class ScenarioConfig:
    """Plant, excitation and sensing conditions for one episode.

    ``initial`` is ``(theta_deg, theta_dot, z, z_dot)`` with the angle in
    degrees. ``delay`` (s) must be a whole number of ``dt`` steps.
    """

    name: str = "custom"
    noise: NoiseSpec = NoiseSpec()
    sensor_coeff: float = 0.0
    delay: float = 0.0
    initial: tuple[float, float, float, float] = (-10.0, -0.1, 0.0, 0.0)
    duration: float = 20.0
    dt: float = 0.01
    seed: int = 0
    criterion: str = "J1"
    params: CartPoleParams = CartPoleParams()

    def __post_init__(self):
        if not self.duration > 0 or not self.dt > 0:
            raise ConfigError("duration and dt must be positive")
        if self.delay < 0:
            raise ConfigError("delay must be non-negative")
        steps = self.delay / self.dt
        if abs(steps - round(steps)) > 1e-9:
            raise ConfigError(f"delay {self.delay} is not a multiple of dt {self.dt}")
        if self.criterion not in METRIC_NAMES:
            raise ConfigError(f"unknown criterion {self.criterion!r}")
        object.__setattr__(self, "initial", tuple(float(v) for v in self.initial))

    @property
    def delay_steps(self) -> int:
        return int(round(self.delay / self.dt))

    @property
    def n_steps(self) -> int:
        return int(round(self.duration / self.dt))

    def initial_state(self) -> CartPoleState:
        return CartPoleState.from_degrees(*self.initial)

    def with_seed(self, seed: int) -> "ScenarioConfig":
        return replace(self, seed=seed)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["initial"] = list(self.initial)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ScenarioConfig":
        d = dict(d)
        try:
            if "noise" in d:
                d["noise"] = NoiseSpec(**d["noise"])
            if "params" in d:
                d["params"] = CartPoleParams(**d["params"])
            if "initial" in d:
                d["initial"] = tuple(d["initial"])
            return cls(**d)
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from exc


# learning-situation noise levels are not given numerically; see README
def scenario_library() -> dict[str, ScenarioConfig]:
    mirrored = (-10.0, -0.1, 0.0, 0.0)
    lib = {
        "S1": ScenarioConfig("S1", NoiseSpec("gaussian", sigma=0.3), initial=mirrored, criterion="J1"),
        "S2": ScenarioConfig("S2", NoiseSpec("rayleigh", scale=0.2), initial=mirrored, criterion="J2"),
        "S3": ScenarioConfig("S3", NoiseSpec("uniform", low=-0.5, high=0.5), sensor_coeff=0.015,
                             delay=0.03, initial=mirrored, criterion="J1"),
        # S4 is named but never parameterized in the benchmark; edit this template
        "S4": ScenarioConfig("S4", NoiseSpec("none"), initial=mirrored, criterion="J1"),
        "B2-S1": ScenarioConfig("B2-S1", initial=(-1.0, 0.0, 0.0, 0.0), criterion="ISE"),
        "B2-S2": ScenarioConfig("B2-S2", initial=(-5.0, 0.0, 0.0, 0.0), criterion="ISE"),
        "B3-typical": ScenarioConfig("B3-typical", delay=0.015, dt=0.005,
                                     initial=(-1.0, 0.0, 0.0, 0.0), criterion="ISE"),
        "B3-unpredicted": ScenarioConfig("B3-unpredicted", delay=0.035, dt=0.005,
                                         initial=(-1.0, 0.0, 0.0, 0.0), criterion="ISE"),
    }
    return lib


def get_scenario(name: str) -> ScenarioConfig:
    lib = scenario_library()
    if name not in lib:
        raise ConfigError(f"unknown scenario {name!r}; choose from {sorted(lib)}")
    return lib[name]


# ---------------------------------------------------------------- controllers

class Controller:
    """Maps delayed error inputs ``(e, edot, eint)`` to a PID gain triple."""

    int_bounds: tuple[float, float] = (-0.5, 0.5)

    def gains(self, t: float, inputs: tuple[float, float, float]) -> tuple[float, float, float]:
        raise NotImplementedError


class FixedPID(Controller):
    def __init__(self, gains, int_bounds=(-0.5, 0.5)):
        self._g = tuple(float(g) for g in gains)
        self.int_bounds = int_bounds

    def gains(self, t, inputs):
        return self._g


class ScheduledPID(Controller):
    """Piecewise-constant gains over equal time segments."""

    def __init__(self, schedule: Sequence[Sequence[float]], duration: float, int_bounds=(-0.5, 0.5)):
        self._s = [tuple(float(g) for g in row) for row in schedule]
        self._seg = duration / len(self._s)
        self.int_bounds = int_bounds

    def gains(self, t, inputs):
        return self._s[min(int(t / self._seg + 1e-9), len(self._s) - 1)]


class FuzzyController(Controller):
    def __init__(self, kb: KnowledgeBase):
        self.kb = kb
        self.int_bounds = kb.variables[2].universe

    def gains(self, t, inputs):
        return infer(self.kb, inputs)


class QfiController(Controller):
    def __init__(self, kbs: Sequence[KnowledgeBase], cfg: QfiConfig):
        self.kbs = list(kbs)
        self.cfg = cfg
        self.history = new_history(len(self.kbs), cfg)
        self.int_bounds = self.kbs[0].variables[2].universe

    def gains(self, t, inputs):
        return qfi_step([infer(kb, inputs) for kb in self.kbs], self.history, self.cfg)


CONTROLLER_KINDS = ("pid_fixed", "pid_schedule", "fuzzy_single", "qfi")


@dataclass(frozen=True)
class ControllerSpec:
    kind: str
    name: str = ""
    gains: tuple[float, ...] = ()
    schedule: tuple[tuple[float, ...], ...] = ()
    kbs: tuple[KnowledgeBase, ...] = ()
    qfi: QfiConfig = QfiConfig()

    def __post_init__(self):
        if self.kind not in CONTROLLER_KINDS:
            raise ConfigError(f"unknown controller kind {self.kind!r}")
        if self.kind == "pid_fixed" and len(self.gains) != 3:
            raise ConfigError("pid_fixed needs three gains")
        if self.kind == "fuzzy_single" and len(self.kbs) != 1:
            raise ConfigError("fuzzy_single needs exactly one knowledge base")
        if self.kind == "qfi":
            need = 1 if self.qfi.mode == "temporal" else 2
            if len(self.kbs) < need:
                raise ConfigError(f"qfi ({self.qfi.mode}) needs at least {need} knowledge bases")
        if not self.name:
            object.__setattr__(self, "name", self.kind)

    def build(self, duration: float = 20.0) -> Controller:
        if self.kind == "pid_fixed":
            return FixedPID(self.gains)
        if self.kind == "pid_schedule":
            return ScheduledPID(self.schedule, duration)
        if self.kind == "fuzzy_single":
            return FuzzyController(self.kbs[0])
        return QfiController(self.kbs, self.qfi)

    @classmethod
    def from_dict(cls, d: dict, base: Path | None = None) -> "ControllerSpec":
        d = dict(d)
        kbs = []
        for item in d.pop("kbs", []):
            if isinstance(item, dict):
                kbs.append(kb_from_dict(item))
            else:
                p = Path(item)
                if base is not None and not p.is_absolute():
                    p = base / p
                kbs.append(load_kb(resolve_fixture(p)))
        qfi = QfiConfig(**d.pop("qfi", {}))
        try:
            return cls(kind=d.pop("kind"), name=d.pop("name", ""),
                       gains=tuple(d.pop("gains", ())),
                       schedule=tuple(tuple(r) for r in d.pop("schedule", ())),
                       kbs=tuple(kbs), qfi=qfi)
        except KeyError as exc:
            raise ConfigError(f"controller entry missing {exc}") from exc


def fixtures_dir() -> Path:
    return Path(__file__).resolve().parent / "fixtures"


def resolve_fixture(path) -> Path:
    """Resolve bare fixture names (``kb1.json``) against the shipped fixture dir."""
    p = Path(path)
    if p.exists():
        return p
    alt = fixtures_dir() / p.name
    if alt.exists():
        return alt
    raise ConfigError(f"knowledge base file not found: {path}")


# ------------------------------------------------------------------- episodes

@dataclass
class RunReport:
    scenario: str
    controller: str
    series: dict[str, np.ndarray]
    metrics: dict[str, float]
    diverged: bool = False
    divergence_time: float | None = None
    seed: int = 0

    @property
    def n_rows(self) -> int:
        return len(self.series["t"])

    @property
    def max_abs_theta(self) -> float:
        return float(np.max(np.abs(self.series["theta"])))


def compute_metrics(series: dict[str, np.ndarray]) -> dict[str, float]:
    t = series["t"]
    th, thd, u = series["theta"], series["theta_dot"], series["u"]
    if len(t) < 2:
        return {m: 0.0 for m in METRIC_NAMES}
    ise = float(np.trapezoid(th ** 2, t))
    iae = float(np.trapezoid(np.abs(th), t))
    return {
        "J1": ise + float(np.trapezoid(thd ** 2, t)),
        "J2": iae + float(np.trapezoid(np.abs(thd), t)),
        "ISE": ise,
        "IAE": iae,
        "energy": float(np.trapezoid(u ** 2, t)),
    }


def run_episode(scenario: ScenarioConfig, controller: ControllerSpec | Controller,
                n_steps: int | None = None, record: bool = True) -> RunReport:
    """Simulate one closed-loop episode.

    Instability (``|theta| > pi/2``) or numerical blow-up ends the episode
    early and sets ``diverged``; it is not an exception. ``n_steps`` caps the
    number of control cycles (default: ``duration / dt``).
    """
    p = scenario.params
    dt = scenario.dt
    n = scenario.n_steps if n_steps is None else int(n_steps)
    ctrl = controller.build(scenario.duration) if isinstance(controller, ControllerSpec) else controller
    name = controller.name if isinstance(controller, ControllerSpec) else type(controller).__name__
    force_noise = replace(scenario.noise, seed=derive_seed(scenario.seed, 1)).source()
    sensor = NoiseSpec("gaussian", sigma=1.0, seed=derive_seed(scenario.seed, 2)).source()
    integ = ErrorIntegrator(tuple(ctrl.int_bounds))
    d = scenario.delay_steps
    e_buf = [0.0] * (d + 1)
    bounds = (p.control_min, p.control_max)

    rows: list[tuple] = []
    state = scenario.initial_state()
    diverged, t_div = False, None
    for i in range(n + 1):
        noise_s = sensor.sample()
        theta_meas = state.theta + scenario.sensor_coeff * noise_s
        e_raw = -theta_meas
        # write slot i, read slot i-d (zero until the line fills); the rate
        # channel comes from its own sensor and is not delayed
        e_buf[i % (d + 1)] = e_raw
        e = e_buf[(i + 1) % (d + 1)]
        edot = -state.theta_dot
        eint = integ.update(e, dt)
        kp, kd, ki = ctrl.gains(state.t, (e, edot, eint))
        u = min(max(kp * e + kd * edot + ki * eint, bounds[0]), bounds[1])
        xi = force_noise.sample()
        if record:
            er = dyn.entropy_rates(state, edot, kd, p)
            rows.append((state.t, state.theta, state.theta_dot, state.z, state.z_dot, u, kp, kd, ki,
                         e_raw, e, edot, eint, er.dS_theta, er.dS_z, er.dS_u))
        else:
            rows.append((state.t, state.theta, state.theta_dot, 0.0, 0.0, u))
        if abs(state.theta) > FALL_ANGLE:
            diverged, t_div = True, state.t
            break
        if i == n:
            break
        try:
            state = dyn.step(state, u, xi, dt, p)
        except dyn.DivergenceError as exc:
            diverged, t_div = True, exc.t
            break
    cols = SERIES_COLUMNS if record else SERIES_COLUMNS[:6]
    arr = np.array(rows, dtype=float).reshape(-1, len(cols))
    series = {c: arr[:, j] for j, c in enumerate(cols)}
    return RunReport(scenario.name, name, series, compute_metrics(series), diverged, t_div, scenario.seed)


def episode_fitness(report: RunReport, criterion: str, duration: float) -> float:
    """Criterion value with a fall penalty that prefers later falls."""
    j = report.metrics[criterion]
    if report.diverged:
        frac = (report.divergence_time or 0.0) / duration
        return 1e3 + 1e3 * (1.0 - frac) + min(j, 1e3)
    return j


# ----------------------------------------------------------------- comparison

@dataclass
class ComparisonRow:
    controller: str
    scenario: str
    repetitions: int
    mean: dict[str, float]
    std: dict[str, float]
    diverged: int
    max_abs_theta: float
    rank: int = 0


def compare(controllers: Sequence[ControllerSpec], scenarios: Sequence[ScenarioConfig],
            repetitions: int = 1, rank_by: str | None = None) -> list[ComparisonRow]:
    """Mean/std of each metric over seeded repetitions, ranked within each scenario.

    Repetition ``r`` uses seed ``scenario.seed + r``.
    """
    if repetitions < 1:
        raise ValueError("repetitions must be >= 1")
    rows: list[ComparisonRow] = []
    for sc in scenarios:
        block = []
        for ctrl in controllers:
            reps = [run_episode(sc.with_seed(sc.seed + r), ctrl) for r in range(repetitions)]
            vals = {m: np.array([rep.metrics[m] for rep in reps]) for m in METRIC_NAMES}
            block.append(ComparisonRow(
                ctrl.name, sc.name, repetitions,
                {m: float(v.mean()) for m, v in vals.items()},
                {m: float(v.std()) for m, v in vals.items()},
                sum(rep.diverged for rep in reps),
                max(rep.max_abs_theta for rep in reps),
            ))
        key = rank_by or sc.criterion
        for rank, row in enumerate(sorted(block, key=lambda r: (r.diverged, r.mean[key])), start=1):
            row.rank = rank
        rows.extend(block)
    return rows


# -------------------------------------------------------------------- reports

TABLE_COLUMNS = (("controller", "scenario", "repetitions", "diverged", "rank", "max_abs_theta")
                 + tuple(f"{m}_mean" for m in METRIC_NAMES) + tuple(f"{m}_std" for m in METRIC_NAMES))
REPORT_COLUMNS = ("scenario", "controller", "seed", "diverged", "divergence_time", "max_abs_theta") + METRIC_NAMES


def _fmt(v) -> str:
    if isinstance(v, float):
        return repr(v)
    return "" if v is None else str(v)


def table_to_csv(rows: Sequence[ComparisonRow]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(TABLE_COLUMNS)
    for r in rows:
        w.writerow([r.controller, r.scenario, r.repetitions, r.diverged, r.rank, _fmt(r.max_abs_theta)]
                   + [_fmt(r.mean[m]) for m in METRIC_NAMES] + [_fmt(r.std[m]) for m in METRIC_NAMES])
    return buf.getvalue()


def table_from_csv(text: str) -> list[ComparisonRow]:
    rows = []
    for rec in csv.DictReader(io.StringIO(text)):
        rows.append(ComparisonRow(
            rec["controller"], rec["scenario"], int(rec["repetitions"]),
            {m: float(rec[f"{m}_mean"]) for m in METRIC_NAMES},
            {m: float(rec[f"{m}_std"]) for m in METRIC_NAMES},
            int(rec["diverged"]), float(rec["max_abs_theta"]), int(rec["rank"]),
        ))
    return rows


def report_to_csv(report: RunReport) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(REPORT_COLUMNS)
    w.writerow([report.scenario, report.controller, report.seed, int(report.diverged),
                _fmt(report.divergence_time), _fmt(report.max_abs_theta)]
               + [_fmt(report.metrics[m]) for m in METRIC_NAMES])
    return buf.getvalue()


def series_to_csv(report: RunReport) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    cols = list(report.series)
    w.writerow(cols)
    for row in zip(*(report.series[c] for c in cols)):
        w.writerow([repr(float(v)) for v in row])
    return buf.getvalue()


def series_to_plot_data(report: RunReport) -> str:
    cols = list(report.series)
    lines = ["# " + " ".join(cols)]
    for row in zip(*(report.series[c] for c in cols)):
        lines.append(" ".join(repr(float(v)) for v in row))
    return "\n".join(lines) + "\n"


def _write(path: Path, text: str) -> Path:
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(text)
    except OSError as exc:
        raise OSError(f"cannot write report to {path}: {exc}") from exc
    return path


def emit_report(obj, out_dir, fmt: str = "csv", stem: str = "report") -> list[Path]:
    """Write a comparison table or a run report.

    ``csv``: ``<stem>.csv`` (table or scalar metrics; run reports also get
    ``<stem>_series.csv``). ``plot-data``: whitespace-separated columns, one
    file per run report.
    """
    out = Path(out_dir)
    if fmt not in ("csv", "plot-data"):
        raise ValueError(f"unknown report format {fmt!r}")
    if isinstance(obj, RunReport):
        if fmt == "plot-data":
            return [_write(out / f"{stem}.dat", series_to_plot_data(obj))]
        return [_write(out / f"{stem}.csv", report_to_csv(obj)),
                _write(out / f"{stem}_series.csv", series_to_csv(obj))]
    rows = list(obj)
    if fmt == "plot-data":
        lines = ["# controller scenario " + " ".join(f"{m}_mean {m}_std" for m in METRIC_NAMES)]
        for r in rows:
            lines.append(" ".join([r.controller, r.scenario] + [f"{r.mean[m]!r} {r.std[m]!r}" for m in METRIC_NAMES]))
        return [_write(out / f"{stem}.dat", "\n".join(lines) + "\n")]
    return [_write(out / f"{stem}.csv", table_to_csv(rows))]
