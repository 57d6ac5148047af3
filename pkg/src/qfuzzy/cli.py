"""Command-line entry point (``qfuzzy <subcommand>``).

Exit codes: 0 success, 2 configuration error, 3 a required run lost
stability, 4 link error.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import socket
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import bench, qfi, thermo
from .bench import ConfigError, ControllerSpec, ScenarioConfig
from .fuzzy import save_kb
from .ga import GAConfig
from .remote import (Link, LinkConfig, RemoteOptimizationError, device_serve, optimize_remote,
                     loopback, parse_address)
from .sco import PlantTask, design_kb, generate_teaching_signal

EXIT_OK, EXIT_CONFIG, EXIT_DIVERGED, EXIT_LINK = 0, 2, 3, 4
DEFAULT_UNIVERSES = ((-0.5, 0.5), (-2.0, 2.0), (-0.5, 0.5))


class RequiredRunDiverged(RuntimeError):
    pass


# ------------------------------------------------------------------ config

def load_config(path: str | None) -> dict:
    if not path:
        return {}
    try:
        doc = json.loads(Path(path).read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
    if not isinstance(doc, dict):
        raise ConfigError("config document must be an object")
    doc.setdefault("_base", str(Path(path).resolve().parent))
    return doc


def _read_json(path: str, what: str):
    try:
        return json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot load {what} {path}: {exc}") from exc


def resolve_scenario(item, seed: int | None = None) -> ScenarioConfig:
    if isinstance(item, ScenarioConfig):
        sc = item
    elif isinstance(item, dict):
        sc = ScenarioConfig.from_dict(item)
    elif isinstance(item, str) and item in bench.scenario_library():
        sc = bench.get_scenario(item)
    elif isinstance(item, str) and Path(item).exists():
        sc = ScenarioConfig.from_dict(_read_json(item, "scenario"))
    else:
        raise ConfigError(f"unknown scenario {item!r}")
    return sc.with_seed(seed) if seed is not None else sc


def named_controllers() -> dict[str, dict]:
    path = bench.fixtures_dir() / "controllers.json"
    return json.loads(path.read_text()) if path.exists() else {}


def resolve_controller(item, base: Path | None = None) -> ControllerSpec:
    """Controller from a dict, a JSON file, a shipped name, or shorthand.

    Shorthands: ``pid:KP,KD,KI``, ``fc:KB.json``, ``qfi[-mode]:KB1.json,KB2.json``.
    """
    if isinstance(item, ControllerSpec):
        return item
    if isinstance(item, dict):
        return ControllerSpec.from_dict(item, base)
    if not isinstance(item, str):
        raise ConfigError(f"cannot build a controller from {item!r}")
    named = named_controllers()
    if item in named:
        return ControllerSpec.from_dict(named[item], bench.fixtures_dir())
    if ":" in item:
        head, _, rest = item.partition(":")
        args = [a for a in rest.split(",") if a]
        try:
            if head == "pid":
                return ControllerSpec("pid_fixed", item, gains=tuple(float(a) for a in args))
            if head == "fc":
                return ControllerSpec.from_dict({"kind": "fuzzy_single", "name": item, "kbs": args}, base)
            if head.startswith("qfi"):
                mode = head.partition("-")[2] or "spatial"
                return ControllerSpec.from_dict({"kind": "qfi", "name": item, "kbs": args,
                                                 "qfi": {"mode": mode}}, base)
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
    if Path(item).exists():
        return ControllerSpec.from_dict(_read_json(item, "controller"), Path(item).resolve().parent)
    raise ConfigError(f"unknown controller {item!r}")


def _pick(args, cfg: dict, key: str, default=None):
    v = getattr(args, key, None)
    return cfg.get(key, default) if v is None else v


def _base(cfg: dict) -> Path | None:
    return Path(cfg["_base"]) if "_base" in cfg else None


def _ga(args, cfg: dict) -> GAConfig:
    doc = cfg.get("ga", {})
    if getattr(args, "ga", None):
        doc = _read_json(args.ga, "GA config")
    try:
        ga = GAConfig.from_dict(doc)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad GA config: {exc}") from exc
    return replace(ga, seed=args.seed) if args.seed is not None else ga


def _out(args) -> Path:
    return Path(args.out)


def _write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text)


def _csv(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([repr(v) if isinstance(v, float) else v for v in r])
    return buf.getvalue()


# ---------------------------------------------------------------- commands

def cmd_simulate(args, cfg) -> int:
    sc = resolve_scenario(_pick(args, cfg, "scenario", "S1"), args.seed)
    spec = resolve_controller(_pick(args, cfg, "controller", "pid:21.3,225.9,0.1"), _base(cfg))
    rep = bench.run_episode(sc, spec)
    bench.emit_report(rep, _out(args), args.format, stem=args.stem)
    print(f"{sc.name} {spec.name}: diverged={rep.diverged} J1={rep.metrics['J1']:.6g} "
          f"max|theta|={rep.max_abs_theta:.4g}")
    if rep.diverged and (args.require_stable or cfg.get("require_stable")):
        raise RequiredRunDiverged(f"{spec.name} lost stability at t={rep.divergence_time}")
    return EXIT_OK


def cmd_qfi_run(args, cfg) -> int:
    kbs = args.kbs or cfg.get("kbs") or ["kb1.json", "kb2.json"]
    scales = tuple(args.scales) if args.scales else tuple(cfg.get("scales", (1.0, 1.0, 1.0)))
    spec = ControllerSpec.from_dict({"kind": "qfi", "name": f"qfi-{args.mode}", "kbs": list(kbs),
                                     "qfi": {"mode": args.mode, "lag": args.lag, "scales": list(scales)}},
                                    _base(cfg))
    args.controller = spec
    return cmd_simulate(args, {k: v for k, v in cfg.items() if k != "controller"})


def cmd_optimize(args, cfg) -> int:
    sc = resolve_scenario(_pick(args, cfg, "scenario", "S1"), args.seed)
    ga = _ga(args, cfg)
    segments = int(_pick(args, cfg, "segments", 1))
    ts = generate_teaching_signal(sc, ga, horizon=_pick(args, cfg, "horizon"), segments=segments)
    lo, hi = cfg.get("mf_range", (3, 9))
    if args.mfs:
        lo = hi = args.mfs
    rep = design_kb(ts, cfg.get("universes", DEFAULT_UNIVERSES), ga, tl=float(_pick(args, cfg, "tl", 0.0)),
                    mf_range=(lo, hi), bp_steps=int(cfg.get("bp_steps", 500)))
    out = _out(args)
    out.mkdir(parents=True, exist_ok=True)
    ts.save(out / "ts.csv")
    save_kb(rep.kb, out / "kb.json")
    _write(out / "stages.csv", _csv(("stage", "error"), [(k, float(v)) for k, v in rep.errors.items()]))
    print(f"KB with {len(rep.kb.rules)} rules; stage errors {rep.errors}")
    return EXIT_OK


def _plant_task(args, cfg) -> PlantTask:
    sc = resolve_scenario(_pick(args, cfg, "scenario", "S1"), args.seed)
    kind = _pick(args, cfg, "kind", "scale")
    default = "qfi-s" if kind == "scale" else "fc1"
    spec = resolve_controller(_pick(args, cfg, "controller", default), _base(cfg))
    try:
        return PlantTask(sc, spec, kind, int(_pick(args, cfg, "cycles", 2000)),
                         repeats=int(cfg.get("repeats", 1)))
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def _link_cfg(args, cfg, transport: str) -> LinkConfig:
    doc = dict(cfg.get("link", {}))
    doc["transport"] = transport
    if getattr(args, "throttle", False):
        doc["throttle"] = True
    if getattr(args, "cycles", None):
        doc["cycles"] = args.cycles
    try:
        return LinkConfig(**doc)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad link config: {exc}") from exc


def _write_remote(out: Path, res, kind: str) -> None:
    _write(out / "best.csv", _csv(("index", "value"), [(i, float(v)) for i, v in enumerate(res.best)]))
    _write(out / "history.csv", _csv(("evaluation", "fitness") + tuple(f"x{i}" for i in range(len(res.best))),
                                     [(i, float(f), *map(float, g)) for i, (g, f) in enumerate(res.history)]))


def cmd_optimize_remote(args, cfg) -> int:
    ga = _ga(args, cfg)
    connect = _pick(args, cfg, "connect", "pipe")
    kind = _pick(args, cfg, "kind", "scale")
    try:
        if connect == "pipe":
            task = _plant_task(args, cfg)
            link_cfg = _link_cfg(args, cfg, "pipe")
            with loopback(task, link_cfg) as (link, _):
                res = optimize_remote(ga, link, task.kind)
        else:
            link_cfg = _link_cfg(args, cfg, "tcp")
            sock = socket.create_connection(parse_address(connect), timeout=link_cfg.timeout)
            res = optimize_remote(ga, Link(sock, link_cfg), kind)
    except (RemoteOptimizationError, OSError) as exc:
        print(f"link error: {exc}", file=sys.stderr)
        return EXIT_LINK
    _write_remote(_out(args), res, kind)
    print(f"best fitness {res.fitness!r} after {len(res.history)} device evaluations")
    return EXIT_OK


def cmd_serve_device(args, cfg) -> int:
    task = _plant_task(args, cfg)
    link_cfg = _link_cfg(args, cfg, "tcp")
    host, port = parse_address(_pick(args, cfg, "listen", "127.0.0.1:0"))
    try:
        srv = socket.create_server((host, port))
        print(f"listening on {srv.getsockname()[0]}:{srv.getsockname()[1]}", flush=True)
        srv.settimeout(link_cfg.timeout)
        conn, _ = srv.accept()
        srv.close()
    except OSError as exc:
        print(f"link error: {exc}", file=sys.stderr)
        return EXIT_LINK
    log = device_serve(task, Link(conn, link_cfg))
    _write(_out(args) / "session.csv",
           _csv(("seq", "fitness", "candidate"),
                [(s, f, " ".join(repr(v) for v in c)) for s, c, f in log.entries]))
    print(f"session closed by {log.closed_by} after {len(log.entries)} evaluations")
    return EXIT_OK if log.closed_by == "ABORT" else EXIT_LINK


def cmd_lock_demo(args, cfg) -> int:
    ns = args.n or cfg.get("n", [1, 2])
    rows = qfi.locking_table(ns)
    _write(_out(args) / "locking.csv", _csv(("d", "locked_bits", "unlocked_bits"), rows))
    for d, lk, un in rows:
        print(f"d={d}: locked {lk:.12f} bits, unlocked {un:.12f} bits")
    return EXIT_OK


def cmd_thermo_demo(args, cfg) -> int:
    seed = args.seed if args.seed is not None else int(cfg.get("seed", 0))
    dim = int(_pick(args, cfg, "dim", 2))
    rng = np.random.default_rng(seed)
    rho0 = thermo.random_density(dim, rng)
    h0, h1 = thermo.random_hermitian(dim, rng), thermo.random_hermitian(dim, rng)
    rho_t = thermo.random_density(dim, rng)
    alphas = np.linspace(0.25, 5.0, 20)
    rows = []
    for a in alphas:
        wb = thermo.work_bounds(rho0, rho_t, h0, h1, float(a))
        rows.append((float(a), wb.work, wb.delta_free, wb.lower_bound))
    a_star = thermo.best_alpha(rho0, h0, h1)
    _write(_out(args) / "work_bounds.csv", _csv(("alpha", "W", "dF", "W_LB"), rows))
    _write(_out(args) / "best_alpha.csv", _csv(("alpha_star", "W_LB"),
                                               [(a_star, thermo.lower_bound(rho0, h0, h1, a_star))]))
    print(f"alpha* = {a_star:.6f}")
    return EXIT_OK


def cmd_compare(args, cfg) -> int:
    names = args.controllers or cfg.get("controllers") or ["fc1", "fc2", "qfi-s"]
    scen = args.scenarios or cfg.get("scenarios") or ["S3"]
    base = _base(cfg)
    ctrls = [resolve_controller(c, base) for c in names]
    scs = [resolve_scenario(s, args.seed) for s in scen]
    reps = int(_pick(args, cfg, "repetitions", 1))
    rows = bench.compare(ctrls, scs, reps)
    bench.emit_report(rows, _out(args), args.format, stem=args.stem)
    for r in rows:
        print(f"{r.scenario:>14} {r.controller:>10} rank={r.rank} diverged={r.diverged}/{r.repetitions} "
              f"J1={r.mean['J1']:.5g} ISE={r.mean['ISE']:.5g}")
    return EXIT_OK


def cmd_report(args, cfg) -> int:
    path = Path(args.input)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from exc
    rows = list(csv.reader(io.StringIO(text)))
    if not rows:
        raise ConfigError(f"{path} is empty")
    cols = rows[0]
    if "t" in cols:
        data = np.array([[float(v) for v in r] for r in rows[1:]], dtype=float).reshape(-1, len(cols))
        series = {c: data[:, j] for j, c in enumerate(cols)}
        metrics = bench.compute_metrics(series)
        rep = bench.RunReport(path.stem, "", series, metrics)
        bench.emit_report(rep, _out(args), "plot-data", stem=args.stem)
        _write(_out(args) / f"{args.stem}_metrics.csv",
               _csv(bench.METRIC_NAMES, [tuple(metrics[m] for m in bench.METRIC_NAMES)]))
    else:
        table = bench.table_from_csv(text)
        bench.emit_report(table, _out(args), args.format, stem=args.stem)
    return EXIT_OK


# ------------------------------------------------------------------ parser

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=None, help="override the scenario / GA seed")
    common.add_argument("--config", default=None, help="JSON config document")
    common.add_argument("--out", default="out", help="output directory")

    p = argparse.ArgumentParser(prog="qfuzzy", description="Quantum fuzzy control laboratory")
    sub = p.add_subparsers(dest="command", required=True)

    def add(name, fn, help_):
        sp = sub.add_parser(name, parents=[common], help=help_)
        sp.set_defaults(func=fn)
        return sp

    sp = add("simulate", cmd_simulate, "run one closed-loop episode")
    sp.add_argument("--scenario")
    sp.add_argument("--controller", help="name, JSON file, or pid:/fc:/qfi: shorthand")
    sp.add_argument("--format", choices=("csv", "plot-data"), default="csv")
    sp.add_argument("--stem", default="run")
    sp.add_argument("--require-stable", action="store_true", help="exit 3 if the run loses stability")

    sp = add("qfi-run", cmd_qfi_run, "run an episode under a QFI controller")
    sp.add_argument("--scenario")
    sp.add_argument("--kbs", nargs="+")
    sp.add_argument("--mode", default="spatial")
    sp.add_argument("--lag", type=int, default=1)
    sp.add_argument("--scales", type=float, nargs=3)
    sp.add_argument("--format", choices=("csv", "plot-data"), default="csv")
    sp.add_argument("--stem", default="qfi")
    sp.add_argument("--require-stable", action="store_true")

    sp = add("optimize", cmd_optimize, "teaching signal plus SCO stages 2-5")
    sp.add_argument("--scenario")
    sp.add_argument("--ga", help="GA config JSON")
    sp.add_argument("--segments", type=int)
    sp.add_argument("--horizon", type=float)
    sp.add_argument("--tl", type=float)
    sp.add_argument("--mfs", type=int, help="fix the MF count per input")

    sp = add("optimize-remote", cmd_optimize_remote, "GA with device round-trip fitness")
    sp.add_argument("--connect", help="host:port of a device, or 'pipe' for an in-process device")
    sp.add_argument("--kind", choices=("kb", "scale"))
    sp.add_argument("--ga", help="GA config JSON")
    sp.add_argument("--scenario", help="device scenario (pipe only)")
    sp.add_argument("--controller", help="device base controller (pipe only)")
    sp.add_argument("--cycles", type=int)
    sp.add_argument("--throttle", action="store_true")

    sp = add("serve-device", cmd_serve_device, "serve one optimization session over TCP")
    sp.add_argument("--scenario")
    sp.add_argument("--controller")
    sp.add_argument("--kind", choices=("kb", "scale"))
    sp.add_argument("--listen", help="host:port (port 0 picks a free port)")
    sp.add_argument("--cycles", type=int)
    sp.add_argument("--throttle", action="store_true")

    sp = add("lock-demo", cmd_lock_demo, "correlation locking table")
    sp.add_argument("--n", type=int, nargs="+", help="qubit counts (d = 2**n)")

    sp = add("thermo-demo", cmd_thermo_demo, "work bounds on a random instance")
    sp.add_argument("--dim", type=int)

    sp = add("compare", cmd_compare, "controller x scenario comparison table")
    sp.add_argument("--controllers", nargs="+")
    sp.add_argument("--scenarios", nargs="+")
    sp.add_argument("--repetitions", type=int)
    sp.add_argument("--format", choices=("csv", "plot-data"), default="csv")
    sp.add_argument("--stem", default="compare")

    sp = add("report", cmd_report, "re-emit a saved series or table")
    sp.add_argument("--input", required=True)
    sp.add_argument("--format", choices=("csv", "plot-data"), default="plot-data")
    sp.add_argument("--stem", default="report")
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    try:
        cfg = load_config(args.config)
        return args.func(args, cfg)
    except RequiredRunDiverged as exc:
        print(f"required run diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except (ConfigError, thermo.InvalidStateError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ValueError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
