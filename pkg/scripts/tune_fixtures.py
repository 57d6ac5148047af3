"""Regenerate the shipped controller fixtures (knowledge bases, QFI scales, bounds).

Every step is seeded, so a rerun rewrites byte-identical files. Three parts:

  robust  KB1 (S1, J1) and KB2 (S2, J2) from GA-PID teaching signals, QFI
          scaling factors tuned over a loopback link on S3-class training
          seeds (100..103), and the frozen max|theta| bound on S3 seed 0
  b2      the six 125-rule controllers (TS source x optimization method)
  b3      PID, FC1, FC4 and the three QFI modes for the delay scenarios

Takes roughly 10-15 minutes on one core.
"""

from __future__ import annotations

import argparse
import json
import math
import time
from dataclasses import replace
from pathlib import Path

import numpy as np

from qfuzzy.bench import ControllerSpec, fixtures_dir, get_scenario, run_episode
from qfuzzy.fuzzy import LinguisticVariable, save_kb, load_kb
from qfuzzy.ga import GAConfig
from qfuzzy.qfi import QfiConfig
from qfuzzy.remote import optimize_loopback
from qfuzzy.sco import (PlantTask, create_rules, design_kb, generate_teaching_signal, ga3_refine)

UNIVERSES = ((-0.5, 0.5), (-2.0, 2.0), (-0.5, 0.5))
# a stabilizing hand-picked PID that seeds every TS search
PID_SEED = (21.3, 225.9, 0.1)
MODES = (("qfi-s", "QFI(Q-S)", "spatial"), ("qfi-t", "QFI(Q-T)", "temporal"),
         ("qfi-st", "QFI(Q-ST)", "spatiotemporal"))
TRAIN_SEEDS = 100
ACCEPT_SEED = 0


def log(*a):
    print(f"[{time.strftime('%H:%M:%S')}]", *a, flush=True)


def write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def qfi_entry(label: str, files, mode: str, scales) -> dict:
    return {"kind": "qfi", "name": label, "kbs": list(files),
            "qfi": {"mode": mode, "scales": [float(s) for s in scales]}}


def tune_scales(kbs, mode: str, scenario, cycles: int, repeats: int, ga: GAConfig):
    base = ControllerSpec("qfi", kbs=tuple(kbs), qfi=QfiConfig(mode=mode))
    task = PlantTask((scenario,), base, kind="scale", cycles=cycles, repeats=repeats)
    res = optimize_loopback(task, ga)
    return res.best, res.fitness


def part_robust(out: Path, controllers: dict) -> None:
    kbs = []
    for name, fname in (("S1", "kb1.json"), ("S2", "kb2.json")):
        sc = get_scenario(name)
        ts = generate_teaching_signal(sc, GAConfig(population=20, generations=12, seed=1),
                                      segments=1, seeds=[PID_SEED])
        rep = design_kb(ts, UNIVERSES, GAConfig(population=12, generations=6, seed=0), mf_range=(3, 5))
        log(name, "GA-PID", np.round(ts._ga.best, 2), "errors", rep.errors)
        save_kb(rep.kb, out / fname)
        kbs.append(load_kb(out / fname))
    controllers["fc1"] = {"kind": "fuzzy_single", "name": "FC1", "kbs": ["kb1.json"]}
    controllers["fc2"] = {"kind": "fuzzy_single", "name": "FC2", "kbs": ["kb2.json"]}

    s3 = get_scenario("S3")
    ga = GAConfig(population=10, generations=6, seed=0)
    for key, label, mode in MODES:
        scales, fit = tune_scales(kbs, mode, s3.with_seed(TRAIN_SEEDS), 2000, 4, ga)
        log(key, "scales", scales, "training fitness", fit)
        controllers[key] = qfi_entry(label, ("kb1.json", "kb2.json"), mode, scales)

    def resolve(key):
        return ControllerSpec.from_dict(controllers[key], out)

    falls = {}
    for key in ("fc1", "fc2", "qfi-s", "qfi-t", "qfi-st"):
        spec = resolve(key)
        reps = [run_episode(s3.with_seed(sd), spec) for sd in range(10)]
        falls[key] = [int(r.diverged) for r in reps]
        log(key, "S3 falls over seeds 0-9:", sum(falls[key]), [round(r.max_abs_theta, 3) for r in reps])
    qs = run_episode(s3.with_seed(ACCEPT_SEED), resolve("qfi-s"))
    if qs.diverged:
        raise SystemExit("QFI(Q-S) fell on the acceptance seed; not freezing a bound")
    # 5 % headroom above the observed peak, rounded up to 1e-3 rad
    bound = math.ceil(qs.max_abs_theta * 1.05 * 1000) / 1000
    write_json(out / "robustness.json", {
        "scenario": "S3", "seed": ACCEPT_SEED, "controller": "qfi-s",
        "observed_max_abs_theta": qs.max_abs_theta, "max_abs_theta_bound": bound,
        "falls_seeds_0_9": falls,
    })
    log("bound", bound)


def part_b2(out: Path, controllers: dict) -> None:
    sc = get_scenario("B2-S1")
    ts_ga = GAConfig(population=16, generations=8, seed=2)
    sco_ga = GAConfig(population=10, generations=5, seed=0)
    remote_ga = GAConfig(population=8, generations=6, seed=0, mutation_scale=0.05)
    grid = [LinguisticVariable.uniform(n, u, 5) for n, u in zip(("e", "edot", "eint"), UNIVERSES)]

    def remote(kb, seed):
        base = ControllerSpec("fuzzy_single", kbs=(kb,))
        task = PlantTask((sc,), base, kind="kb", cycles=500)
        res = optimize_loopback(task, GAConfig(**{**remote_ga.to_dict(), "seed": seed}))
        return task.controller(res.best).kbs[0], res.fitness

    made = {}
    for src, segs in (("math-model", 4), ("ga-pid", 1)):
        ts = generate_teaching_signal(sc, ts_ga, horizon=10.0, segments=segs, seeds=[PID_SEED])
        tag = "mm" if src == "math-model" else "gp"
        sco = design_kb(ts, UNIVERSES, sco_ga, mf_range=(5, 5), prune=False).kb
        raw = create_rules(ts, grid, 0.0)
        rem, _ = remote(raw, 1)
        log("B2", src, "rules", len(sco.rules), len(rem.rules))
        made[tag] = (ts, sco, rem)
    ts_mm, sco_mm, rem_mm = made["mm"]
    ts_gp, sco_gp, rem_gp = made["gp"]
    fc5, _ = remote(sco_mm, 2)
    fc6 = ga3_refine(rem_gp, ts_gp, "mse_approx", sco_ga).kb
    table = (("b2-fc1", "B2-FC1", sco_mm, "math-model", "sco"),
             ("b2-fc2", "B2-FC2", sco_gp, "ga-pid", "sco"),
             ("b2-fc3", "B2-FC3", rem_mm, "math-model", "remote"),
             ("b2-fc4", "B2-FC4", rem_gp, "ga-pid", "remote"),
             ("b2-fc5", "B2-FC5", fc5, "math-model", "sco+remote"),
             ("b2-fc6", "B2-FC6", fc6, "ga-pid", "remote+ga3"))
    for key, label, kb, src, method in table:
        kb = replace(kb, provenance={**kb.provenance, "ts_source": src, "method": method, "benchmark": "b2"})
        save_kb(kb, out / f"{key}.json")
        controllers[key] = {"kind": "fuzzy_single", "name": label, "kbs": [f"{key}.json"]}
    controllers["b2-pid"] = {"kind": "pid_fixed", "name": "B2-PID",
                             "gains": [float(g) for g in ts_gp._ga.best]}


def part_b3(out: Path, controllers: dict) -> None:
    sc = get_scenario("B3-typical")
    files = ("b2-fc1.json", "b2-fc4.json")
    kbs = [load_kb(out / f) for f in files]
    controllers["b3-pid"] = {**controllers["b2-pid"], "name": "B3-PID"}
    controllers["b3-fc1"] = {**controllers["b2-fc1"], "name": "B3-FC1"}
    controllers["b3-fc4"] = {**controllers["b2-fc4"], "name": "B3-FC4"}
    ga = GAConfig(population=8, generations=5, seed=0)
    for key, label, mode in MODES:
        scales, fit = tune_scales(kbs, mode, sc, 1000, 1, ga)
        log("B3", key, scales, fit)
        controllers["b3-" + key] = qfi_entry("B3-" + label, files, mode, scales)


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--parts", nargs="+", default=["robust", "b2", "b3"], choices=["robust", "b2", "b3"])
    ap.add_argument("--out", type=Path, default=fixtures_dir())
    args = ap.parse_args()
    args.out.mkdir(parents=True, exist_ok=True)
    path = args.out / "controllers.json"
    controllers = json.loads(path.read_text()) if path.exists() else {}
    controllers.setdefault("pid", {"kind": "pid_fixed", "name": "PID", "gains": list(PID_SEED)})
    for part in args.parts:
        log("part", part)
        {"robust": part_robust, "b2": part_b2, "b3": part_b3}[part](args.out, controllers)
        write_json(path, controllers)
    log("done")


if __name__ == "__main__":
    main()
