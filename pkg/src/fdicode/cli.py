"""Command-line interface.

Every subcommand reads a scenario JSON (see harness.SCENARIO_SCHEMA) and
writes its outputs under --out.  ``run`` executes the whole declared
pipeline; the other subcommands expose individual stages.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .adversary import adapt_attack
from .attack import difference_dynamics, stealth_feasible
from .coding import (
    check_feasible_combined,
    check_feasible_multi,
    check_feasible_single,
)
from .errors import Error, HorizonExhausted
from .estimation import residue_trace, steady_state_kalman
from .harness import (
    FIGURES,
    build_attack,
    build_coding,
    build_system,
    load_scenario,
    reproduce,
    reproduce_all,
    run_scenario,
)
from .lti import simulate
from .scheduler import (
    NEVER,
    choose_refresh_interval,
    estimate_from_recording,
    record_coded_log,
    stealth_time,
)


def _load(args):
    config = load_scenario(args.config)
    if args.seed is not None:
        config.setdefault("seeds", {})["plant"] = args.seed
    return config


def _say(args, *items):
    if not args.quiet:
        print(*items)


def _out(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _dump(args, name: str, payload: dict) -> Path:
    path = _out(args) / name
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")
    _say(args, f"wrote {path}")
    return path


def cmd_riccati(args) -> int:
    config = _load(args)
    system = build_system(config)
    kal = config.get("kalman", {})
    design = steady_state_kalman(
        system,
        tol=kal.get("tol", 1e-12),
        confidence=kal.get("confidence", 0.99),
        mode=kal.get("mode", "innovation"),
    )
    closed = system.A - design.K @ system.C @ system.A
    _dump(
        args,
        "kalman.json",
        {
            "P": design.P.tolist(),
            "K": design.K.tolist(),
            "alpha": design.alpha,
            "confidence": design.confidence,
            "spectral_radius": float(max(abs(np.linalg.eigvals(closed)))),
        },
    )
    _say(args, f"alpha = {design.alpha:.6f}")
    return 0


def cmd_simulate(args) -> int:
    config = _load(args)
    system = build_system(config)
    kal = config.get("kalman", {})
    design = steady_state_kalman(
        system, confidence=kal.get("confidence", 0.99), mode=kal.get("mode", "innovation")
    )
    horizon = args.T or config.get("horizon", 200)
    x0 = np.asarray(config["x0"], dtype=float) if "x0" in config else None
    traj = simulate(
        system, seed=config.get("seeds", {}).get("plant", 0), T=horizon, x0=x0
    )
    rt = residue_trace(design, system, traj)
    import csv

    path = _out(args) / "trajectory.csv"
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(
            ["k"]
            + [f"y{i + 1}" for i in range(system.p)]
            + ["g", "alarm"]
        )
        for k in range(horizon + 1):
            w.writerow(
                [k]
                + [f"{v:.12e}" for v in traj.outputs[k]]
                + [f"{rt.g[k]:.12e}", int(rt.g[k] > design.alpha)]
            )
    _say(args, f"wrote {path} (alarm_time={rt.alarm_time})")
    return 0


def cmd_attack_synth(args) -> int:
    config = _load(args)
    system = build_system(config)
    design = steady_state_kalman(system)
    attack = build_attack(config, system, design)
    if attack is None:
        print("error: scenario declares no attack", file=sys.stderr)
        return 2
    horizon = config.get("horizon", 200)
    trace = difference_dynamics(system, design, attack, horizon)
    _dump(args, "attack.json", attack.to_dict())
    _dump(
        args,
        "attack_certificate.json",
        {
            "max_dz": float(trace.dz_norms.max()),
            "budget": attack.budget,
            "de_final": float(trace.de_norms[-1]),
            "ts_uncoded": "inf"
            if stealth_time(trace, config.get("M", 2.0)) == NEVER
            else int(stealth_time(trace, config.get("M", 2.0))),
        },
    )
    return 0


def cmd_coding_gen(args) -> int:
    config = _load(args)
    system = build_system(config)
    design = steady_state_kalman(system)
    verdict = stealth_feasible(system, design)
    spec = config.get("coding") or {"kind": "generated"}
    if spec["kind"] == "manual":
        coding = build_coding(config, system, verdict.pairs)
    else:
        config = dict(config) | {"coding": spec}
        coding = build_coding(config, system, verdict.pairs)
    _dump(args, "coding.json", coding.to_dict())
    return 0


def cmd_coding_check(args) -> int:
    config = _load(args)
    system = build_system(config)
    design = steady_state_kalman(system)
    verdict = stealth_feasible(system, design)
    coding = build_coding(config, system, verdict.pairs)
    if coding is None:
        print("error: scenario declares no coding matrix", file=sys.stderr)
        return 2
    payload = {
        "sigma": coding.sigma.tolist(),
        "combined": check_feasible_combined(coding),
    }
    if verdict.pairs:
        payload["single"] = [
            check_feasible_single(coding, system.C, pr.v) for pr in verdict.pairs
        ]
        payload["multi"] = check_feasible_multi(
            coding, system.C, [pr.v for pr in verdict.pairs]
        )
    _dump(args, "coding_check.json", payload)
    feasible = payload.get("multi", payload["combined"])
    _say(args, f"feasible: {feasible}")
    return 0


def cmd_estimate(args) -> int:
    config = _load(args)
    system = build_system(config)
    design = steady_state_kalman(system)
    verdict = stealth_feasible(system, design)
    coding = build_coding(config, system, verdict.pairs)
    adv = config.get("adversary")
    if coding is None or adv is None:
        print("error: scenario needs 'coding' and 'adversary' sections", file=sys.stderr)
        return 2
    ns = adv["N"] if isinstance(adv["N"], list) else [adv["N"]]
    n_max = max(int(n) for n in ns)
    x0 = np.asarray(config["x0"], dtype=float) if "x0" in config else None
    Ys, us = record_coded_log(
        system, coding, n_max, config.get("seeds", {}).get("plant", 0), x0=x0
    )
    res = estimate_from_recording(
        system, Ys, us, n_max, float(adv.get("epsilon", 0.0)), float(adv.get("rank_tol", 1e-8))
    )
    _dump(
        args,
        "estimate.json",
        {
            "sigma_hat": res.sigma_hat.tolist(),
            "x0_hat": res.x0_hat.tolist(),
            "cost": res.cost,
            "full_rank": res.full_rank,
            "steps": res.steps,
            "true_sigma": coding.sigma.tolist(),
        },
    )
    return 0


def cmd_schedule(args) -> int:
    config = _load(args)
    system = build_system(config)
    design = steady_state_kalman(system)
    attack = build_attack(config, system, design)
    verdict = stealth_feasible(system, design)
    coding = build_coding(config, system, verdict.pairs)
    sched = config.get("schedule")
    if attack is None or coding is None or sched is None:
        print(
            "error: scenario needs 'attack', 'coding' and 'schedule' sections",
            file=sys.stderr,
        )
        return 2
    x0 = np.asarray(config["x0"], dtype=float) if "x0" in config else None
    try:
        n_sigma = choose_refresh_interval(
            system,
            design,
            coding,
            attack,
            t_s=int(sched["t_s"]),
            alpha_threshold=float(sched["alpha_threshold"]),
            M=float(config.get("M", 2.0)),
            seed=config.get("seeds", {}).get("plant", 0),
            max_measurements=int(sched.get("max_measurements", 200)),
            x0=x0,
            horizon=config.get("horizon", 200),
        )
        _dump(args, "schedule.json", {"n_sigma": n_sigma, "exhausted": False})
    except HorizonExhausted as exc:
        _dump(args, "schedule.json", {"n_sigma": None, "exhausted": True, "detail": str(exc)})
    return 0


def cmd_run(args) -> int:
    report = run_scenario(args.config, args.out, quiet=args.quiet, seed_override=args.seed)
    _say(args, f"wrote {', '.join(str(p) for p in report.files.values())}")
    return 0


def cmd_reproduce(args) -> int:
    if args.figure == "all":
        reports = reproduce_all(args.out, quiet=args.quiet)
        _say(args, f"reproduced {', '.join(reports)} under {args.out}")
    else:
        report = reproduce(args.figure, args.out, quiet=args.quiet)
        _say(args, f"wrote {', '.join(str(p) for p in report.files.values())}")
    return 0


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="fdicode",
        description=(
            "Stealthy false-data injection against Kalman-filtered plants "
            "and the sensor-output coding defense."
        ),
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("--out", default="out", help="output directory (default: out)")
    parser.add_argument("--seed", type=int, default=None, help="override the plant seed")
    parser.add_argument("--quiet", action="store_true", help="suppress progress output")
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, fn, help_, config=True):
        sp = sub.add_parser(name, help=help_)
        if config:
            sp.add_argument("--config", required=True, help="scenario JSON path")
        sp.set_defaults(fn=fn)
        return sp

    add("riccati", cmd_riccati, "solve the steady-state filter design")
    sp = add("simulate", cmd_simulate, "simulate the nominal plant and score residues")
    sp.add_argument("--T", type=int, default=None, help="override the horizon")
    add("attack-synth", cmd_attack_synth, "synthesize the configured injection sequence")
    add("coding-gen", cmd_coding_gen, "generate or validate a coding matrix")
    add("coding-check", cmd_coding_check, "run the feasibility checks on the coding matrix")
    add("estimate", cmd_estimate, "run the eavesdropper's coding-matrix estimation")
    add("schedule", cmd_schedule, "search the coding refresh interval")
    add("run", cmd_run, "execute the full scenario pipeline")
    sp = add("reproduce", cmd_reproduce, "run a bundled benchmark scenario", config=False)
    sp.add_argument("figure", choices=list(FIGURES) + ["all"])

    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except Error as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    raise SystemExit(main())
