"""Scenario configuration, pipeline execution, and CSV export.

A scenario is a JSON document that declares the plant, the filter
settings, an optional attack, an optional coding matrix, an optional
eavesdropper sweep, and an optional refresh-interval search.  Running a
scenario executes the declared stages in dependency order and writes
plot-ready CSV tables plus a JSON summary; re-running the same config
reproduces the files byte for byte (all randomness is derived from the
seeds stored in the config).
"""

from __future__ import annotations

import csv
import hashlib
import json
import math
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Optional

import jsonschema
import numpy as np

from . import __version__
from .adversary import adapt_attack
from .attack import (
    difference_dynamics,
    literal_benchmark_attack,
    stealth_feasible,
    synth_combined_attack,
    synth_sensor_attack,
)
from .coding import (
    CodingMatrix,
    check_feasible_combined,
    check_feasible_multi,
    check_feasible_single,
    coding_matrix,
    generate_coding_matrix,
)
from .errors import ConfigInvalid, UnknownFigure
from .estimation import residue_trace, steady_state_kalman
from .lti import AttackSequence, LinearSystem, make_system, simulate_attacked
from .scheduler import (
    NEVER,
    choose_refresh_interval,
    estimate_from_recording,
    record_coded_log,
    stealth_gain_from_times,
    stealth_time,
)

FIGURES = ("fig3", "fig4", "fig5", "fig6", "fig7")

_MATRIX = {
    "type": "array",
    "items": {"type": "array", "items": {"type": "number"}},
}
_MATRIX_OR_SCALAR = {"anyOf": [_MATRIX, {"type": "number"}]}

SCENARIO_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "required": ["system"],
    "properties": {
        "name": {"type": "string"},
        "system": {
            "type": "object",
            "additionalProperties": False,
            "required": ["A", "B", "C"],
            "properties": {
                "A": _MATRIX,
                "B": _MATRIX,
                "C": _MATRIX,
                "Q": _MATRIX_OR_SCALAR,
                "R": _MATRIX_OR_SCALAR,
            },
        },
        "x0": {"type": "array", "items": {"type": "number"}},
        "kalman": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "confidence": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
                "mode": {"enum": ["innovation", "state-cov"]},
                "tol": {"type": "number", "exclusiveMinimum": 0},
            },
        },
        "horizon": {"type": "integer", "minimum": 1},
        "M": {"type": "number", "exclusiveMinimum": 0},
        "seeds": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "plant": {"type": "integer"},
                "coding": {"type": "integer"},
                "solver": {"type": "integer"},
            },
        },
        "attack": {
            "type": "object",
            "additionalProperties": False,
            "required": ["kind"],
            "properties": {
                "kind": {
                    "enum": ["synthesized", "combined", "external", "benchmark-literal"]
                },
                "budget": {"type": "number", "exclusiveMinimum": 0},
                "anchor": {"type": "number"},
                "u_bound": {"type": "number", "minimum": 0},
                "eps": {"type": "number", "minimum": 0},
                "y_a": _MATRIX,
                "u_a": _MATRIX,
                "path": {"type": "string"},
            },
        },
        "coding": {
            "type": "object",
            "additionalProperties": False,
            "required": ["kind"],
            "properties": {
                "kind": {"enum": ["manual", "generated"]},
                "sigma": _MATRIX,
                "scale": {"type": "number", "exclusiveMinimum": 0},
            },
        },
        "adversary": {
            "type": "object",
            "additionalProperties": False,
            "required": ["N"],
            "properties": {
                "N": {
                    "anyOf": [
                        {"type": "integer", "minimum": 1},
                        {"type": "array", "items": {"type": "integer", "minimum": 1}},
                    ]
                },
                "epsilon": {"type": "number", "minimum": 0},
                "rank_tol": {"type": "number", "exclusiveMinimum": 0},
                "nstarts": {"type": "integer", "minimum": 1},
            },
        },
        "schedule": {
            "type": "object",
            "additionalProperties": False,
            "required": ["t_s", "alpha_threshold"],
            "properties": {
                "t_s": {"type": "integer", "minimum": 1},
                "alpha_threshold": {"type": "number", "minimum": 0},
                "max_measurements": {"type": "integer", "minimum": 1},
            },
        },
    },
}


def _null_attack(system, horizon: int) -> AttackSequence:
    from .lti import zero_attack

    return zero_attack(system.p, system.m, horizon + 1)


@dataclass(frozen=True)
class RunReport:
    """Files written by one scenario run plus the in-memory summary."""

    out_dir: Path
    files: dict
    summary: dict = field(repr=False)


def load_scenario(source) -> dict:
    """Read and validate a scenario config from a path or a dict."""
    if isinstance(source, (str, Path)):
        try:
            with open(source) as fh:
                config = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigInvalid(f"config is not valid JSON: {exc}") from exc
    else:
        config = source
    try:
        jsonschema.validate(config, SCENARIO_SCHEMA)
    except jsonschema.ValidationError as exc:
        where = exc.json_path if exc.json_path != "$" else "top level"
        raise ConfigInvalid(f"{where}: {exc.message}") from exc
    return config


def _cov(entry, dim: int, default: float = 0.01) -> np.ndarray:
    if entry is None:
        return default * np.eye(dim)
    if isinstance(entry, (int, float)):
        return float(entry) * np.eye(dim)
    return np.asarray(entry, dtype=float)


def build_system(config: dict) -> LinearSystem:
    spec = config["system"]
    a = np.asarray(spec["A"], dtype=float)
    p = np.asarray(spec["C"], dtype=float).shape[0]
    try:
        return make_system(
            spec["A"],
            spec["B"],
            spec["C"],
            _cov(spec.get("Q"), a.shape[0]),
            _cov(spec.get("R"), p),
        )
    except Exception as exc:
        raise ConfigInvalid(f"$.system: {exc}") from exc


def build_attack(config: dict, system, design) -> Optional[AttackSequence]:
    spec = config.get("attack")
    if spec is None:
        return None
    horizon = config.get("horizon", 200)
    budget = float(spec.get("budget", config.get("M", 2.0)))
    kind = spec["kind"]
    if kind == "synthesized":
        verdict = stealth_feasible(system, design)
        if not verdict.feasible:
            raise ConfigInvalid(f"$.attack: stealth infeasible ({verdict.reason})")
        return synth_sensor_attack(
            system,
            design,
            verdict.pairs[0],
            M=budget,
            T=horizon,
            anchor=float(spec.get("anchor", 0.1)),
        )
    if kind == "combined":
        return synth_combined_attack(
            system,
            design,
            u_bound=float(spec.get("u_bound", 1.0)),
            M=budget,
            T=horizon,
            seed=config.get("seeds", {}).get("plant", 0),
            eps=float(spec.get("eps", 0.0)),
        )
    if kind == "benchmark-literal":
        return literal_benchmark_attack(horizon, budget)
    if kind == "external":
        if "path" in spec:
            with open(spec["path"]) as fh:
                return AttackSequence.from_dict(json.load(fh))
        if "y_a" not in spec:
            raise ConfigInvalid("$.attack: external attack needs 'y_a' or 'path'")
        y_a = np.asarray(spec["y_a"], dtype=float)
        u_a = (
            np.asarray(spec["u_a"], dtype=float)
            if "u_a" in spec
            else np.zeros((y_a.shape[0], system.m))
        )
        if y_a.shape[0] <= horizon:
            raise ConfigInvalid(
                f"$.attack.y_a: {y_a.shape[0]} steps < horizon+1 = {horizon + 1}"
            )
        return AttackSequence(
            y_a=y_a, u_a=u_a, budget=budget, meta={"kind": "external"}
        )
    raise ConfigInvalid(f"$.attack.kind: unknown kind {kind!r}")


def build_coding(config: dict, system, attack_pairs) -> Optional[CodingMatrix]:
    spec = config.get("coding")
    if spec is None:
        return None
    if spec["kind"] == "manual":
        if "sigma" not in spec:
            raise ConfigInvalid("$.coding: manual coding needs 'sigma'")
        return coding_matrix(spec["sigma"])
    eigvecs = [pr.v for pr in attack_pairs]
    return generate_coding_matrix(
        system,
        eigvecs,
        rng_seed=config.get("seeds", {}).get("coding", 0),
        scale=float(spec.get("scale", 1.0)),
    )


def _write_csv(path: Path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)


def _num(x) -> str:
    return f"{float(x):.12e}"


def _ts_json(ts):
    return "inf" if ts == NEVER else int(ts)


def run_scenario(source, out_dir, quiet: bool = True, seed_override=None) -> RunReport:
    """Execute a scenario and write its CSV tables and summary.

    Files: ``trace.csv`` (per-step norms plus detector statistics on the
    active pipeline), ``report.csv`` (per-N stealth sweep, when an
    adversary section is present), ``summary.json``, ``provenance.json``.
    """
    config = load_scenario(source)
    if seed_override is not None:
        config = json.loads(json.dumps(config))
        config.setdefault("seeds", {})["plant"] = int(seed_override)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    say = (lambda *_: None) if quiet else print

    horizon = config.get("horizon", 200)
    threshold = float(config.get("M", 2.0))
    seeds = {"plant": 0, "coding": 0, "solver": 0} | config.get("seeds", {})
    kal = config.get("kalman", {})
    x0 = np.asarray(config["x0"], dtype=float) if "x0" in config else None

    system = build_system(config)
    design = steady_state_kalman(
        system,
        tol=kal.get("tol", 1e-12),
        confidence=kal.get("confidence", 0.99),
        mode=kal.get("mode", "innovation"),
    )
    closed = system.A - design.K @ system.C @ system.A
    summary: dict = {
        "kalman": {
            "alpha": design.alpha,
            "spectral_radius": float(max(abs(np.linalg.eigvals(closed)))),
            "P": design.P.tolist(),
            "K": design.K.tolist(),
        }
    }
    verdict = stealth_feasible(system, design)
    summary["stealth_feasibility"] = {
        "feasible": verdict.feasible,
        "reason": verdict.reason,
        "eigenvalues": [float(np.real(pr.eigenvalue)) for pr in verdict.pairs],
        "eigenvectors": [pr.v.tolist() for pr in verdict.pairs],
    }
    say(f"[run] kalman alpha={design.alpha:.4f} stealth_feasible={verdict.feasible}")

    files: dict = {}
    attack = build_attack(config, system, design)
    coding = build_coding(config, system, verdict.pairs) if attack or config.get("coding") else None
    if coding is not None:
        feas: dict = {"combined": check_feasible_combined(coding)}
        if verdict.pairs:
            feas["single"] = [
                check_feasible_single(coding, system.C, pr.v) for pr in verdict.pairs
            ]
            feas["multi"] = check_feasible_multi(
                coding, system.C, [pr.v for pr in verdict.pairs]
            )
        summary["coding"] = {
            "sigma": coding.sigma.tolist(),
            "provenance": coding.provenance,
            "feasibility": feas,
        }

    trace = trace_coded = trace_adapted = None
    if attack is not None:
        trace = difference_dynamics(system, design, attack, horizon)
        summary["attack"] = {
            "meta": attack.meta,
            "budget": attack.budget,
            "max_dz_uncoded": float(trace.dz_norms.max()),
            "ts_uncoded": _ts_json(stealth_time(trace, threshold)),
        }
        if coding is not None:
            trace_coded = difference_dynamics(
                system, design, attack, horizon, coding=coding
            )
            summary["attack"]["ts_coded"] = _ts_json(stealth_time(trace_coded, threshold))

    adv = config.get("adversary")
    if adv is not None:
        if coding is None or attack is None:
            raise ConfigInvalid("$.adversary: needs both an attack and a coding matrix")
        ns = adv["N"] if isinstance(adv["N"], list) else [adv["N"]]
        ns = sorted(int(n) for n in ns)
        eps = float(adv.get("epsilon", 0.0))
        rank_tol = float(adv.get("rank_tol", 1e-8))
        ts_base = stealth_time(trace_coded, threshold)
        Ys, us = record_coded_log(system, coding, max(ns), seeds["plant"], x0=x0)
        rows = [[0, "inf" if ts_base == NEVER else int(ts_base), _num(0.0)]]
        sweep = {}
        sigma_hat = None
        for n in ns:
            res = estimate_from_recording(system, Ys, us, n, eps, rank_tol)
            sigma_hat = res.sigma_hat
            adapted = adapt_attack(sigma_hat, attack)
            tr_a = difference_dynamics(system, design, adapted, horizon, coding=coding)
            ts_a = stealth_time(tr_a, threshold)
            alpha = stealth_gain_from_times(ts_base, ts_a)
            sweep[n] = {
                "ts": _ts_json(ts_a),
                "alpha": "inf" if alpha == math.inf else alpha,
                "cost": res.cost,
                "sigma_hat": res.sigma_hat.tolist(),
            }
            rows.append(
                [
                    n,
                    "inf" if ts_a == NEVER else int(ts_a),
                    "inf" if alpha == math.inf else _num(alpha),
                ]
            )
            if n == max(ns):
                trace_adapted = tr_a
        report_path = out_dir / "report.csv"
        _write_csv(report_path, ["N", "T_s", "alpha"], rows)
        files["report"] = report_path
        summary["adversary"] = {"ts_base": _ts_json(ts_base), "sweep": sweep}
        say(f"[run] adversary sweep N={ns} ts_base={ts_base}")

    if attack is not None:
        header = ["k", "de", "dz"]
        cols = [np.arange(horizon + 1), trace.de_norms, trace.dz_norms]
        if trace_coded is not None:
            header += ["de_coded", "dz_coded"]
            cols += [trace_coded.de_norms, trace_coded.dz_norms]
        if trace_adapted is not None:
            header += ["de_adapted", "dz_adapted"]
            cols += [trace_adapted.de_norms, trace_adapted.dz_norms]
        # detector statistics over a seeded noisy run of the active
        # pipeline (decoded injections when coding is present)
        if coding is not None:
            eff = AttackSequence(
                y_a=attack.y_a @ coding.sigma_inv.T,
                u_a=attack.u_a,
                budget=attack.budget,
                meta=attack.meta,
            )
        else:
            eff = attack
        traj = simulate_attacked(
            system, eff, seed=seeds["plant"], T=horizon, x0=x0, design=design
        )
        rt = residue_trace(design, system, traj)
        header += ["g", "alarm"]
        cols += [rt.g, (rt.g > design.alpha).astype(int)]
        rows = []
        for k in range(horizon + 1):
            row = [int(k)]
            for c in cols[1:]:
                val = c[k]
                row.append(int(val) if header[len(row)] == "alarm" else _num(val))
            rows.append(row)
        trace_path = out_dir / "trace.csv"
        _write_csv(trace_path, header, rows)
        files["trace"] = trace_path
        summary["detector"] = {
            "alarm_time": rt.alarm_time,
            "alpha": design.alpha,
        }

    if attack is None:
        # nominal run: residue statistics only
        traj = simulate_attacked(
            system,
            _null_attack(system, horizon),
            seed=seeds["plant"],
            T=horizon,
            x0=x0,
            design=design,
        )
        rt = residue_trace(design, system, traj)
        rows = [
            [int(k), _num(rt.g[k]), int(rt.g[k] > design.alpha)]
            for k in range(horizon + 1)
        ]
        trace_path = out_dir / "trace.csv"
        _write_csv(trace_path, ["k", "g", "alarm"], rows)
        files["trace"] = trace_path
        summary["detector"] = {
            "alarm_time": rt.alarm_time,
            "alpha": design.alpha,
            "alarm_rate": float(np.mean(rt.g > design.alpha)),
        }

    sched = config.get("schedule")
    if sched is not None:
        if coding is None or attack is None:
            raise ConfigInvalid("$.schedule: needs both an attack and a coding matrix")
        from .errors import HorizonExhausted

        try:
            n_sigma = choose_refresh_interval(
                system,
                design,
                coding,
                attack,
                t_s=int(sched["t_s"]),
                alpha_threshold=float(sched["alpha_threshold"]),
                M=threshold,
                seed=seeds["plant"],
                max_measurements=int(sched.get("max_measurements", 200)),
                x0=x0,
                horizon=horizon,
            )
            summary["schedule"] = {"n_sigma": n_sigma, "exhausted": False}
        except HorizonExhausted as exc:
            summary["schedule"] = {"n_sigma": None, "exhausted": True, "detail": str(exc)}
        say(f"[run] schedule -> {summary['schedule']}")

    canonical = json.dumps(config, sort_keys=True).encode()
    provenance = {
        "config_sha256": hashlib.sha256(canonical).hexdigest(),
        "seeds": seeds,
        "version": __version__,
    }
    summary_path = out_dir / "summary.json"
    with open(summary_path, "w") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
        fh.write("\n")
    prov_path = out_dir / "provenance.json"
    with open(prov_path, "w") as fh:
        json.dump(provenance, fh, indent=2, sort_keys=True)
        fh.write("\n")
    files["summary"] = summary_path
    files["provenance"] = prov_path
    return RunReport(out_dir=out_dir, files=files, summary=summary)


def bundled_scenario_path(name: str) -> Path:
    """Path of a scenario shipped with the package."""
    root = resources.files("fdicode") / "scenarios" / f"{name}.json"
    if not root.is_file():
        raise UnknownFigure(f"no bundled scenario named {name!r}")
    return Path(str(root))


def reproduce(figure_id: str, out_dir, quiet: bool = True) -> RunReport:
    """Run one bundled benchmark scenario (fig3 .. fig7) into
    out_dir/<figure_id>/."""
    if figure_id not in FIGURES:
        raise UnknownFigure(
            f"unknown figure {figure_id!r}; choose one of {', '.join(FIGURES)}"
        )
    return run_scenario(
        bundled_scenario_path(figure_id), Path(out_dir) / figure_id, quiet=quiet
    )


def reproduce_all(out_dir, quiet: bool = True) -> dict:
    return {fig: reproduce(fig, out_dir, quiet=quiet) for fig in FIGURES}
