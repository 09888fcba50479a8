"""Defender-side timing metrics and the coding-refresh heuristic.

stealth_time is the first step at which the residue-change norm exceeds
the detection band M.  The stealth gain alpha(N) compares the time bought
by an attacker who estimated the code from N eavesdropped measurements
against the unadapted attack; the refresh heuristic grows N in increments
of t_s until alpha(N) reaches the configured threshold, which is the
longest the defender may keep one coding matrix.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import Callable, Dict, Optional, Union

import numpy as np

from .adversary import Exhausted, adapt_attack, estimate_coding_matrix
from .attack import DifferenceTrace, difference_dynamics
from .coding import CodingMatrix, encode
from .errors import BaseNeverDetected, HorizonExhausted
from .estimation import KalmanDesign
from .lti import AttackSequence, LinearSystem, simulate

NEVER = math.inf

StealthTime = Union[int, float]  # step index, or math.inf when never detected


@dataclass(frozen=True)
class StealthReport:
    """Stealth times and gains over a sweep of measurement counts."""

    ts_base: StealthTime
    ts_adapted: Dict[int, StealthTime]
    alpha_of_n: Dict[int, float]
    M: float

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["N", "T_s", "alpha"])
            w.writerow([0, _fmt_ts(self.ts_base), f"{0.0:.12e}"])
            for n in sorted(self.ts_adapted):
                w.writerow(
                    [n, _fmt_ts(self.ts_adapted[n]), f"{self.alpha_of_n[n]:.12e}"]
                )


def _fmt_ts(ts: StealthTime) -> str:
    return "inf" if ts == NEVER else str(int(ts))


def stealth_time(trace: DifferenceTrace, M: float) -> StealthTime:
    """First index k with ||dz[k]|| > M, or math.inf if the trace stays
    inside the band for its whole horizon."""
    over = np.nonzero(trace.dz_norms > M)[0]
    return int(over[0]) if over.size else NEVER


def stealth_gain_from_times(ts_base: StealthTime, ts_adapted: StealthTime) -> float:
    """Relative stealth-time gain (ts_adapted - ts_base) / ts_base."""
    if ts_base == NEVER:
        raise BaseNeverDetected("base attack is never detected; gain undefined")
    if ts_base <= 0:
        raise BaseNeverDetected(
            "base attack trips the detector at step 0; gain undefined"
        )
    if ts_adapted == NEVER:
        return math.inf
    return (ts_adapted - ts_base) / ts_base


def record_coded_log(
    system: LinearSystem,
    coding: CodingMatrix,
    N: int,
    seed: int,
    x0=None,
    control=None,
):
    """Eavesdrop N steps of coded sensor traffic and plant inputs from a
    seeded nominal run (the attacker subtracts its own injections, so the
    recorded stream is the clean coded output)."""
    traj = simulate(system, control, seed=seed, T=max(N, 1), x0=x0)
    Ys = [encode(coding, traj.outputs[k]) for k in range(N)]
    us = [traj.inputs[k] for k in range(N)]
    return Ys, us


def estimate_from_recording(system, Ys, us, N, epsilon=0.0, rank_tol=1e-8, max_iter=200):
    """Streaming estimate over the first N recorded observations; the
    estimator's Exhausted signal just means the cost floor stayed above
    epsilon, which is the expected outcome on noisy logs."""
    stream = zip(Ys[:N], us[:N])
    try:
        res = estimate_coding_matrix(
            system.A,
            system.B,
            system.C,
            stream,
            epsilon=epsilon,
            rank_tol=rank_tol,
            max_steps=N,
            max_iter=max_iter,
        )
    except Exhausted as exc:
        res = exc.result
    if res is None:
        raise BaseNeverDetected("estimator produced no full-rank solution")
    return res


def stealth_gain(
    system: LinearSystem,
    design: KalmanDesign,
    coding: CodingMatrix,
    base_attack: AttackSequence,
    N: int,
    M: float,
    seed: int,
    horizon: Optional[int] = None,
    x0=None,
    control=None,
    epsilon: float = 0.0,
    rank_tol: float = 1e-8,
    max_iter: int = 200,
    log=None,
) -> float:
    """Full adaptive-attacker loop for one measurement count N.

    Simulates the coded plant, records N steps, estimates the code,
    re-targets the base attack through the estimate, and compares stealth
    times on the coded system.  ``log`` may carry a pre-recorded (Ys, us)
    pair so sweeps share one eavesdropping session.
    """
    horizon = len(base_attack) - 1 if horizon is None else horizon
    ts_b = stealth_time(
        difference_dynamics(system, design, base_attack, horizon, coding=coding), M
    )
    if ts_b == NEVER or ts_b <= 0:
        raise BaseNeverDetected(f"base stealth time is {ts_b}; gain undefined")
    Ys, us = log if log is not None else record_coded_log(
        system, coding, N, seed, x0=x0, control=control
    )
    res = estimate_from_recording(system, Ys, us, N, epsilon, rank_tol, max_iter)
    adapted = adapt_attack(res.sigma_hat, base_attack)
    ts_a = stealth_time(
        difference_dynamics(system, design, adapted, horizon, coding=coding), M
    )
    return stealth_gain_from_times(ts_b, ts_a)


def stealth_report(
    system: LinearSystem,
    design: KalmanDesign,
    coding: CodingMatrix,
    base_attack: AttackSequence,
    Ns,
    M: float,
    seed: int,
    horizon: Optional[int] = None,
    x0=None,
    control=None,
    epsilon: float = 0.0,
    rank_tol: float = 1e-8,
    max_iter: int = 200,
) -> StealthReport:
    """Sweep the measurement count over one shared eavesdropping session
    and report T_s and alpha per N."""
    horizon = len(base_attack) - 1 if horizon is None else horizon
    ts_b = stealth_time(
        difference_dynamics(system, design, base_attack, horizon, coding=coding), M
    )
    if ts_b == NEVER or ts_b <= 0:
        raise BaseNeverDetected(f"base stealth time is {ts_b}; gain undefined")
    Ns = sorted(int(n) for n in Ns)
    Ys, us = record_coded_log(system, coding, max(Ns), seed, x0=x0, control=control)
    ts_map: Dict[int, StealthTime] = {}
    alpha: Dict[int, float] = {}
    for n in Ns:
        res = estimate_from_recording(system, Ys, us, n, epsilon, rank_tol, max_iter)
        adapted = adapt_attack(res.sigma_hat, base_attack)
        ts_map[n] = stealth_time(
            difference_dynamics(system, design, adapted, horizon, coding=coding), M
        )
        alpha[n] = stealth_gain_from_times(ts_b, ts_map[n])
    return StealthReport(ts_base=ts_b, ts_adapted=ts_map, alpha_of_n=alpha, M=M)


def choose_refresh_interval(
    system: LinearSystem,
    design: KalmanDesign,
    coding: CodingMatrix,
    base_attack: AttackSequence,
    t_s: int,
    alpha_threshold: float,
    M: float,
    seed: int = 0,
    max_measurements: int = 200,
    ts_fn: Optional[Callable[[int], StealthTime]] = None,
    **scenario,
) -> int:
    """Smallest measurement count, grown in steps of t_s, at which the
    attacker's stealth gain reaches the threshold; run the coding refresh
    at least this often.

    ``ts_fn`` optionally injects an oracle N -> T_s (with ts_fn(0) the
    base stealth time), which makes the arithmetic testable without any
    simulation.  Raises HorizonExhausted when the gain never reaches the
    threshold within ``max_measurements``.
    """
    if t_s < 1:
        raise ValueError(f"t_s must be >= 1, got {t_s}")
    if alpha_threshold <= 0.0:
        return 0
    shared_log = None
    if ts_fn is None:
        shared_log = record_coded_log(
            system,
            coding,
            max_measurements,
            seed,
            x0=scenario.get("x0"),
            control=scenario.get("control"),
        )
        ts_base = None
    else:
        ts_base = ts_fn(0)
    n_sigma = 0
    while True:
        n_sigma += t_s
        if n_sigma > max_measurements:
            raise HorizonExhausted(
                f"gain below {alpha_threshold:g} after {max_measurements} measurements"
            )
        if ts_fn is not None:
            alpha = stealth_gain_from_times(ts_base, ts_fn(n_sigma))
        else:
            alpha = stealth_gain(
                system,
                design,
                coding,
                base_attack,
                n_sigma,
                M,
                seed,
                horizon=scenario.get("horizon"),
                x0=scenario.get("x0"),
                control=scenario.get("control"),
                epsilon=scenario.get("epsilon", 0.0),
                rank_tol=scenario.get("rank_tol", 1e-8),
                log=shared_log,
            )
        if alpha >= alpha_threshold:
            return n_sigma
