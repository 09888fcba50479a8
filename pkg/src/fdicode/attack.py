"""Stealth feasibility, injection synthesis, and difference dynamics.

The central object is the deterministic difference recursion between the
compromised and nominal closed loops.  With F = A - K C A and injections
(y_a[k], u_a[k]), the estimation-error change de and residue change dz obey

    dz[k] = C A de[k-1] + C B u_a[k-1] + y_a[k]
    de[k] = F de[k-1] - K y_a[k] + (B - K C B) u_a[k-1]

starting from de[-1] = 0, so de[0] = -K y_a[0] and dz[0] = y_a[0] (the
first injection hits the filter at step 0; u_a enters one step later).
Noise cancels exactly between paired runs, so these traces are noise-free
even though the underlying simulations are not.

Under output coding with an invertible matrix, the estimator decodes the
channel and the same recursion runs with y_a replaced by sigma_inv @ y_a
(actuator injections are never coded).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import ScaleSearchFailed, UnsupportedSpectrum
from .estimation import KalmanDesign, steady_state_kalman
from .lti import AttackSequence, EigenPair, LinearSystem, controllability_matrix, in_span, make_system, unstable_eigenpairs

DEFAULT_TOL = 1e-8

# Fraction of the growth scale used to anchor de[0] slightly against the
# growth direction.  The phase-1 system is underdetermined; the plain
# minimum-norm solution leaves de[0] with a positive component along the
# eigenvector, which biases the norm-growth ratio just below its
# asymptote.  A small negative anchor makes growth clean from step 0.
PHASE1_ANCHOR = 0.1


@dataclass(frozen=True)
class DifferenceTrace:
    """Deterministic difference sequences de[k], dz[k] for k = 0..T."""

    de: np.ndarray
    dz: np.ndarray
    coded: bool
    sigma: Optional[np.ndarray] = None

    @property
    def de_norms(self) -> np.ndarray:
        return np.linalg.norm(self.de, axis=1)

    @property
    def dz_norms(self) -> np.ndarray:
        return np.linalg.norm(self.dz, axis=1)


@dataclass(frozen=True)
class FeasibilityVerdict:
    """Outcome of the stealth-feasibility test with the qualifying pairs."""

    feasible: bool
    pairs: tuple
    reason: str


class _DifferenceStepper:
    """Shared single-step evaluator so synthesis and replay produce
    bit-identical traces (the combined attack relies on exact cancellation
    of the physical term against the injection)."""

    def __init__(self, system: LinearSystem, design: KalmanDesign):
        self.F = system.A - design.K @ system.C @ system.A
        self.K = design.K
        self.CA = system.C @ system.A
        self.CB = system.C @ system.B
        self.BK = system.B - design.K @ self.CB
        self.p = system.p
        self.m = system.m

    def physical(self, de_prev: np.ndarray, ua_prev: Optional[np.ndarray]) -> np.ndarray:
        """The injection-independent part of dz[k]."""
        phys = self.CA @ de_prev
        if ua_prev is not None:
            phys = phys + self.CB @ ua_prev
        return phys

    def advance(self, de_prev, inj, ua_prev):
        de = self.F @ de_prev - self.K @ inj
        if ua_prev is not None:
            de = de + self.BK @ ua_prev
        return de


def difference_dynamics(
    system: LinearSystem,
    design: KalmanDesign,
    attack: AttackSequence,
    T: int,
    coding=None,
    redesigned_gain: bool = False,
) -> DifferenceTrace:
    """Run the difference recursion for T steps (trace indices 0..T).

    ``coding`` is a CodingMatrix (or None).  By default the estimator keeps
    the original gain and decodes the channel, so coded injections enter as
    sigma_inv @ y_a.  With ``redesigned_gain`` the filter is rebuilt for
    the coded output map (gain K' on the coded stream); the injections
    then enter raw and the residue lives in coded coordinates.  The two
    modes agree up to a left-multiplication of dz by sigma, since
    K' = K sigma_inv exactly.
    """
    if len(attack) < T + 1:
        from .errors import HorizonTooShort

        raise HorizonTooShort(f"attack has {len(attack)} steps, need {T + 1}")
    sigma = None if coding is None else np.asarray(coding.sigma, dtype=float)
    if coding is not None and redesigned_gain:
        coded_sys = make_system(
            system.A,
            system.B,
            sigma @ system.C,
            system.Q,
            sigma @ system.R @ sigma.T,
        )
        stepper = _DifferenceStepper(coded_sys, steady_state_kalman(coded_sys))
        inj_of = lambda k: attack.y_a[k]
    elif coding is not None:
        stepper = _DifferenceStepper(system, design)
        sigma_inv = np.asarray(coding.sigma_inv, dtype=float)
        inj_of = lambda k: sigma_inv @ attack.y_a[k]
    else:
        stepper = _DifferenceStepper(system, design)
        inj_of = lambda k: attack.y_a[k]

    has_ua = bool(np.any(attack.u_a))
    n = stepper.F.shape[0]
    de = np.empty((T + 1, n))
    dz = np.empty((T + 1, stepper.p))
    de_prev = np.zeros(n)
    for k in range(T + 1):
        ua_prev = attack.u_a[k - 1] if (has_ua and k > 0) else None
        inj = inj_of(k)
        dz[k] = stepper.physical(de_prev, ua_prev) + inj
        de_prev = stepper.advance(de_prev, inj, ua_prev)
        de[k] = de_prev
    return DifferenceTrace(de=de, dz=dz, coded=coding is not None, sigma=sigma)


def stealth_feasible(
    system: LinearSystem, design: KalmanDesign, tol: float = DEFAULT_TOL
) -> FeasibilityVerdict:
    """Decide whether an undetectable unbounded sensor injection exists.

    Requires a real unstable eigenvector of A lying in the span of the
    controllability matrix of (A - K C A, K).  For any converged Kalman
    design the span condition holds automatically (the reachable subspace
    of that pair is A-invariant and absorbs every unstable mode), so the
    test only bites for hand-built gains; it is still checked.
    """
    pairs = unstable_eigenpairs(system, tol)
    if not pairs:
        return FeasibilityVerdict(False, (), "no unstable eigenvalue")
    real_pairs = [pr for pr in pairs if pr.is_real]
    if not real_pairs:
        raise UnsupportedSpectrum(
            "all unstable eigenvalues are complex; the real-eigenvector "
            "injection construction does not apply"
        )
    F = system.A - design.K @ system.C @ system.A
    q_oa = controllability_matrix(F, design.K)
    qualifying = tuple(pr for pr in real_pairs if in_span(pr.v, q_oa, tol))
    if not qualifying:
        return FeasibilityVerdict(
            False, (), "no real unstable eigenvector lies in the reachable span"
        )
    return FeasibilityVerdict(True, qualifying, "")


def _phase1_injections(system, design, pair, anchor: float) -> np.ndarray:
    """Injections y_a[0..n-1] driving de[n-1] to the unit eigenvector.

    Solves the stacked reachability system by least squares.  The leftover
    null-space freedom is spent pulling de[0] = -K y_a[0] toward
    -anchor * v, which keeps the later norm growth monotone.
    Returns an (n, p) array.
    """
    n, p = system.n, system.p
    F = system.A - design.K @ system.C @ system.A
    blocks = []
    fk = np.eye(n)
    powers = [fk]
    for _ in range(n - 1):
        powers.append(F @ powers[-1])
    for j in range(n):
        blocks.append(-powers[n - 1 - j] @ design.K)
    mmap = np.hstack(blocks)  # maps stacked injections to de[n-1]
    target = pair.v
    base, *_ = np.linalg.lstsq(mmap, target, rcond=None)
    resid = np.linalg.norm(mmap @ base - target)
    if resid > 1e-8 * max(1.0, np.linalg.norm(target)):
        raise ScaleSearchFailed(
            f"eigenvector not reachable in {n} steps (residual {resid:.3e}); "
            "check the feasibility verdict"
        )
    if anchor != 0.0:
        _, svals, vt = np.linalg.svd(mmap)
        rank = int(np.sum(svals > 1e-12 * svals[0]))
        null = vt[rank:].T
        if null.size:
            sel = np.zeros((n, n * p))
            sel[:, :p] = design.K
            want = anchor * pair.v - sel @ base
            xi, *_ = np.linalg.lstsq(sel @ null, want, rcond=None)
            base = base + null @ xi
    return base.reshape(n, p)


def synth_sensor_attack(
    system: LinearSystem,
    design: KalmanDesign,
    pair: EigenPair,
    M: float,
    T: int,
    anchor: float = PHASE1_ANCHOR,
    bisect_iters: int = 50,
) -> AttackSequence:
    """Build a sensor-only injection sequence of length T+1 that keeps the
    residue change within M while the error change grows without bound.

    Phase 1 (steps 0..n-1) steers de[n-1] onto the unstable eigenvector;
    phase 2 extends periodically, y_a[n+i] = y_a[i] - s lambda^(i+1) Cv,
    which makes dz exactly n-periodic.  The overall scale s is found by
    bisection against the post-hoc budget check max_k ||dz[k]|| <= M.
    """
    if not pair.is_real:
        raise UnsupportedSpectrum("synthesis needs a real unstable eigenpair")
    if M <= 0 or not np.isfinite(M):
        raise ScaleSearchFailed(f"budget M must be positive and finite, got {M}")
    n, p = system.n, system.p
    lam = float(np.real(pair.eigenvalue))
    y_star = system.C @ pair.v

    y_a = np.zeros((T + 1, p))
    head = _phase1_injections(system, design, pair, anchor)
    y_a[: min(n, T + 1)] = head[: T + 1]
    for k in range(n, T + 1):
        y_a[k] = y_a[k - n] - lam ** (k - n + 1) * y_star

    def max_residue(scale: float) -> float:
        att = AttackSequence(
            y_a=scale * y_a, u_a=np.zeros((T + 1, system.m)), budget=M
        )
        return float(difference_dynamics(system, design, att, T).dz_norms.max())

    ca_v = np.linalg.norm(system.C @ system.A @ pair.v)
    s_max = M / max(ca_v, 1e-12)
    if not np.isfinite(max_residue(s_max)):
        raise ScaleSearchFailed("difference recursion diverged at the trial scale")
    best = 0.0
    if max_residue(s_max) <= M:
        best = s_max
    else:
        lo, hi = 0.0, s_max
        for _ in range(bisect_iters):
            mid = 0.5 * (lo + hi)
            if max_residue(mid) <= M:
                best = mid
                lo = mid
            else:
                hi = mid
    if best <= 0.0:
        raise ScaleSearchFailed("no positive scale satisfies the residue budget")
    return AttackSequence(
        y_a=best * y_a,
        u_a=np.zeros((T + 1, system.m)),
        budget=M,
        meta={
            "kind": "sensor-synthesized",
            "eigenvalue": lam,
            "eigenvector": pair.v.tolist(),
            "phase1_len": n,
            "y_star": y_star.tolist(),
            "scale": best,
            "anchor": anchor,
        },
    )


def _growth_direction(system: LinearSystem, rng: np.random.Generator) -> np.ndarray:
    """Unit actuator direction that excites an unstable mode of A through
    B, via the left eigenvector; random persistent direction otherwise."""
    m = system.m
    lams, wvecs = np.linalg.eig(system.A.T)
    best = None
    for i in range(len(lams)):
        lam = lams[i]
        if abs(lam) < 1.0 or abs(lam.imag) > 1e-10 * max(1.0, abs(lam)):
            continue
        w = np.real(wvecs[:, i])
        nw = np.linalg.norm(w)
        if nw == 0:
            continue
        d = system.B.T @ (w / nw)
        if np.linalg.norm(d) > 1e-10:
            if best is None or abs(lam) > best[0]:
                best = (abs(lam), d / np.linalg.norm(d))
    if best is not None:
        return best[1]
    d = rng.standard_normal(m)
    return d / np.linalg.norm(d)


def synth_combined_attack(
    system: LinearSystem,
    design: KalmanDesign,
    u_bound: float,
    M: float,
    T: int,
    seed: int = 0,
    eps: float = 0.0,
) -> AttackSequence:
    """Sensor-plus-actuator injection: bounded u_a drives the error change
    through the open plant while y_a[k+1] cancels the induced residue
    term, dz[k+1] = (C A de[k] + C B u_a[k]) + y_a[k+1] + eps_k.

    With eps = 0 the cancellation is exact in floating point, because the
    synthesis and the replay evaluate the physical term through the same
    code path and y_a[k+1] is its negation.  ``eps`` > 0 adds a seeded
    perturbation of that radius (clipped to M).
    """
    rng = np.random.default_rng(seed)
    n, p, m = system.n, system.p, system.m
    stepper = _DifferenceStepper(system, design)
    direction = _growth_direction(system, rng)
    u_a = np.tile(u_bound * direction, (T + 1, 1))
    y_a = np.zeros((T + 1, p))
    eps = min(eps, M)

    de_prev = np.zeros(n)
    for k in range(T + 1):
        ua_prev = u_a[k - 1] if k > 0 else None
        if k > 0:
            y_a[k] = -stepper.physical(de_prev, ua_prev)
            if eps > 0.0:
                raw = rng.standard_normal(p)
                y_a[k] = y_a[k] + (eps * rng.uniform()) * raw / np.linalg.norm(raw)
        de_prev = stepper.advance(de_prev, y_a[k], ua_prev)
    return AttackSequence(
        y_a=y_a,
        u_a=u_a,
        budget=M,
        meta={
            "kind": "combined-synthesized",
            "u_bound": u_bound,
            "eps": eps,
            "seed": seed,
            "direction": direction.tolist(),
        },
    )


def literal_benchmark_attack(steps: int, budget: float = 2.0) -> AttackSequence:
    """The published two-sensor stealth sequence for the 2-D benchmark
    plant: starts from two fixed vectors and extends by subtracting the
    first vector every other step."""
    y_a = np.zeros((steps + 1, 2))
    y_a[0] = [0.0588, 0.0588]
    if steps >= 1:
        y_a[1] = [0.1286, -0.9706]
    for k in range(2, steps + 1):
        y_a[k] = y_a[k - 2] - y_a[0]
    return AttackSequence(
        y_a=y_a,
        u_a=np.zeros((steps + 1, 1)),
        budget=budget,
        meta={"kind": "external-benchmark"},
    )
