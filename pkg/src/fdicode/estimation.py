"""Steady-state Kalman filtering, chi-square fault detection, and the
observer-based fault-detection filter.

The filter uses the prediction-form residue z[k+1] = y[k+1] - C(A x_hat[k]
+ B u[k]) with a constant gain K = P C' (C P C' + R)^-1, where P is the
steady-state prediction error covariance.  Without attacks z is Gaussian
with covariance C P C' + R, so the quadratic statistic follows a chi-square
law with p degrees of freedom.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy import stats

from .errors import RiccatiNoConvergence, SingularQuadraticForm, UnstableObserver
from .lti import LinearSystem, Trajectory, psd_sqrt

# Quadratic-form conventions for the detection statistic g = z' W z.
# "innovation" uses W = (C P C' + R)^-1, the statistically correct choice
# with p degrees of freedom.  "state-cov" uses W = P^-1 with the n x n
# error covariance, which is dimensionally valid only when p = n; for
# p != n it falls back to the innovation form with a warning.
MODE_INNOVATION = "innovation"
MODE_STATE_COV = "state-cov"


@dataclass(frozen=True)
class KalmanDesign:
    """Steady-state filter: prediction error covariance P, gain K, alarm
    threshold alpha, and the detector's quadratic-form mode.

    ``innovation_cov`` caches C P C' + R.  Build via
    :func:`steady_state_kalman`, which verifies the Riccati fixed point and
    that A - K C A is Schur stable.
    """

    P: np.ndarray
    K: np.ndarray
    alpha: float
    mode: str
    innovation_cov: np.ndarray
    confidence: float = 0.99

    @property
    def n(self) -> int:
        return self.P.shape[0]

    @property
    def p(self) -> int:
        return self.K.shape[1]


@dataclass(frozen=True)
class FilterState:
    """Current estimate x_hat and its time index."""

    x_hat: np.ndarray
    k: int = -1


@dataclass(frozen=True)
class ResidueTrace:
    """Innovations z[k], detection statistics g[k], standardized residues
    eta[k] = P^(-1/2) z[k], filtered estimates x_hat[k], and the first
    alarm index (None if silent)."""

    z: np.ndarray
    g: np.ndarray
    eta: np.ndarray
    x_hat: np.ndarray
    alarm_time: Optional[int]


def riccati_step(system: LinearSystem, P: np.ndarray) -> np.ndarray:
    """One fixed-point map P -> A (P - P C'(C P C' + R)^-1 C P) A' + Q."""
    C, R = system.C, system.R
    S = C @ P @ C.T + R
    G = np.linalg.solve(S, C @ P)  # S^-1 C P
    return system.A @ (P - P @ C.T @ G) @ system.A.T + system.Q


def steady_state_kalman(
    system: LinearSystem,
    tol: float = 1e-12,
    max_iter: int = 200_000,
    confidence: float = 0.99,
    mode: str = MODE_INNOVATION,
    theta: Optional[np.ndarray] = None,
) -> KalmanDesign:
    """Solve the discrete Riccati equation by fixed-point iteration.

    Starts from P0 = theta (identity by default) and iterates until the
    Frobenius change drops below tol * (1 + ||P||).  The alarm threshold is
    the chi-square(p) quantile at ``confidence``.

    Raises RiccatiNoConvergence if max_iter is exceeded, if the innovation
    covariance is singular, or if A - K C A ends up unstable.
    """
    n, p = system.n, system.p
    P = np.eye(n) if theta is None else np.asarray(theta, dtype=float).reshape(n, n)
    converged = False
    for _ in range(max_iter):
        try:
            P_next = riccati_step(system, P)
        except np.linalg.LinAlgError as exc:
            raise RiccatiNoConvergence(f"singular innovation covariance: {exc}") from exc
        if np.linalg.norm(P_next - P) <= tol * (1.0 + np.linalg.norm(P)):
            P = P_next
            converged = True
            break
        P = P_next
    if not converged:
        raise RiccatiNoConvergence(f"no fixed point after {max_iter} iterations")

    P = 0.5 * (P + P.T)
    S = system.C @ P @ system.C.T + system.R
    try:
        K = np.linalg.solve(S.T, (P @ system.C.T).T).T  # P C' S^-1
    except np.linalg.LinAlgError as exc:
        raise RiccatiNoConvergence(f"singular innovation covariance: {exc}") from exc
    closed = system.A - K @ system.C @ system.A
    rho = max(abs(np.linalg.eigvals(closed)))
    if rho >= 1.0:
        raise RiccatiNoConvergence(
            f"A - K C A has spectral radius {rho:.6g} >= 1; "
            "check stabilizability of (A, Q^(1/2))"
        )
    alpha = float(stats.chi2.ppf(confidence, df=p))
    if mode not in (MODE_INNOVATION, MODE_STATE_COV):
        raise ValueError(f"unknown detector mode {mode!r}")
    for arr in (P, K, S):
        arr.setflags(write=False)
    return KalmanDesign(
        P=P, K=K, alpha=alpha, mode=mode, innovation_cov=S, confidence=confidence
    )


def kalman_step(
    design: KalmanDesign,
    system: LinearSystem,
    state: FilterState,
    u_prev: np.ndarray,
    y: np.ndarray,
):
    """One filter update: returns (new state, innovation z).

    z = y - C (A x_hat + B u_prev);  x_hat+ = A x_hat + B u_prev + K z.
    The initial state FilterState(x_hat=0, k=-1) makes the first call
    produce z[0] = y[0] (zero prior prediction).
    """
    pred = system.A @ state.x_hat + system.B @ np.asarray(u_prev, dtype=float).reshape(
        system.m
    )
    z = np.asarray(y, dtype=float).reshape(system.p) - system.C @ pred
    return FilterState(x_hat=pred + design.K @ z, k=state.k + 1), z


def initial_filter_state(system: LinearSystem) -> FilterState:
    return FilterState(x_hat=np.zeros(system.n), k=-1)


def chi2_stat(design: KalmanDesign, z: np.ndarray) -> float:
    """Detection statistic g for one innovation, per the design's mode."""
    z = np.asarray(z, dtype=float).reshape(-1)
    if design.mode == MODE_STATE_COV and z.size == design.n:
        W = design.P
    else:
        if design.mode == MODE_STATE_COV:
            warnings.warn(
                "state-covariance quadratic form needs p = n; "
                "falling back to the innovation covariance",
                stacklevel=2,
            )
        W = design.innovation_cov
    try:
        g = float(z @ np.linalg.solve(W, z))
    except np.linalg.LinAlgError as exc:
        raise SingularQuadraticForm(str(exc)) from exc
    return g


def detect(g_sequence, alpha: float) -> Optional[int]:
    """First index with g > alpha, or None."""
    for k, g in enumerate(g_sequence):
        if g > alpha:
            return k
    return None


def residue_trace(
    design: KalmanDesign, system: LinearSystem, traj: Trajectory
) -> ResidueTrace:
    """Run the steady-state filter over a trajectory and score every step."""
    T = traj.horizon
    p = system.p
    z = np.empty((T + 1, p))
    g = np.empty(T + 1)
    x_hat = np.empty((T + 1, system.n))
    state = initial_filter_state(system)
    u_zero = np.zeros(system.m)
    for k in range(T + 1):
        u_prev = traj.inputs[k - 1] if k > 0 else u_zero
        state, zk = kalman_step(design, system, state, u_prev, traj.outputs[k])
        z[k] = zk
        g[k] = chi2_stat(design, zk)
        x_hat[k] = state.x_hat
    w, u = np.linalg.eigh(0.5 * (design.P + design.P.T))
    if w.min() <= 0:
        raise SingularQuadraticForm("P is singular; eta is undefined")
    p_inv_sqrt = (u / np.sqrt(w)) @ u.T
    if design.P.shape[0] == p:
        eta = z @ p_inv_sqrt.T
    else:
        eta = z @ np.linalg.inv(psd_sqrt(design.innovation_cov)).T
    return ResidueTrace(
        z=z, g=g, eta=eta, x_hat=x_hat, alarm_time=detect(g, design.alpha)
    )


class FaultDetectionFilter:
    """Observer-based residual generator:

        x_hat+ = A x_hat + B u + H (y - C x_hat),   r = V (y - C x_hat).

    A - H C must be Schur stable (checked at construction).
    """

    def __init__(self, H, V, system: LinearSystem):
        H = np.asarray(H, dtype=float).reshape(system.n, system.p)
        V = np.asarray(V, dtype=float).reshape(system.p, system.p)
        rho = max(abs(np.linalg.eigvals(system.A - H @ system.C)))
        if rho >= 1.0:
            raise UnstableObserver(f"A - H C has spectral radius {rho:.6g} >= 1")
        self.H = H
        self.V = V
        self.system = system

    def step(self, state: FilterState, u: np.ndarray, y: np.ndarray):
        """Advance the observer one step; returns (new state, residual r)."""
        sys_ = self.system
        innov = np.asarray(y, dtype=float).reshape(sys_.p) - sys_.C @ state.x_hat
        r = self.V @ innov
        x_next = (
            sys_.A @ state.x_hat
            + sys_.B @ np.asarray(u, dtype=float).reshape(sys_.m)
            + self.H @ innov
        )
        return FilterState(x_hat=x_next, k=state.k + 1), r

    def run(self, traj: Trajectory) -> np.ndarray:
        """Residual sequence r[0..T-1] over a trajectory (r[k] uses u[k])."""
        state = FilterState(x_hat=np.zeros(self.system.n), k=-1)
        rs = np.empty((traj.horizon, self.system.p))
        for k in range(traj.horizon):
            state, rs[k] = self.step(state, traj.inputs[k], traj.outputs[k])
        return rs


def fd_filter_step(filt: FaultDetectionFilter, state: FilterState, u_prev, y):
    """Functional wrapper around :meth:`FaultDetectionFilter.step`."""
    return filt.step(state, u_prev, y)


def apply_active_monitor(control_law, u_d: np.ndarray):
    """Superimpose a monitor sequence u_d[k] on an existing control law.

    Returns a new law k, x_hat -> u_k + u_d[k].  Adding any such probe
    leaves the residue-difference trace of a sensor attack unchanged.
    """
    u_d = np.atleast_2d(np.asarray(u_d, dtype=float))

    def law(k: int, x_hat: np.ndarray) -> np.ndarray:
        if control_law is None:
            base = np.zeros(u_d.shape[1])
        elif isinstance(control_law, np.ndarray):
            base = control_law[k]
        else:
            base = np.asarray(control_law(k, x_hat), dtype=float)
        return base + u_d[k]

    return law
