"""Discrete-time LTI plant model, eigenstructure analysis, and simulation.

The plant is x[k+1] = A x[k] + B u[k] + w[k], y[k] = C x[k] + v[k] with
w ~ N(0, Q) and v ~ N(0, R).  All operations here are pure: given the same
seed they reproduce trajectories bit-exactly, which the attack analysis
relies on (paired runs with identical noise cancel exactly).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence, Union

import numpy as np

from .errors import (
    CovarianceNotPSD,
    DimensionMismatch,
    EigensolverFailure,
    HorizonTooShort,
    NotDetectable,
)

DEFAULT_TOL = 1e-8

# A control law is either None (zero input), an open-loop (T, m) array, or a
# deterministic map (k, x_hat) -> u.  Closed-loop laws must be linear in
# x_hat for the paired-noise cancellation to be exact.
ControlLaw = Union[None, np.ndarray, Callable[[int, np.ndarray], np.ndarray]]


def _as_matrix(name: str, x) -> np.ndarray:
    a = np.atleast_2d(np.array(x, dtype=float))
    if a.ndim != 2:
        raise DimensionMismatch(f"{name} must be a 2-D matrix, got ndim={a.ndim}")
    return a


def _check_symmetric_psd(name: str, m: np.ndarray, tol: float) -> None:
    scale = max(1.0, float(np.abs(m).max()) if m.size else 1.0)
    if not np.allclose(m, m.T, atol=tol * scale):
        raise CovarianceNotPSD(f"{name} is not symmetric")
    eigs = np.linalg.eigvalsh(0.5 * (m + m.T))
    if eigs.min() < -tol * scale:
        raise CovarianceNotPSD(f"{name} has negative eigenvalue {eigs.min():.3e}")


def psd_sqrt(m: np.ndarray) -> np.ndarray:
    """Symmetric square root of a PSD matrix with eigenvalue clamping.

    Handles singular covariances (e.g. Q = 0) where Cholesky would fail.
    """
    w, u = np.linalg.eigh(0.5 * (m + m.T))
    w = np.clip(w, 0.0, None)
    return (u * np.sqrt(w)) @ u.T


@dataclass(frozen=True)
class LinearSystem:
    """Validated plant (A, B, C) with noise covariances (Q, R).

    Construct via :func:`make_system`, which checks shapes, covariance
    signs, and detectability of (A, C).
    """

    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    Q: np.ndarray
    R: np.ndarray

    @property
    def n(self) -> int:
        return self.A.shape[0]

    @property
    def m(self) -> int:
        return self.B.shape[1]

    @property
    def p(self) -> int:
        return self.C.shape[0]


@dataclass(frozen=True)
class EigenPair:
    """Eigenvalue/eigenvector pair of the state matrix A.

    ``v`` has unit norm; for real eigenvalues it is real with a canonical
    sign (largest-magnitude entry positive).  ``unstable`` marks |lambda|>=1.
    """

    eigenvalue: complex
    v: np.ndarray
    unstable: bool

    @property
    def is_real(self) -> bool:
        return not np.iscomplexobj(self.v)


@dataclass(frozen=True)
class Trajectory:
    """Simulated run: states x[0..T], outputs y[0..T], inputs u[0..T-1].

    Regenerating with the same seed reproduces the arrays bit-exactly.
    """

    states: np.ndarray
    outputs: np.ndarray
    inputs: np.ndarray
    noise_seed: int
    horizon: int

    def __post_init__(self):
        T = self.horizon
        if self.states.shape[0] != T + 1 or self.outputs.shape[0] != T + 1:
            raise DimensionMismatch("states/outputs must have length T+1")
        if self.inputs.shape[0] != T:
            raise DimensionMismatch("inputs must have length T")


def make_system(A, B, C, Q=None, R=None, tol: float = DEFAULT_TOL) -> LinearSystem:
    """Validate and freeze a plant description.

    Q and R default to zero (noise-free plant).  R is allowed to be PSD
    rather than strictly PD so noise-free studies can use R = 0; operations
    that invert an innovation covariance check invertibility themselves.

    Raises DimensionMismatch, CovarianceNotPSD, or NotDetectable.
    """
    A = _as_matrix("A", A)
    B = _as_matrix("B", B)
    C = _as_matrix("C", C)
    n = A.shape[0]
    if A.shape != (n, n):
        raise DimensionMismatch(f"A must be square, got {A.shape}")
    if B.shape[0] != n:
        raise DimensionMismatch(f"B has {B.shape[0]} rows, expected {n}")
    if C.shape[1] != n:
        raise DimensionMismatch(f"C has {C.shape[1]} columns, expected {n}")
    p = C.shape[0]
    Q = np.zeros((n, n)) if Q is None else _as_matrix("Q", Q)
    R = np.zeros((p, p)) if R is None else _as_matrix("R", R)
    if Q.shape != (n, n):
        raise DimensionMismatch(f"Q must be {n}x{n}, got {Q.shape}")
    if R.shape != (p, p):
        raise DimensionMismatch(f"R must be {p}x{p}, got {R.shape}")
    _check_symmetric_psd("Q", Q, tol)
    _check_symmetric_psd("R", R, tol)

    # PBH test: rank [lambda*I - A; C] = n for every eigenvalue on or
    # outside the unit circle.
    eigs = np.linalg.eigvals(A)
    scale = max(1.0, float(np.abs(A).max()))
    for lam in eigs:
        if abs(lam) >= 1.0 - tol:
            m_test = np.vstack([lam * np.eye(n) - A, C.astype(complex)])
            if np.linalg.matrix_rank(m_test, tol=tol * scale) < n:
                raise NotDetectable(
                    f"unobservable mode at eigenvalue {lam:.6g} (|lambda| >= 1)"
                )

    for arr in (A, B, C, Q, R):
        arr.setflags(write=False)
    return LinearSystem(A=A, B=B, C=C, Q=Q, R=R)


def _canonical_real_eigvec(v: np.ndarray, tol: float) -> Optional[np.ndarray]:
    """Rotate the phase of an eigenvector; return the real representative or
    None if it is genuinely complex."""
    k = int(np.argmax(np.abs(v)))
    phase = v[k] / abs(v[k])
    v = v / phase
    if np.abs(v.imag).max() > tol * 10:
        return None
    vr = v.real
    vr = vr / np.linalg.norm(vr)
    k = int(np.argmax(np.abs(vr)))
    if vr[k] < 0:
        vr = -vr
    return vr


def unstable_eigenpairs(system: LinearSystem, tol: float = DEFAULT_TOL) -> list[EigenPair]:
    """All eigenpairs of A with |lambda| >= 1 - tol, unit-norm eigenvectors.

    Real eigenvalues get real eigenvectors with a canonical sign; complex
    ones are reported as complex pairs.  Sorted by decreasing |lambda|.
    """
    try:
        lams, vecs = np.linalg.eig(system.A)
    except np.linalg.LinAlgError as exc:  # pragma: no cover - pathological A
        raise EigensolverFailure(str(exc)) from exc
    pairs = []
    for i in range(len(lams)):
        lam = lams[i]
        if abs(lam) < 1.0 - tol:
            continue
        v = vecs[:, i]
        if abs(lam.imag) <= tol * max(1.0, abs(lam)):
            vr = _canonical_real_eigvec(v, tol)
            if vr is not None:
                pairs.append(EigenPair(float(lam.real), vr, abs(lam) >= 1.0))
                continue
        pairs.append(EigenPair(complex(lam), v / np.linalg.norm(v), abs(lam) >= 1.0))
    pairs.sort(key=lambda pr: (-abs(pr.eigenvalue), -np.real(pr.eigenvalue)))
    return pairs


def controllability_matrix(F, G) -> np.ndarray:
    """Columns [G, F G, ..., F^(n-1) G] for an n-state pair (F, G)."""
    F = _as_matrix("F", F)
    G = _as_matrix("G", G)
    n = F.shape[0]
    if F.shape != (n, n):
        raise DimensionMismatch(f"F must be square, got {F.shape}")
    if G.shape[0] != n:
        raise DimensionMismatch(f"G has {G.shape[0]} rows, expected {n}")
    blocks = [G]
    for _ in range(n - 1):
        blocks.append(F @ blocks[-1])
    return np.hstack(blocks)


def in_span(v, M, tol: float = DEFAULT_TOL) -> bool:
    """Least-squares membership test: min_w ||M w - v|| <= tol * ||v||."""
    v = np.asarray(v, dtype=float).reshape(-1)
    M = _as_matrix("M", M)
    nv = np.linalg.norm(v)
    if nv == 0.0:
        return True
    w, *_ = np.linalg.lstsq(M, v, rcond=None)
    resid = np.linalg.norm(M @ w - v)
    return bool(resid <= tol * nv)


@dataclass(frozen=True)
class AttackSequence:
    """Time-indexed injections: y_a[k] added to sensor outputs, u_a[k] to
    actuator inputs.  Rows are time steps; both arrays share the length.

    ``budget`` is the attacker's residue-change bound M; ``meta`` records
    how the sequence was generated (synthesis parameters or 'external').
    """

    y_a: np.ndarray
    u_a: np.ndarray
    budget: float
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.y_a.ndim != 2 or self.u_a.ndim != 2:
            raise DimensionMismatch("y_a and u_a must be 2-D (time, dim) arrays")
        if self.y_a.shape[0] != self.u_a.shape[0]:
            raise DimensionMismatch(
                f"y_a has {self.y_a.shape[0]} steps but u_a has {self.u_a.shape[0]}"
            )

    def __len__(self) -> int:
        return self.y_a.shape[0]

    @property
    def sensor_only(self) -> bool:
        return not np.any(self.u_a)

    def to_dict(self) -> dict:
        return {
            "y_a": self.y_a.tolist(),
            "u_a": self.u_a.tolist(),
            "budget": self.budget,
            "meta": dict(self.meta),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "AttackSequence":
        return cls(
            y_a=np.asarray(d["y_a"], dtype=float),
            u_a=np.asarray(d["u_a"], dtype=float),
            budget=float(d.get("budget", np.inf)),
            meta=dict(d.get("meta", {})),
        )


def zero_attack(p: int, m: int, steps: int, budget: float = np.inf) -> AttackSequence:
    return AttackSequence(
        y_a=np.zeros((steps, p)),
        u_a=np.zeros((steps, m)),
        budget=budget,
        meta={"kind": "zero"},
    )


def _draw_noise(system: LinearSystem, seed: int, T: int):
    """Noise arrays for one run: W is (T, n), V is (T+1, p).

    Drawing both blocks up front makes nominal/attacked runs with the same
    seed share identical realizations regardless of the control law.
    """
    rng = np.random.default_rng(seed)
    sq = psd_sqrt(system.Q)
    sr = psd_sqrt(system.R)
    W = rng.standard_normal((T, system.n)) @ sq.T
    V = rng.standard_normal((T + 1, system.p)) @ sr.T
    return W, V


def _resolve_control(control: ControlLaw, m: int, T: int):
    if control is None:
        zero = np.zeros(m)
        return lambda k, x_hat: zero
    if isinstance(control, np.ndarray):
        seq = np.atleast_2d(np.asarray(control, dtype=float))
        if seq.shape[0] < T or seq.shape[1] != m:
            raise DimensionMismatch(
                f"open-loop input must be at least ({T}, {m}), got {seq.shape}"
            )
        return lambda k, x_hat: seq[k]
    return lambda k, x_hat: np.asarray(control(k, x_hat), dtype=float).reshape(m)


def _simulate(
    system: LinearSystem,
    control: ControlLaw,
    seed: int,
    T: int,
    x0,
    design,
    attack: Optional[AttackSequence],
) -> Trajectory:
    if T < 1:
        raise DimensionMismatch("T must be >= 1")
    n, m, p = system.n, system.m, system.p
    if attack is not None and len(attack) < T + 1:
        raise HorizonTooShort(
            f"attack has {len(attack)} steps, horizon T={T} needs {T + 1}"
        )
    x = np.zeros(n) if x0 is None else np.asarray(x0, dtype=float).reshape(n)
    W, V = _draw_noise(system, seed, T)
    law = _resolve_control(control, m, T)

    use_filter = design is not None
    K = design.K if use_filter else None
    pred = np.zeros(n)  # C-predicted state C*(A x_hat + B u), starts at 0

    states = np.empty((T + 1, n))
    outputs = np.empty((T + 1, p))
    inputs = np.empty((T, m))
    states[0] = x
    x_hat = np.zeros(n)
    for k in range(T + 1):
        y = system.C @ states[k] + V[k]
        if attack is not None:
            y = y + attack.y_a[k]
        outputs[k] = y
        if use_filter:
            z = y - system.C @ pred
            x_hat = pred + K @ z
        if k == T:
            break
        u = law(k, x_hat)
        inputs[k] = u
        u_total = u if attack is None else u + attack.u_a[k]
        states[k + 1] = system.A @ states[k] + system.B @ u_total + W[k]
        if use_filter:
            pred = system.A @ x_hat + system.B @ u
    return Trajectory(
        states=states, outputs=outputs, inputs=inputs, noise_seed=seed, horizon=T
    )


def simulate(
    system: LinearSystem,
    control: ControlLaw = None,
    *,
    seed: int = 0,
    T: int,
    x0=None,
    design=None,
) -> Trajectory:
    """Run the nominal plant for T steps with seeded Gaussian noise.

    ``control`` may be None (zero input), an open-loop (T, m) array, or a
    map (k, x_hat) -> u; closed-loop laws need ``design`` (a KalmanDesign)
    so the estimate x_hat can be threaded through.
    """
    return _simulate(system, control, seed, T, x0, design, attack=None)


def simulate_attacked(
    system: LinearSystem,
    attack: AttackSequence,
    control: ControlLaw = None,
    *,
    seed: int = 0,
    T: int,
    x0=None,
    design=None,
) -> Trajectory:
    """Run the compromised plant: x' gets B(u + u_a) and y' gets + y_a.

    With the same seed as :func:`simulate` the noise realizations are
    identical, so differences between the paired runs are deterministic.
    """
    return _simulate(system, control, seed, T, x0, design, attack=attack)
