"""Sensor-output coding: feasibility checks, Givens rotations, and the
randomized rotation-composition generator.

Sensors transmit sigma @ y instead of y; the estimator multiplies by the
inverse before filtering, so an attacker who crafted injections for the
uncoded plant effectively injects sigma_inv @ y_a.  A coding matrix is
useful exactly when it moves every attack direction C v off itself, i.e.
sigma @ (C v) is never a positive multiple of C v for any unstable
eigenvector combination.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence, Union

import numpy as np

from .errors import (
    DimensionTooSmall,
    IndexOutOfRange,
    SingularCoding,
    ZeroSubspace,
    ZeroVector,
)
from .lti import LinearSystem

DEFAULT_TOL = 1e-8

# Rotation angles are drawn from [THETA_MIN, pi/2]; the exclusion margin
# near zero keeps randomly generated codes away from the identity.
THETA_MIN = 1e-3


@dataclass(frozen=True)
class GivensRotation:
    """Planar rotation acting on coordinates (i, j), 0-based, with angle
    theta in (0, pi/2]."""

    i: int
    j: int
    theta: float

    def __post_init__(self):
        if self.i == self.j:
            raise IndexOutOfRange("rotation plane needs two distinct indices")
        if not (0.0 < self.theta <= math.pi / 2):
            raise ValueError(f"theta must lie in (0, pi/2], got {self.theta}")

    def matrix(self, p: int) -> np.ndarray:
        return givens_matrix(self.i, self.j, self.theta, p)


def givens_matrix(i: int, j: int, theta: float, p: int) -> np.ndarray:
    """p x p identity with the (i, j) plane rotated by theta:
    rows/columns i and j carry cos(theta) on the diagonal, -sin(theta) at
    (i, j) and +sin(theta) at (j, i)."""
    if not (0 <= i < p and 0 <= j < p):
        raise IndexOutOfRange(f"indices ({i}, {j}) out of range for p={p}")
    if i == j:
        raise IndexOutOfRange("rotation plane needs two distinct indices")
    g = np.eye(p)
    c, s = math.cos(theta), math.sin(theta)
    g[i, i] = c
    g[j, j] = c
    g[i, j] = -s
    g[j, i] = s
    return g


@dataclass(frozen=True)
class CodingMatrix:
    """Invertible coding matrix with its cached inverse and provenance.

    ``provenance`` records how the matrix was built: {"kind": "manual"} or
    {"kind": "givens", "rotations": [(i, j, theta), ...], "scale": s,
    "seed": n}.  ``created_at`` stamps the step index for time-varying
    schedules.
    """

    sigma: np.ndarray
    sigma_inv: np.ndarray
    provenance: dict = field(default_factory=lambda: {"kind": "manual"})
    created_at: int = 0

    @property
    def p(self) -> int:
        return self.sigma.shape[0]

    def to_dict(self) -> dict:
        return {
            "sigma": self.sigma.tolist(),
            "provenance": dict(self.provenance),
            "created_at": self.created_at,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "CodingMatrix":
        return coding_matrix(
            np.asarray(d["sigma"], dtype=float),
            provenance=dict(d.get("provenance", {"kind": "manual"})),
            created_at=int(d.get("created_at", 0)),
        )


def coding_matrix(sigma, provenance=None, created_at: int = 0) -> CodingMatrix:
    """Validate invertibility and cache the inverse.

    Raises SingularCoding when sigma cannot be inverted accurately
    (||sigma @ sigma_inv - I||_F must stay within 1e-10 of zero, scaled).
    """
    sigma = np.array(sigma, dtype=float)
    if sigma.ndim != 2 or sigma.shape[0] != sigma.shape[1]:
        raise SingularCoding(f"coding matrix must be square, got {sigma.shape}")
    p = sigma.shape[0]
    try:
        sigma_inv = np.linalg.inv(sigma)
    except np.linalg.LinAlgError as exc:
        raise SingularCoding(str(exc)) from exc
    resid = np.linalg.norm(sigma @ sigma_inv - np.eye(p))
    if not np.isfinite(resid) or resid > 1e-10 * max(1.0, np.linalg.norm(sigma)):
        raise SingularCoding(
            f"inverse residual {resid:.3e}; matrix is numerically singular"
        )
    sigma.setflags(write=False)
    sigma_inv.setflags(write=False)
    return CodingMatrix(
        sigma=sigma,
        sigma_inv=sigma_inv,
        provenance=provenance or {"kind": "manual"},
        created_at=created_at,
    )


def _sigma_of(coding) -> np.ndarray:
    if isinstance(coding, CodingMatrix):
        return coding.sigma
    return np.asarray(coding, dtype=float)


def encode(coding, y) -> np.ndarray:
    """Channel-side transform: sigma @ y."""
    return _sigma_of(coding) @ np.asarray(y, dtype=float)


def decode(coding, Y) -> np.ndarray:
    """Estimator-side transform: sigma_inv @ Y.  Under an injection y_a the
    decoded stream equals y + sigma_inv @ y_a."""
    if isinstance(coding, CodingMatrix):
        return coding.sigma_inv @ np.asarray(Y, dtype=float)
    return np.linalg.solve(_sigma_of(coding), np.asarray(Y, dtype=float))


def check_feasible_single(coding, C, v, tol: float = DEFAULT_TOL) -> bool:
    """True iff sigma rotates the attack image C v off its own direction:
    cos(angle(sigma C v, C v)) < 1 - tol."""
    sigma = _sigma_of(coding)
    C = np.asarray(C, dtype=float)
    v = np.asarray(v, dtype=float).reshape(-1)
    w = C @ v
    nw = np.linalg.norm(w)
    if nw <= tol * max(1.0, np.linalg.norm(v)) * max(1.0, np.linalg.norm(C)):
        raise ZeroVector("C v = 0: the attack direction is invisible in the output")
    sw = sigma @ w
    nsw = np.linalg.norm(sw)
    if nsw == 0.0:
        raise SingularCoding("sigma maps the attack direction to zero")
    cosine = float(w @ sw) / float(nw * nsw)
    return bool(cosine < 1.0 - tol)


def _orth_basis(vectors: Sequence[np.ndarray], tol: float) -> np.ndarray:
    stack = np.column_stack([np.asarray(v, dtype=float).reshape(-1) for v in vectors])
    u, s, _ = np.linalg.svd(stack, full_matrices=False)
    if s.size == 0 or s[0] == 0.0:
        return np.zeros((stack.shape[0], 0))
    rank = int(np.sum(s > tol * s[0]))
    return u[:, :rank]


def check_feasible_multi(coding, C, eigvecs: Iterable, tol: float = DEFAULT_TOL) -> bool:
    """Feasibility against every linear combination of the given
    eigenvectors: no nonzero w in W = span(C v_1, ..., C v_u) may satisfy
    sigma w = mu w with mu > 0.

    Implemented exactly: for each real positive eigenvalue mu of sigma,
    the eigenspace is intersected with W via the rank of stacked
    orthonormal bases; a nontrivial intersection means infeasible.
    """
    sigma = _sigma_of(coding)
    C = np.asarray(C, dtype=float)
    images = [C @ np.asarray(v, dtype=float).reshape(-1) for v in eigvecs]
    if not images:
        raise ZeroSubspace("no eigenvectors supplied")
    scale = max(max(np.linalg.norm(w) for w in images), 0.0)
    if scale <= tol * max(1.0, np.linalg.norm(C)):
        raise ZeroSubspace("all attack images C v_i are zero")
    w_basis = _orth_basis(images, tol)
    if w_basis.shape[1] == 0:
        raise ZeroSubspace("attack images span nothing")

    lams = np.linalg.eigvals(sigma)
    sig_scale = max(1.0, float(np.abs(lams).max()))
    for lam in lams:
        if abs(lam.imag) > tol * sig_scale or lam.real <= tol * sig_scale:
            continue
        mu = lam.real
        # eigenspace basis: right-singular vectors of (sigma - mu I) with
        # vanishing singular value
        _, s, vt = np.linalg.svd(sigma - mu * np.eye(sigma.shape[0]))
        null_dim = int(np.sum(s <= tol * max(1.0, s[0])))
        if null_dim == 0:
            continue
        e_basis = vt[-null_dim:].T
        joint = np.column_stack([e_basis, w_basis])
        rank = np.linalg.matrix_rank(joint, tol=tol)
        if rank < e_basis.shape[1] + w_basis.shape[1]:
            return False
    return True


def check_feasible_combined(coding, tol: float = DEFAULT_TOL) -> bool:
    """Condition for the sensor-plus-actuator case: 1 must not be an
    eigenvalue of sigma, so (sigma_inv - I) y != 0 for every y != 0."""
    sigma = _sigma_of(coding)
    lams = np.linalg.eigvals(sigma)
    return bool(np.min(np.abs(lams - 1.0)) > tol)


def generate_coding_matrix(
    system: LinearSystem,
    eigvecs: Iterable,
    rng_seed: int = 0,
    scale: float = 1.0,
    theta_min: float = THETA_MIN,
    max_attempts: int = 32,
) -> CodingMatrix:
    """Randomized feasible code as a product of Givens rotations.

    Marks the output coordinates touched by span(C v_1, ..., C v_u), then
    draws rotation planes until every marked coordinate has been rotated:
    two marked coordinates at a time while at least two remain, otherwise
    the last one against an arbitrary other coordinate.  Angles are
    uniform on [theta_min, pi/2].  Deterministic for a fixed seed; the
    result is verified with check_feasible_multi and redrawn from the same
    stream in the (never observed) event of a numerically marginal draw.
    """
    p = system.p
    if p < 2:
        raise DimensionTooSmall("rotation-based coding needs p >= 2")
    eigvecs = list(eigvecs)
    images = [system.C @ np.asarray(v, dtype=float).reshape(-1) for v in eigvecs]
    if not images:
        raise ZeroSubspace("no eigenvectors supplied")
    basis = _orth_basis(images, DEFAULT_TOL)
    if basis.shape[1] == 0:
        raise ZeroSubspace("all attack images C v_i are zero")
    support = sorted(int(j) for j in np.nonzero(np.abs(basis).max(axis=1) > 1e-10)[0])
    if not support:
        raise ZeroSubspace("attack subspace has empty coordinate support")

    rng = np.random.default_rng(rng_seed)
    for _ in range(max_attempts):
        remaining = list(support)
        rotations: list[GivensRotation] = []
        while remaining:
            theta = float(rng.uniform(theta_min, math.pi / 2))
            if len(remaining) >= 2:
                picks = rng.choice(len(remaining), size=2, replace=False)
                i, j = remaining[picks[0]], remaining[picks[1]]
                remaining = [r for r in remaining if r not in (i, j)]
            else:
                i = remaining.pop()
                others = [c for c in range(p) if c != i]
                j = int(others[rng.integers(len(others))])
            rotations.append(GivensRotation(i, j, theta))
        sigma = np.eye(p)
        for rot in rotations:
            sigma = sigma @ rot.matrix(p)
        sigma = scale * sigma
        if check_feasible_multi(sigma, system.C, eigvecs):
            return coding_matrix(
                sigma,
                provenance={
                    "kind": "givens",
                    "rotations": [(r.i, r.j, r.theta) for r in rotations],
                    "scale": scale,
                    "seed": rng_seed,
                },
            )
    raise SingularCoding(
        f"no feasible rotation product found in {max_attempts} attempts"
    )
