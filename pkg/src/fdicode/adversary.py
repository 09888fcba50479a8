"""The attacker's side: eavesdropped coded traffic, the bilinear
least-squares problem in (coding matrix, initial state), alternating
minimization, the streaming estimator, and attack adaptation.

From recorded pairs (Y[k], u[k]) with Y[k] = sigma @ y[k], the noise-free
model stacks to

    sigma_row_i @ (T_k x0 + S_k) = d[p*k + i],
    T_0 = C,  T_k = C A^k,  S_0 = 0,  S_k = C sum_j A^(k-1-j) B u[j],

which is bilinear in (sigma, x0).  With process noise the equations only
hold in expectation; the estimator minimizes the summed squared residual.
Bilinear problems of this kind have families of near-zero-cost solutions
(with zero input the cost is exactly invariant under sigma -> a sigma,
x0 -> x0 / a), so the minimizer is not unique and noise keeps it away
from the true matrix; both effects are intended subjects of study here,
not defects.
"""

from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass, field, replace
from typing import Iterable, Iterator, Optional, Sequence, Tuple

import numpy as np

from .errors import DegenerateLSWarning, DimensionMismatch, Exhausted
from .lti import AttackSequence


@dataclass(frozen=True)
class MeasurementLog:
    """Eavesdropped coded outputs and plant inputs, append-only.

    ``Y`` is (N, p) and ``u`` is (N, m); row k holds the step-k pair.
    """

    Y: np.ndarray
    u: np.ndarray

    @property
    def N(self) -> int:
        return self.Y.shape[0]

    @property
    def p(self) -> int:
        return self.Y.shape[1]

    @property
    def m(self) -> int:
        return self.u.shape[1]


def empty_log(p: int, m: int) -> MeasurementLog:
    return MeasurementLog(Y=np.zeros((0, p)), u=np.zeros((0, m)))


def record(log: MeasurementLog, Y, u) -> MeasurementLog:
    """Append one observation pair, returning a new log."""
    Y = np.asarray(Y, dtype=float).reshape(-1)
    u = np.asarray(u, dtype=float).reshape(-1)
    if Y.size != log.p or u.size != log.m:
        raise DimensionMismatch(
            f"expected p={log.p}, m={log.m}; got {Y.size}, {u.size}"
        )
    return MeasurementLog(
        Y=np.vstack([log.Y, Y[None, :]]), u=np.vstack([log.u, u[None, :]])
    )


def log_to_csv(log: MeasurementLog, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(
            ["k"]
            + [f"Y{i + 1}" for i in range(log.p)]
            + [f"u{j + 1}" for j in range(log.m)]
        )
        for k in range(log.N):
            w.writerow(
                [k]
                + [f"{x:.12e}" for x in log.Y[k]]
                + [f"{x:.12e}" for x in log.u[k]]
            )


def log_from_csv(path, p: int, m: int) -> MeasurementLog:
    rows = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if len(header) != 1 + p + m:
            raise DimensionMismatch(
                f"CSV has {len(header)} columns, expected {1 + p + m}"
            )
        for row in reader:
            rows.append([float(x) for x in row[1 : 1 + p + m]])
    data = np.asarray(rows, dtype=float).reshape(len(rows), p + m)
    return MeasurementLog(Y=data[:, :p], u=data[:, p:])


@dataclass(frozen=True)
class BilinearProblem:
    """Stacked coefficients of the estimation equations for one log.

    ``T`` and ``S`` have one entry per recorded step; ``d`` is the
    row-major vectorization of the observations (length p * N).
    """

    T: Tuple[np.ndarray, ...]
    S: Tuple[np.ndarray, ...]
    d: np.ndarray
    n: int
    p: int

    @property
    def N(self) -> int:
        return len(self.T)

    @property
    def observations(self) -> np.ndarray:
        return self.d.reshape(self.N, self.p)


def build_bilinear(A, B, C, log: MeasurementLog) -> BilinearProblem:
    """Coefficient matrices T_k, input terms S_k, and the stacked target d
    for every recorded observation."""
    A = np.asarray(A, dtype=float)
    B = np.asarray(B, dtype=float)
    C = np.asarray(C, dtype=float)
    n = A.shape[0]
    if log.N < 1:
        raise DimensionMismatch("log must contain at least one observation")
    T_list = [C]
    S_list = [np.zeros(C.shape[0])]
    x_u = np.zeros(n)
    for k in range(1, log.N):
        x_u = A @ x_u + B @ log.u[k - 1]
        T_list.append(T_list[-1] @ A)
        S_list.append(C @ x_u)
    return BilinearProblem(
        T=tuple(T_list),
        S=tuple(S_list),
        d=log.Y.reshape(-1).copy(),
        n=n,
        p=C.shape[0],
    )


def bilinear_cost(problem: BilinearProblem, sigma, x0) -> float:
    """Summed squared residual of (sigma, x0) over all equations."""
    sigma = np.asarray(sigma, dtype=float)
    x0 = np.asarray(x0, dtype=float).reshape(-1)
    D = problem.observations
    total = 0.0
    for k in range(problem.N):
        r = sigma @ (problem.T[k] @ x0 + problem.S[k]) - D[k]
        total += float(r @ r)
    return total


@dataclass(frozen=True)
class EstimateResult:
    """Outcome of one estimation run."""

    sigma_hat: np.ndarray
    x0_hat: np.ndarray
    cost: float
    full_rank: bool
    iterations: int
    steps: int = 0
    cost_history: tuple = field(default=(), repr=False)


def _lstsq(a: np.ndarray, b: np.ndarray, what: str):
    sol, _, rank, _ = np.linalg.lstsq(a, b, rcond=None)
    # underdetermined solves take the min-norm solution silently (normal for
    # short logs); a rank-deficient overdetermined system is worth flagging
    if rank < a.shape[1] <= a.shape[0]:
        warnings.warn(
            f"rank-deficient {what} solve; using the minimum-norm solution",
            DegenerateLSWarning,
            stacklevel=3,
        )
    return sol


def solve_bilinear_als(
    problem: BilinearProblem,
    init_sigma: Optional[np.ndarray] = None,
    init_x0: Optional[np.ndarray] = None,
    tol: float = 1e-12,
    max_iter: int = 200,
    rank_tol: float = 1e-8,
    fix_x0: Optional[np.ndarray] = None,
    rebalance: bool = True,
    nstarts: int = 1,
    start_seed: int = 0,
) -> EstimateResult:
    """Alternating least squares on (sigma, x0).

    Each sweep solves the linear x0 subproblem for fixed sigma, then the
    (shared-design) row subproblems for fixed x0; both use minimum-norm
    least squares, so the cost never increases.  When ``rebalance`` is on
    and the data leaves the scale ray sigma -> a sigma, x0 -> x0/a flat,
    the iterate is renormalized to ||sigma||_F = sqrt(p); the gauge move
    is applied only when it does not increase the cost.

    ``fix_x0`` pins the initial state, reducing the problem to one linear
    solve.  ``nstarts`` > 1 adds seeded perturbed restarts and returns the
    lowest-cost result, exposing the multiple-solution behaviour.
    """
    n, p = problem.n, problem.p
    base_sigma = np.eye(p) if init_sigma is None else np.array(init_sigma, dtype=float)
    base_x0 = np.zeros(n) if init_x0 is None else np.array(init_x0, dtype=float)
    # With a zero input sequence the cost is exactly invariant along the
    # scale ray, so the gauge move can skip re-evaluating it.
    gauge_exact = not any(np.any(Sk) for Sk in problem.S)

    def run(sigma, x0) -> EstimateResult:
        D = problem.observations
        history = []
        prev = np.inf
        iters = 0
        x0_cur = fix_x0.copy() if fix_x0 is not None else x0
        sigma_cur = sigma
        for it in range(max_iter):
            iters = it + 1
            if fix_x0 is None:
                a = np.vstack([sigma_cur @ Tk for Tk in problem.T])
                b = np.concatenate(
                    [D[k] - sigma_cur @ problem.S[k] for k in range(problem.N)]
                )
                x0_cur = _lstsq(a, b, "initial-state")
            design = np.vstack(
                [(problem.T[k] @ x0_cur + problem.S[k])[None, :] for k in range(problem.N)]
            )
            sigma_cur = _lstsq(design, D, "coding-row").T
            cost = float(np.sum((design @ sigma_cur.T - D) ** 2))
            if rebalance and gauge_exact and fix_x0 is None:
                # the ray (a sigma, x0/a) is exactly cost-flat here, so the
                # gauge move costs nothing and pins the otherwise free scale
                ns = np.linalg.norm(sigma_cur)
                if ns > 0:
                    a_gauge = np.sqrt(p) / ns
                    sigma_cur = a_gauge * sigma_cur
                    x0_cur = x0_cur / a_gauge
            history.append(cost)
            if prev - cost < tol * (1.0 + cost):
                break
            prev = cost
        smin = np.linalg.svd(sigma_cur, compute_uv=False)[-1]
        return EstimateResult(
            sigma_hat=sigma_cur,
            x0_hat=x0_cur,
            cost=history[-1],
            full_rank=bool(smin > rank_tol),
            iterations=iters,
            cost_history=tuple(history),
        )

    best = run(base_sigma, base_x0.copy())
    if nstarts > 1:
        rng = np.random.default_rng(start_seed)
        for _ in range(nstarts - 1):
            sigma0 = base_sigma + 0.5 * rng.standard_normal((p, p))
            x00 = base_x0 + 0.5 * rng.standard_normal(n)
            cand = run(sigma0, x00)
            if cand.cost < best.cost:
                best = cand
    return best


def estimate_coding_matrix(
    A,
    B,
    C,
    stream: Iterable,
    epsilon: float,
    rank_tol: float = 1e-8,
    max_steps: int = 1000,
    tol: float = 1e-12,
    max_iter: int = 200,
) -> EstimateResult:
    """Streaming estimation: read one (Y, u) observation at a time, rebuild
    the bilinear problem, and re-solve warm-started from the previous
    estimate (initially the identity).

    Stops once a full-rank, non-identity solution reaches cost <= epsilon;
    raises Exhausted (carrying the last result) when the stream ends or
    ``max_steps`` observations were consumed first.
    """
    A = np.asarray(A, dtype=float)
    B = np.asarray(B, dtype=float)
    C = np.asarray(C, dtype=float)
    p, n = C.shape
    m = B.shape[1]
    log = empty_log(p, m)
    sigma = np.eye(p)
    x0 = np.zeros(n)
    identity = np.eye(p)
    accepted = False
    last: Optional[EstimateResult] = None
    recent: Optional[EstimateResult] = None
    it = iter(stream)
    steps = 0
    while steps < max_steps:
        try:
            Y_k, u_k = next(it)
        except StopIteration:
            break
        log = record(log, Y_k, u_k)
        steps += 1
        problem = build_bilinear(A, B, C, log)
        res = solve_bilinear_als(
            problem,
            init_sigma=sigma,
            init_x0=x0,
            tol=tol,
            max_iter=max_iter,
            rank_tol=rank_tol,
        )
        # the next solve warm-starts from the latest iterate either way;
        # only full-rank solutions are accepted as the running estimate
        x0 = res.x0_hat
        sigma = res.sigma_hat
        recent = replace(res, steps=steps)
        if res.full_rank:
            last = recent
            accepted = not np.allclose(sigma, identity, atol=1e-12)
        if accepted and last is not None and last.cost <= epsilon:
            return last
    raise Exhausted(
        f"no full-rank estimate reached cost <= {epsilon:g} "
        f"within {steps} observations",
        result=last if last is not None else recent,
    )


def adapt_attack(sigma_hat, base: AttackSequence) -> AttackSequence:
    """Re-target a sensor-only injection through an estimated code:
    y_a -> sigma_hat @ y_a."""
    if not base.sensor_only:
        raise DimensionMismatch("adaptation applies to sensor-only attacks")
    sigma_hat = np.asarray(sigma_hat, dtype=float)
    meta = dict(base.meta)
    meta["adapted_with"] = sigma_hat.tolist()
    return AttackSequence(
        y_a=base.y_a @ sigma_hat.T,
        u_a=base.u_a.copy(),
        budget=base.budget,
        meta=meta,
    )


def coded_stream(Ys: Sequence, us: Sequence) -> Iterator:
    """Pair two sequences into the (Y, u) stream the estimator consumes."""
    return zip(Ys, us)
