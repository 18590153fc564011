"""Calibration weights by maximum entropy on the mean.

For priors ``nu_i`` with log-Laplace transforms ``Lambda_i`` the calibrated
weights are ``w_i = d_i Lambda_i'(lambda' d_i x_i)``, where ``lambda``
solves the k-dimensional root equation

    N^-1 sum_s d_i Lambda_i'(lambda' d_i x_i) x_i = t_x.

The root is the minimiser of the strictly convex dual function
``sum_s Lambda_i(lambda' d_i x_i) - N lambda' t_x``, which :func:`solve_dual`
minimises by damped Newton. The same weights minimise the primal
dissimilarity ``sum_s Lambda_i*(pi_i w_i)`` under the calibration
constraint; :func:`primal_objective` evaluates it for verification.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.optimize import linprog

from .design import Sample
from .errors import InfeasibleError, SingularityError, SolverError
from .priors import PriorBank, PriorFamily, priors_for

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class SolverOptions:
    tol: float | None = None
    max_iter: int = 100
    ridge: float = 1e-12
    armijo: float = 1e-4
    boundary_fraction: float = 0.01
    max_backtracks: int = 60


@dataclass(frozen=True)
class CalibrationProblem:
    """Sample, auxiliary matrix (n x k), target means t_x and priors.

    ``priors`` may be a :class:`PriorFamily`, a list with one family per
    unit, or the name of a built-in family (Gaussian variance ``pi_i q_i``).
    """

    sample: Sample
    aux: np.ndarray
    target: np.ndarray
    priors: PriorFamily | Sequence[PriorFamily] | str = "gaussian"
    q: np.ndarray | None = None

    def __post_init__(self):
        aux = np.asarray(self.aux, dtype=float)
        if aux.ndim == 1:
            aux = aux[:, None]
        if aux.shape[0] != self.sample.n:
            raise ValueError(f"aux has {aux.shape[0]} rows for a sample of {self.sample.n}")
        target = np.atleast_1d(np.asarray(self.target, dtype=float))
        if target.shape != (aux.shape[1],):
            raise ValueError(
                f"target has length {target.size} but aux has {aux.shape[1]} columns"
            )
        if not np.all(np.isfinite(target)) or not np.all(np.isfinite(aux)):
            raise ValueError("aux and target must be finite")
        q = self.q
        if q is not None:
            q = np.asarray(q, dtype=float).ravel()
            if q.shape[0] != aux.shape[0] or np.any(q <= 0):
                raise ValueError("q must be positive with one value per sampled unit")
        priors = self.priors
        if isinstance(priors, str):
            priors = priors_for(priors, self.sample.pi, q)
        object.__setattr__(self, "aux", aux)
        object.__setattr__(self, "target", target)
        object.__setattr__(self, "q", q)
        object.__setattr__(self, "priors", priors)

    @property
    def k(self) -> int:
        return self.aux.shape[1]

    @property
    def full_rank(self) -> bool:
        return np.linalg.matrix_rank(self.sample.d[:, None] * self.aux) == self.k


@dataclass(frozen=True)
class CalibrationSolution:
    lambda_hat: np.ndarray
    weights: np.ndarray
    iterations: int
    grad_norm: float
    dissimilarity_value: float
    estimate: float | None = None
    negative_weights: bool = False
    trace: list = field(default_factory=list, repr=False)

    def diagnostics(self) -> dict:
        return {
            "lambda": [float(v) for v in self.lambda_hat],
            "iterations": self.iterations,
            "grad_norm": self.grad_norm,
            "dissimilarity": self.dissimilarity_value,
            "negative_weights": self.negative_weights,
        }


@dataclass(frozen=True)
class FeasibilityReport:
    feasible: bool
    full_rank: bool
    method: str
    margin: float
    message: str

    def to_dict(self) -> dict:
        return {
            "feasible": self.feasible,
            "full_rank": self.full_rank,
            "method": self.method,
            "margin": self.margin,
            "message": self.message,
        }


def _warn_degenerate_columns(aux: np.ndarray) -> None:
    for j in range(aux.shape[1]):
        col = aux[:, j]
        if col.size > 1 and np.ptp(col) == 0 and not np.all(col == 1.0):
            warnings.warn(
                f"aux column {j} is constant on the sample but is not an intercept",
                RuntimeWarning,
                stacklevel=3,
            )


def _cholesky_solve(H: np.ndarray, g: np.ndarray, ridge: float) -> np.ndarray:
    k = H.shape[0]
    if not np.all(np.isfinite(H)):
        raise SingularityError("Hessian has non-finite entries")
    scale = np.trace(H) / k
    if not scale > 0:
        raise SingularityError("Hessian is zero")
    bump = 0.0
    for attempt in range(12):
        try:
            L = np.linalg.cholesky(H + bump * scale * np.eye(k))
        except np.linalg.LinAlgError:
            bump = ridge if attempt == 0 else bump * 10.0
            continue
        z = np.linalg.solve(L, g)
        return np.linalg.solve(L.T, z)
    raise SingularityError(f"Hessian stays singular after ridge {bump:g}")


def solve_dual(problem: CalibrationProblem, options: SolverOptions | None = None) -> CalibrationSolution:
    """Calibrated weights via damped Newton on the dual, starting from lambda = 0."""
    opts = options or SolverOptions()
    sample, aux, t = problem.sample, problem.aux, problem.target
    d, N = sample.d, sample.N
    bank = PriorBank(problem.priors, sample.n)
    a = d[:, None] * aux
    tol = opts.tol if opts.tol is not None else 1e-10 * max(1.0, float(np.max(np.abs(t))))
    _warn_degenerate_columns(aux)
    upper = bank.domain_upper
    bounded = np.isfinite(upper)

    def objective(lam):
        s = a @ lam
        if np.any(s[bounded] >= upper[bounded]):
            return np.inf
        with np.errstate(over="ignore", invalid="ignore"):
            val = float(np.sum(bank.log_laplace(s)) - N * lam @ t)
        return val if np.isfinite(val) else np.inf

    def residual(lam):
        with np.errstate(over="ignore", invalid="ignore"):
            w = d * bank.dlog_laplace(a @ lam)
        return w @ aux / N - t

    lam = np.zeros(problem.k)
    g_val = objective(lam)
    trace = []
    converged = False
    failure = None
    for it in range(opts.max_iter + 1):
        s = a @ lam
        r = residual(lam)
        rnorm = float(np.max(np.abs(r)))
        trace.append({"iteration": it, "grad_norm": rnorm, "objective": g_val})
        if rnorm <= tol:
            converged = True
            break
        if it == opts.max_iter:
            failure = f"no convergence within {opts.max_iter} iterations"
            break
        grad = N * r
        H = (a * bank.d2log_laplace(s)[:, None]).T @ a
        try:
            step = -_cholesky_solve(H, grad, opts.ridge)
        except SingularityError:
            # curvature vanishing along the path usually means lambda is
            # running off to infinity towards an unreachable target
            report = check_feasibility(problem)
            if not report.feasible:
                raise InfeasibleError(
                    f"calibration target is infeasible for these priors: {report.message}",
                    report=report,
                    trace=trace,
                ) from None
            raise
        alpha = 1.0
        if bounded.any():
            ds = a @ step
            mask = bounded & (ds > 0)
            if mask.any():
                room = (1.0 - opts.boundary_fraction) * (upper[mask] - s[mask]) / ds[mask]
                alpha = min(1.0, float(room.min()))
        slope = float(grad @ step)
        accepted = None
        # near the optimum changes in G fall below its rounding error
        noise = 64 * np.finfo(float).eps * max(1.0, abs(g_val))
        for _ in range(opts.max_backtracks):
            cand = lam + alpha * step
            g_cand = objective(cand)
            if np.isfinite(g_cand):
                if g_cand <= g_val + opts.armijo * alpha * slope:
                    accepted = "armijo" if g_val - g_cand > noise else "noise"
                    break
                if g_cand <= g_val + noise and np.max(np.abs(residual(cand))) < rnorm:
                    accepted = "noise"
                    break
            alpha *= 0.5
        if not accepted:
            failure = f"line search failed at iteration {it} (residual {rnorm:.3e})"
            break
        trace[-1]["step"] = alpha
        trace[-1]["accept"] = accepted
        lam, g_val = cand, g_cand

    if not converged:
        report = check_feasibility(problem)
        if not report.feasible:
            raise InfeasibleError(
                f"calibration target is infeasible for these priors: {report.message}",
                report=report,
                trace=trace,
            )
        raise SolverError(failure or "solver failed", trace=trace)

    s = a @ lam
    dl = bank.dlog_laplace(s)
    # a root found with weights pressed against a support bound means the
    # target sits on the boundary (lambda drifting to infinity)
    near_lo = np.isfinite(bank.support_lo) & (dl - bank.support_lo <= 1e-8)
    near_hi = np.isfinite(bank.support_hi) & (bank.support_hi - dl <= 1e-8)
    if near_lo.any() or near_hi.any():
        report = check_feasibility(problem)
        if not report.feasible:
            raise InfeasibleError(
                f"calibration target is infeasible for these priors: {report.message}",
                report=report,
                trace=trace,
            )
    w = d * dl
    # Fenchel equality: Lambda*(Lambda'(s)) = s Lambda'(s) - Lambda(s)
    dissim = float(np.sum(s * dl - bank.log_laplace(s)))
    estimate = None if sample.y_s is None else float(w @ sample.y_s / N)
    negative = bool(np.any(w < 0))
    if negative:
        logger.info("calibrated weights include negative values")
    return CalibrationSolution(
        lambda_hat=lam,
        weights=w,
        iterations=len(trace) - 1,
        grad_norm=trace[-1]["grad_norm"],
        dissimilarity_value=dissim,
        estimate=estimate,
        negative_weights=negative,
        trace=trace,
    )


def constraint_jacobian(problem: CalibrationProblem, lam) -> np.ndarray:
    """d residual / d lambda = N^-1 sum_s d_i^2 Lambda_i''(lambda' d_i x_i) x_i x_i'."""
    sample = problem.sample
    bank = PriorBank(problem.priors, sample.n)
    a = sample.d[:, None] * problem.aux
    h = bank.d2log_laplace(a @ np.asarray(lam, dtype=float))
    return (a * h[:, None]).T @ a / sample.N


def constraint_residual(problem: CalibrationProblem, lam) -> np.ndarray:
    sample = problem.sample
    bank = PriorBank(problem.priors, sample.n)
    a = sample.d[:, None] * problem.aux
    w = sample.d * bank.dlog_laplace(a @ np.asarray(lam, dtype=float))
    return w @ problem.aux / sample.N - problem.target


def primal_objective(problem: CalibrationProblem, w) -> float:
    """``sum_s Lambda_i*(pi_i w_i)``; raises DomainError outside the Cramer domains."""
    w = np.asarray(w, dtype=float)
    if w.shape != (problem.sample.n,):
        raise ValueError("one weight per sampled unit is required")
    bank = PriorBank(problem.priors, problem.sample.n)
    return float(np.sum(bank.cramer(problem.sample.pi * w)))


def greg_closed_form(sample: Sample, aux, target, y=None, q=None) -> tuple[float, np.ndarray]:
    """Generalised regression estimate and its coefficient vector B_hat.

    ``B_hat = [sum q_i d_i x_i x_i']^-1 sum q_i d_i y_i x_i`` and the estimate
    is ``HT(y) + (t_x - HT(x))' B_hat``.
    """
    aux = np.asarray(aux, dtype=float)
    if aux.ndim == 1:
        aux = aux[:, None]
    y = sample.y_s if y is None else np.asarray(y, dtype=float)
    if y is None:
        raise ValueError("responses are required")
    target = np.atleast_1d(np.asarray(target, dtype=float))
    if target.size != aux.shape[1]:
        raise ValueError("target length does not match aux columns")
    qd = sample.d if q is None else sample.d * np.asarray(q, dtype=float)
    gram = (aux * qd[:, None]).T @ aux
    B = _solve_checked(gram, aux.T @ (qd * y), "sum q d x x'")
    estimate = sample.ht_mean(y) + (target - sample.ht_mean(aux)) @ B
    return float(estimate), B


def _solve_checked(A: np.ndarray, b: np.ndarray, what: str) -> np.ndarray:
    if np.linalg.cond(A) > 1e14:
        raise SingularityError(f"{what} is singular or ill-conditioned")
    try:
        return np.linalg.solve(A, b)
    except np.linalg.LinAlgError as exc:
        raise SingularityError(f"{what} is singular") from exc


def check_feasibility(problem: CalibrationProblem, margin_tol: float = 1e-9) -> FeasibilityReport:
    """Is there ``p`` in the product of support interiors with
    ``N^-1 sum_s d_i p_i x_i = t_x``?

    Unbounded supports reduce to a range test on the auxiliary matrix.
    Otherwise an LP maximises the distance ``m`` of ``p`` to the support
    bounds; the target is interior-feasible iff ``m > 0``.
    """
    sample, aux, t = problem.sample, problem.aux, problem.target
    bank = PriorBank(problem.priors, sample.n)
    A = (sample.d[:, None] * aux).T / sample.N  # k x n
    full_rank = bool(np.linalg.matrix_rank(A) == problem.k)
    lo, hi = bank.support_lo, bank.support_hi
    if not (np.isfinite(lo).any() or np.isfinite(hi).any()):
        if full_rank:
            return FeasibilityReport(True, True, "rank", np.inf, "full-rank aux, unbounded supports")
        p, *_ = np.linalg.lstsq(A, t, rcond=None)
        gap = float(np.max(np.abs(A @ p - t)))
        ok = gap <= 1e-10 * max(1.0, float(np.max(np.abs(t))))
        msg = "target in the range of a rank-deficient aux" if ok else "target outside range of aux"
        return FeasibilityReport(ok, False, "range", np.inf if ok else -gap, msg)

    n = sample.n
    scale = np.maximum(np.max(np.abs(A), axis=1), 1e-300)
    A_eq = np.hstack([A / scale[:, None], np.zeros((problem.k, 1))])
    b_eq = t / scale
    rows, rhs = [], []
    for i in range(n):
        if np.isfinite(lo[i]):  # lo_i + m <= p_i
            row = np.zeros(n + 1)
            row[i], row[n] = -1.0, 1.0
            rows.append(row)
            rhs.append(-lo[i])
        if np.isfinite(hi[i]):  # p_i + m <= hi_i
            row = np.zeros(n + 1)
            row[i], row[n] = 1.0, 1.0
            rows.append(row)
            rhs.append(hi[i])
    c = np.zeros(n + 1)
    c[n] = -1.0
    bounds = [(None, None)] * n + [(None, 1.0)]
    res = linprog(
        c, A_ub=np.array(rows), b_ub=np.array(rhs), A_eq=A_eq, b_eq=b_eq,
        bounds=bounds, method="highs",
    )
    if res.status == 2:
        return FeasibilityReport(False, full_rank, "lp", -np.inf, "no weights in the support reach the target")
    if res.status != 0:
        return FeasibilityReport(False, full_rank, "lp", np.nan, f"LP failed: {res.message}")
    margin = float(res.x[n])
    if margin < -margin_tol:
        return FeasibilityReport(False, full_rank, "lp", margin, "no weights in the support reach the target")
    if margin <= margin_tol:
        return FeasibilityReport(
            False, full_rank, "lp", margin, "target only reachable on the boundary of the supports"
        )
    msg = "interior point found" if full_rank else "interior point found but aux is rank-deficient"
    return FeasibilityReport(True, full_rank, "lp", margin, msg)


def calibrate(sample: Sample, aux, target, prior="gaussian", q=None, options=None) -> CalibrationSolution:
    """Shortcut: build a :class:`CalibrationProblem` and solve it."""
    return solve_dual(CalibrationProblem(sample, aux, target, prior, q), options)
