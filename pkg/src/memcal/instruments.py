"""Generalised calibration and instrument estimators.

A generalised calibration (GC) estimator uses weights ``w_i = d_i f_i(lambda)``
where ``f_i(0) = 1`` and ``lambda`` solves
``F(lambda) = N^-1 sum_s d_i f_i(lambda) x_i = t_x``. The linear choice
``f_i(lambda) = 1 + z_i' lambda`` gives the instrument estimator, available in
closed form; MEM calibration is the choice ``f_i(lambda) = Lambda_i'(lambda' d_i x_i)``.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .calibrate import SolverOptions, _cholesky_solve, _solve_checked
from .design import SamplingDesign, delta_matrix
from .errors import SingularityError, SolverError
from .priors import PriorBank


@dataclass(frozen=True)
class InstrumentSpec:
    z: np.ndarray
    label: str = "custom"

    def __post_init__(self):
        z = np.asarray(self.z, dtype=float)
        if z.ndim == 1:
            z = z[:, None]
        object.__setattr__(self, "z", z)


@dataclass(frozen=True)
class GCFamily:
    """Per-unit criterion functions, evaluated jointly.

    ``f(lam)`` returns the vector ``(f_i(lam))_i``; ``jac(lam)``, if given,
    returns the ``n x k`` matrix of gradients. ``grad0`` is ``jac(0)``.
    """

    f: Callable[[np.ndarray], np.ndarray]
    k: int
    jac: Callable[[np.ndarray], np.ndarray] | None = None
    label: str = "custom"

    def __post_init__(self):
        f0 = np.asarray(self.f(np.zeros(self.k)), dtype=float)
        if not np.allclose(f0, 1.0, rtol=0, atol=1e-12):
            raise ValueError("GC functions must satisfy f_i(0) = 1")

    @property
    def grad0(self) -> np.ndarray:
        return self.jacobian(np.zeros(self.k))

    def jacobian(self, lam) -> np.ndarray:
        lam = np.asarray(lam, dtype=float)
        if self.jac is not None:
            return np.asarray(self.jac(lam), dtype=float)
        # forward differences
        f0 = np.asarray(self.f(lam), dtype=float)
        cols = []
        for j in range(self.k):
            h = 1e-6 * max(1.0, abs(lam[j]))
            e = lam.copy()
            e[j] += h
            cols.append((np.asarray(self.f(e), dtype=float) - f0) / h)
        return np.column_stack(cols)


def linear_family(z) -> GCFamily:
    """``f_i(lam) = 1 + z_i' lam`` (the instrument family)."""
    z = InstrumentSpec(z).z
    return GCFamily(f=lambda lam: 1.0 + z @ lam, k=z.shape[1], jac=lambda lam: z, label="linear")


def prior_family(priors, d, aux) -> GCFamily:
    """``f_i(lam) = Lambda_i'(lam' d_i x_i)``: MEM calibration as a GC family."""
    aux = np.atleast_2d(np.asarray(aux, dtype=float))
    if aux.shape[0] != np.size(d):
        aux = aux.T
    a = np.asarray(d, dtype=float)[:, None] * aux
    bank = PriorBank(priors, a.shape[0])
    return GCFamily(
        f=lambda lam: bank.dlog_laplace(a @ lam),
        k=a.shape[1],
        jac=lambda lam: bank.d2log_laplace(a @ lam)[:, None] * a,
        label="prior:" + "+".join(bank.labels()),
    )


def _as_matrix(aux, n):
    aux = np.asarray(aux, dtype=float)
    if aux.ndim == 1:
        aux = aux[:, None]
    if aux.shape[0] != n:
        raise ValueError(f"expected {n} rows, got {aux.shape[0]}")
    return aux


def _y(sample, y):
    y = sample.y_s if y is None else np.asarray(y, dtype=float)
    if y is None:
        raise ValueError("responses are required")
    return y


def instrument_estimate(sample, aux, y, z: InstrumentSpec, target):
    """Closed-form instrument estimator.

    Returns ``(estimate, B_hat, weights)`` with
    ``B_hat = X_n^-1 N^-1 sum d_i z_i y_i``, ``X_n = N^-1 sum d_i z_i x_i'``
    and weights ``d_i (1 + z_i' lambda)``, ``lambda = X_n^-T (t_x - HT(x))``.
    """
    aux = _as_matrix(aux, sample.n)
    y = _y(sample, y)
    zz = _as_matrix(z.z if isinstance(z, InstrumentSpec) else z, sample.n)
    target = np.atleast_1d(np.asarray(target, dtype=float))
    if zz.shape[1] != aux.shape[1] or target.size != aux.shape[1]:
        raise ValueError("instruments, aux and target must share the same dimension k")
    d, N = sample.d, sample.N
    Xn = (zz * d[:, None]).T @ aux / N
    shift = target - sample.ht_mean(aux)
    B = _solve_checked(Xn, zz.T @ (d * y) / N, "X_n")
    lam = _solve_checked(Xn.T, shift, "X_n")
    weights = d * (1.0 + zz @ lam)
    estimate = sample.ht_mean(y) + shift @ B
    return float(estimate), B, weights


def gc_root(sample, aux, family: GCFamily, target, options: SolverOptions | None = None):
    """Solve ``N^-1 sum d_i f_i(lam) x_i = t_x`` by damped Newton on the residual norm."""
    opts = options or SolverOptions()
    aux = _as_matrix(aux, sample.n)
    target = np.atleast_1d(np.asarray(target, dtype=float))
    d, N = sample.d, sample.N
    tol = opts.tol if opts.tol is not None else 1e-10 * max(1.0, float(np.max(np.abs(target))))

    def resid(lam):
        with np.errstate(over="ignore", invalid="ignore"):
            return (d * family.f(lam)) @ aux / N - target

    lam = np.zeros(family.k)
    r = resid(lam)
    trace = []
    for it in range(opts.max_iter + 1):
        rnorm = float(np.max(np.abs(r)))
        trace.append({"iteration": it, "grad_norm": rnorm})
        if rnorm <= tol:
            return lam, rnorm, it
        if it == opts.max_iter:
            break
        J = aux.T @ (d[:, None] * family.jacobian(lam)) / N
        try:
            step = -np.linalg.solve(J, r)
        except np.linalg.LinAlgError:
            step = -_cholesky_solve(J.T @ J, J.T @ r, opts.ridge)
        alpha, merit = 1.0, r @ r
        for _ in range(opts.max_backtracks):
            cand = lam + alpha * step
            rc = resid(cand)
            if np.all(np.isfinite(rc)) and rc @ rc <= (1.0 - 2e-4 * alpha) * merit:
                break
            alpha *= 0.5
        else:
            raise SolverError(f"GC line search failed at iteration {it}", trace=trace)
        lam, r = cand, rc
    raise SolverError(f"GC solve did not converge within {opts.max_iter} iterations", trace=trace)


def gc_estimate(sample, aux, y, family: GCFamily, target, options: SolverOptions | None = None):
    """GC estimate ``N^-1 sum d_i f_i(lam_hat) y_i``; returns ``(estimate, lambda_hat)``."""
    y = _y(sample, y)
    lam, _, _ = gc_root(sample, aux, family, target, options)
    w = sample.d * family.f(lam)
    return float(w @ y / sample.N), lam


def optimal_instruments_uniform(u_values, t_u, N: int, n: int) -> InstrumentSpec:
    """Variance-minimising instruments under simple random sampling.

    ``z_i = N (N - n) / (n (N - 1)) * (u(x_i) - t_u)`` for the sampled units.
    """
    u = np.asarray(u_values, dtype=float)
    if n == N:
        warnings.warn("census design: optimal instruments are identically zero", RuntimeWarning, stacklevel=2)
    coef = N * (N - n) / (n * (N - 1)) if N > 1 else 0.0
    return InstrumentSpec(coef * (u - np.asarray(t_u, dtype=float)), label="optimal-uniform")


def optimal_instruments(design: SamplingDesign, u_pop, sample_indices) -> InstrumentSpec:
    """``z_i = sum_j Delta_ij u(x_j)`` from the full Delta table (small designs)."""
    u = np.asarray(u_pop, dtype=float)
    z = delta_matrix(design) @ u
    return InstrumentSpec(z[np.asarray(sample_indices)], label="optimal")


def reduce_dimension(sample, aux, y, z: InstrumentSpec, target):
    """Project a k-dimensional instrument problem onto ``B_hat' x``.

    Returns ``(B_hat' x_i, B_hat' t_x, B_hat' z_i)`` with
    ``B_hat = [sum d_i z_i x_i']^-1 sum d_i y_i z_i``; the scalar instrument
    estimate on the reduced problem equals the full one.
    """
    aux = _as_matrix(aux, sample.n)
    y = _y(sample, y)
    zz = _as_matrix(z.z if isinstance(z, InstrumentSpec) else z, sample.n)
    d = sample.d
    B = _solve_checked((zz * d[:, None]).T @ aux, zz.T @ (d * y), "sum d z x'")
    target = np.atleast_1d(np.asarray(target, dtype=float))
    reduced_z = zz @ B
    if not np.any(reduced_z):
        raise SingularityError("reduced instruments vanish")
    return aux @ B, float(target @ B), reduced_z


def equivalence_gap(sample, aux, y, family_f: GCFamily, family_g: GCFamily, target, options=None) -> float:
    """``|estimate_f - estimate_g|`` for two GC families on the same data."""
    ef, _ = gc_estimate(sample, aux, y, family_f, target, options)
    eg, _ = gc_estimate(sample, aux, y, family_g, target, options)
    return abs(ef - eg)
