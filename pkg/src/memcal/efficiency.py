"""Asymptotic-efficiency quantities for instrument estimators.

Two moment conventions coexist on purpose: quantities over the finite
population use denominator N (``cov_e``, ``var_e``), while plug-in
estimates from superpopulation draws use the unbiased denominator M - 1.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Callable

import numpy as np

from .design import DesignKind, Population, SamplingDesign, delta_matrix, uniform_delta_values
from .errors import SingularityError, UnsupportedOperationError


@dataclass(frozen=True)
class SuperPopModel:
    """Generator of iid ``(X, Y)`` pairs.

    ``sampler(M, rng)`` returns arrays ``(x, y)`` of length M; ``phi`` is the
    true conditional expectation E(Y | X = .) when known.
    """

    sampler: Callable[[int, np.random.Generator], tuple[np.ndarray, np.ndarray]]
    phi: Callable[[np.ndarray], np.ndarray] | None = None
    sigma2: float = 0.0

    def draw(self, M: int, seed: int):
        return self.sampler(M, np.random.default_rng(seed))


def exp_model(sigma2: float) -> SuperPopModel:
    """X ~ Uniform[1, 2], Y = exp(X) + Normal(0, sigma2)."""
    if sigma2 < 0:
        raise ValueError("sigma2 must be non-negative")

    def sampler(M, rng):
        x = rng.uniform(1.0, 2.0, size=M)
        eps = rng.normal(0.0, np.sqrt(sigma2), size=M) if sigma2 > 0 else np.zeros(M)
        return x, np.exp(x) + eps

    return SuperPopModel(sampler=sampler, phi=np.exp, sigma2=sigma2)


@dataclass(frozen=True)
class EfficiencyReport:
    v_star: float
    b_u: np.ndarray
    risk_linearized: float
    n_scaled: float

    def to_dict(self) -> dict:
        out = asdict(self)
        out["b_u"] = [float(b) for b in np.atleast_1d(self.b_u)]
        return out


def _as_2d(u):
    u = np.asarray(u, dtype=float)
    return u[:, None] if u.ndim == 1 else u


def _regression(u, y, ddof):
    u = _as_2d(u)
    y = np.asarray(y, dtype=float)
    uc = u - u.mean(axis=0)
    yc = y - y.mean()
    m = u.shape[0] - ddof
    var_u = uc.T @ uc / m
    cov_uy = uc.T @ yc / m
    if np.linalg.cond(var_u) > 1e12:
        raise SingularityError("var(u(X)) is singular")
    B = np.linalg.solve(var_u, cov_uy)
    return B, uc, yc, m


def variance_lower_bound(u_draws, y_draws) -> tuple[float, np.ndarray]:
    """Plug-in ``V*(u) = var(Y - cov(Y,u)' var(u)^-1 u)`` and the coefficient B."""
    B, uc, yc, m = _regression(u_draws, y_draws, ddof=1)
    resid = yc - uc @ B
    return float(resid @ resid / m), B


def lemma_functional(f_values, g_values, design: SamplingDesign) -> float:
    """``n N^-2 sum_{i,j in U} Delta_ij f_i g_j``.

    Uniform designs use the O(N) form
    ``n N^-2 [Delta_ii sum f g + Delta_off (sum f sum g - sum f g)]``.
    """
    f = np.asarray(f_values, dtype=float)
    g = np.asarray(g_values, dtype=float)
    N, n = design.N, design.n
    if f.shape != (N,) or g.shape != (N,):
        raise ValueError("f and g need one value per population unit")
    if design.kind is DesignKind.UNIFORM_SRSWOR:
        diag, off = uniform_delta_values(N, n)
        fg = np.sum(f * g)
        total = diag * fg + off * (np.sum(f) * np.sum(g) - fg)
    elif design.joint is not None:
        total = f @ delta_matrix(design) @ g
    else:
        raise UnsupportedOperationError("joint inclusion probabilities are required")
    return float(n * total / N**2)


def lemma_functional_naive(f_values, g_values, design: SamplingDesign) -> float:
    """Dense double sum; reference for the uniform shortcut."""
    f = np.asarray(f_values, dtype=float)
    g = np.asarray(g_values, dtype=float)
    return float(design.n * (f @ delta_matrix(design) @ g) / design.N**2)


def quadratic_risk_linearized(pop: Population, design: SamplingDesign, u_values, B) -> float:
    """``N^-2 sum Delta_ij e_i e_j`` with residuals ``e = y - B' u(x)``."""
    if pop.y is None:
        raise ValueError("population responses are required")
    u = _as_2d(u_values)
    e = pop.y - u @ np.atleast_1d(np.asarray(B, dtype=float))
    return lemma_functional(e, e, design) / design.n


def efficiency_check(b_hat, u_draws, y_draws, threshold: float = 1e-2) -> tuple[bool, float]:
    """Distance of ``b_hat`` from the efficient limit ``var(u)^-1 cov(Y, u)``."""
    _, B = variance_lower_bound(u_draws, y_draws)
    gap = float(np.linalg.norm(np.atleast_1d(b_hat) - B))
    return gap <= threshold, gap


def population_moments(u_values, y_values) -> tuple[float, np.ndarray]:
    """Finite-population ``(var_e(y - B'u), B)`` with ``B = var_e(u)^-1 cov_e(u, y)``."""
    B, uc, yc, m = _regression(u_values, y_values, ddof=0)
    resid = yc - uc @ B
    return float(resid @ resid / m), B


def efficiency_report(pop: Population, design: SamplingDesign, u_values) -> EfficiencyReport:
    """V* and B from the population, with the linearised risk at that B."""
    if pop.y is None:
        raise ValueError("population responses are required")
    v_star, B = population_moments(u_values, pop.y)
    risk = quadratic_risk_linearized(pop, design, u_values, B)
    return EfficiencyReport(v_star=v_star, b_u=B, risk_linearized=risk, n_scaled=design.n * risk)
