"""Mean-one prior families on the calibration weights.

A family is described by its log-Laplace transform ``Lambda`` and the first
two derivatives; the Cramer transform ``Lambda*`` (the convex conjugate)
is the dissimilarity the calibrated weights minimise. Built-in families
carry ``Lambda*`` in closed form. A user-supplied family only needs
``Lambda``, ``Lambda'`` and ``Lambda''``; its conjugate is then computed
pointwise by a safeguarded Newton solve of ``Lambda'(s) = t``.

User-supplied families must be essentially smooth and strictly convex on
``(-inf, domain_upper)``, with ``Lambda(0) = 0`` and ``Lambda'(0) = 1``.
These are not (and cannot in general be) verified.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .errors import DomainError

ArrayFn = Callable[[np.ndarray], np.ndarray]


@dataclass(frozen=True)
class PriorFamily:
    label: str
    log_laplace: ArrayFn
    dlog_laplace: ArrayFn
    d2log_laplace: ArrayFn
    cramer: ArrayFn | None = None
    dcramer: ArrayFn | None = None
    domain_upper: float = math.inf
    support_interior: tuple[float, float] = (-math.inf, math.inf)
    variance: float | np.ndarray = 1.0

    def cramer_at(self, t) -> np.ndarray:
        """Lambda*(t); closed form when available, else numerical conjugation."""
        if self.cramer is not None:
            return self.cramer(np.asarray(t, dtype=float))
        return conjugate(self, t)[0]

    def dcramer_at(self, t) -> np.ndarray:
        """(Lambda*)'(t), the inverse of Lambda'."""
        if self.dcramer is not None:
            return self.dcramer(np.asarray(t, dtype=float))
        return conjugate(self, t)[1]


def _check_open(t, lo, name):
    if np.any(t <= lo):
        raise DomainError(f"{name}: argument must be > {lo}")


def gaussian_prior(variance) -> PriorFamily:
    """Normal prior N(1, v); ``v`` may be a scalar or one value per unit.

    Its Cramer transform is the chi-square distance ``(t-1)^2 / (2v)``.
    """
    v = np.asarray(variance, dtype=float)
    if not np.all(np.isfinite(v)) or np.any(v <= 0):
        raise ValueError("gaussian prior variance must be positive and finite")
    if v.ndim == 0:
        v = float(v)
    return PriorFamily(
        label="gaussian",
        log_laplace=lambda s: v * s * s / 2.0 + s,
        dlog_laplace=lambda s: v * s + 1.0,
        d2log_laplace=lambda s: v * np.ones_like(s),
        cramer=lambda t: (t - 1.0) ** 2 / (2.0 * v),
        dcramer=lambda t: (t - 1.0) / v,
        variance=v,
    )


def _exp_log_laplace(s):
    s = np.asarray(s, dtype=float)
    if np.any(s >= 1.0):
        raise DomainError("exponential prior: log-Laplace transform needs s < 1")
    return -np.log1p(-s)


def _exp_dlog_laplace(s):
    s = np.asarray(s, dtype=float)
    if np.any(s >= 1.0):
        raise DomainError("exponential prior: log-Laplace transform needs s < 1")
    return 1.0 / (1.0 - s)


def _exp_cramer(t):
    _check_open(t, 0.0, "exponential prior Cramer transform")
    return t - 1.0 - np.log(t)


def _exp_dcramer(t):
    _check_open(t, 0.0, "exponential prior Cramer transform")
    return 1.0 - 1.0 / t


def exponential_prior() -> PriorFamily:
    """Exponential(1) prior; dissimilarity ``-log t + t - 1``."""
    return PriorFamily(
        label="exponential",
        log_laplace=_exp_log_laplace,
        dlog_laplace=_exp_dlog_laplace,
        d2log_laplace=lambda s: _exp_dlog_laplace(s) ** 2,
        cramer=_exp_cramer,
        dcramer=_exp_dcramer,
        domain_upper=1.0,
        support_interior=(0.0, math.inf),
        variance=1.0,
    )


def _poisson_cramer(t):
    t = np.asarray(t, dtype=float)
    if np.any(t < 0):
        raise DomainError("poisson prior Cramer transform needs t >= 0")
    # t log t -> 0 as t -> 0, so Lambda*(0) = 1
    with np.errstate(divide="ignore", invalid="ignore"):
        tlogt = np.where(t > 0, t * np.log(np.where(t > 0, t, 1.0)), 0.0)
    return tlogt - t + 1.0


def _poisson_dcramer(t):
    _check_open(t, 0.0, "poisson prior Cramer derivative")
    return np.log(t)


def poisson_prior() -> PriorFamily:
    """Poisson(1) prior; dissimilarity ``t log t - t + 1`` (Kullback, raking)."""
    return PriorFamily(
        label="poisson",
        log_laplace=lambda s: np.expm1(s),
        dlog_laplace=np.exp,
        d2log_laplace=np.exp,
        cramer=_poisson_cramer,
        dcramer=_poisson_dcramer,
        support_interior=(0.0, math.inf),
        variance=1.0,
    )


def priors_for(name: str, pi, q=None) -> PriorFamily:
    """Built-in family by name, with Gaussian variance ``pi_i q_i`` per unit."""
    name = name.lower()
    if name == "gaussian":
        pi = np.asarray(pi, dtype=float)
        q = np.ones_like(pi) if q is None else np.asarray(q, dtype=float)
        return gaussian_prior(pi * q)
    if name == "exponential":
        return exponential_prior()
    if name == "poisson":
        return poisson_prior()
    raise ValueError(f"unknown prior family {name!r}")


def _solve_dlog_laplace(prior: PriorFamily, t: float, tol=1e-14, max_iter=200) -> float:
    """Root of Lambda'(s) = t by Newton kept inside an expanding bracket."""
    lo_supp, hi_supp = prior.support_interior
    if not (lo_supp < t < hi_supp):
        raise DomainError(f"{prior.label}: t={t} outside the support interior")
    alpha = prior.domain_upper
    f = lambda s: float(prior.dlog_laplace(np.asarray(s))) - t
    g0 = f(0.0)
    if g0 == 0.0:
        return 0.0
    if g0 < 0:
        lo, hi, step = 0.0, None, 1.0
        while hi is None:
            cand = step if math.isinf(alpha) else alpha - (alpha - lo) / 2.0
            if f(cand) > 0:
                hi = cand
            else:
                lo = cand
                step *= 2.0
                if step > 1e300:
                    raise DomainError(f"{prior.label}: cannot bracket Lambda'(s) = {t}")
    else:
        lo, hi, step = None, 0.0, -1.0
        while lo is None:
            if f(step) < 0:
                lo = step
            else:
                hi = step
                step *= 2.0
                if step < -1e300:
                    raise DomainError(f"{prior.label}: cannot bracket Lambda'(s) = {t}")
    s = 0.5 * (lo + hi)
    for _ in range(max_iter):
        gs = f(s)
        if gs > 0:
            hi = s
        else:
            lo = s
        h = float(prior.d2log_laplace(np.asarray(s)))
        cand = s - gs / h if h > 0 else None
        if cand is None or not (lo < cand < hi):
            cand = 0.5 * (lo + hi)
        if abs(cand - s) <= tol * max(1.0, abs(s)):
            return cand
        s = cand
    return s


def conjugate(prior: PriorFamily, t) -> tuple[np.ndarray, np.ndarray]:
    """Numerical Fenchel conjugate: returns (Lambda*(t), argmax s)."""
    t = np.atleast_1d(np.asarray(t, dtype=float))
    s = np.array([_solve_dlog_laplace(prior, float(ti)) for ti in t.ravel()]).reshape(t.shape)
    val = s * t - np.asarray(prior.log_laplace(s), dtype=float)
    return val, s


class PriorBank:
    """Vectorised evaluation of per-unit priors over a sample of size ``n``.

    ``priors`` is either one family (applied to every unit, array-valued
    parameters allowed) or a sequence of ``n`` families.
    """

    def __init__(self, priors: PriorFamily | Sequence[PriorFamily], n: int):
        self.n = n
        if isinstance(priors, PriorFamily):
            self.groups = [(priors, np.arange(n))]
        else:
            priors = list(priors)
            if len(priors) != n:
                raise ValueError(f"{len(priors)} priors given for {n} units")
            by_id: dict[int, tuple[PriorFamily, list[int]]] = {}
            for i, p in enumerate(priors):
                by_id.setdefault(id(p), (p, []))[1].append(i)
            self.groups = [(p, np.array(ix)) for p, ix in by_id.values()]
        self.domain_upper = np.empty(n)
        self.support_lo = np.empty(n)
        self.support_hi = np.empty(n)
        for p, ix in self.groups:
            self.domain_upper[ix] = p.domain_upper
            self.support_lo[ix] = p.support_interior[0]
            self.support_hi[ix] = p.support_interior[1]

    @property
    def bounded_domain(self) -> bool:
        return bool(np.any(np.isfinite(self.domain_upper)))

    def _apply(self, attr, s):
        s = np.asarray(s, dtype=float)
        out = np.empty(self.n)
        for p, ix in self.groups:
            out[ix] = getattr(p, attr)(s if len(self.groups) == 1 else s[ix])
        return out

    def log_laplace(self, s):
        return self._apply("log_laplace", s)

    def dlog_laplace(self, s):
        return self._apply("dlog_laplace", s)

    def d2log_laplace(self, s):
        return self._apply("d2log_laplace", s)

    def cramer(self, t):
        return self._apply("cramer_at", t)

    def labels(self) -> list[str]:
        return sorted({p.label for p, _ in self.groups})


def bregman_divergence(prior: PriorFamily, w, d) -> float:
    """Bregman divergence of ``Lambda*`` between weight vectors ``w`` and ``d``."""
    w = np.asarray(w, dtype=float)
    d = np.asarray(d, dtype=float)
    terms = prior.cramer_at(w) - prior.cramer_at(d) - prior.dcramer_at(d) * (w - d)
    # rounding can leave tiny negatives when w == d
    return float(max(np.sum(terms), 0.0))


def dissimilarity(priors, pi, w) -> float:
    """``sum_i Lambda*_i(pi_i w_i)``, the calibration distance implied by the priors."""
    t = np.asarray(pi, dtype=float) * np.asarray(w, dtype=float)
    return float(np.sum(PriorBank(priors, t.size).cramer(t)))


def chi2_distance(pi, w, q=None) -> float:
    """Classical chi-square distance ``sum (pi_i w_i - 1)^2 / (q_i pi_i)``.

    Equals twice the Gaussian-prior dissimilarity with variance ``pi_i q_i``.
    """
    pi = np.asarray(pi, dtype=float)
    q = np.ones_like(pi) if q is None else np.asarray(q, dtype=float)
    return float(np.sum((pi * np.asarray(w) - 1.0) ** 2 / (q * pi)))
