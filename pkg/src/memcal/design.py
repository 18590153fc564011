"""Finite populations, sampling designs and sample drawing.

Units are addressed by their 0-based position in the population; the
``ids`` array keeps the user-facing labels (1..N by default).

Randomness: every draw builds its own ``numpy.random.Generator`` on the
PCG64 bit generator from the caller's 64-bit seed, so a sample is a pure
function of ``(design, population, seed)``.
"""

from __future__ import annotations

import enum
import itertools
import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .errors import SizeError, UnsupportedOperationError

MAX_ENUMERATION = 10**6
MAX_DELTA_MATRIX = 5000


def _frozen(a, dtype=float):
    a = np.array(a, dtype=dtype)
    a.setflags(write=False)
    return a


class DesignKind(enum.Enum):
    UNIFORM_SRSWOR = "uniform"
    USER_SPECIFIED = "user"


@dataclass(frozen=True)
class Population:
    """A finite universe of ``N`` units with auxiliary rows and optional responses."""

    x: np.ndarray
    y: np.ndarray | None = None
    ids: np.ndarray | None = None

    def __post_init__(self):
        x = np.asarray(self.x, dtype=float)
        if x.ndim == 1:
            x = x[:, None]
        if x.ndim != 2 or x.shape[0] < 1:
            raise ValueError("population needs at least one unit and a 2-D x")
        if not np.all(np.isfinite(x)):
            raise ValueError("population x contains non-finite entries")
        object.__setattr__(self, "x", _frozen(x))
        if self.y is not None:
            y = np.asarray(self.y, dtype=float).ravel()
            if y.shape[0] != x.shape[0]:
                raise ValueError(f"len(y)={y.shape[0]} does not match N={x.shape[0]}")
            object.__setattr__(self, "y", _frozen(y))
        ids = np.arange(1, x.shape[0] + 1) if self.ids is None else self.ids
        ids = np.asarray(ids, dtype=np.int64).ravel()
        if ids.shape[0] != x.shape[0] or np.unique(ids).size != ids.size:
            raise ValueError("ids must be distinct and one per unit")
        object.__setattr__(self, "ids", _frozen(ids, np.int64))

    @property
    def N(self) -> int:
        return self.x.shape[0]

    @property
    def k(self) -> int:
        return self.x.shape[1]

    def mean_x(self) -> np.ndarray:
        return self.x.mean(axis=0)

    def mean_y(self) -> float:
        if self.y is None:
            raise ValueError("population has no responses")
        return float(self.y.mean())


@dataclass(frozen=True)
class SamplingDesign:
    """First- and second-order inclusion probabilities plus a drawing rule.

    ``joint`` is an optional ``N x N`` table of pi_ij (diagonal = pi_i).
    ``support`` lists ``(indices, probability)`` pairs when the design is
    given by its full distribution p(s); such designs can be drawn from and
    enumerated.
    """

    N: int
    n: int
    pi: np.ndarray
    kind: DesignKind
    joint: np.ndarray | None = None
    support: tuple | None = field(default=None, repr=False)

    def __post_init__(self):
        pi = np.asarray(self.pi, dtype=float).ravel()
        if pi.shape[0] != self.N:
            raise ValueError(f"pi has length {pi.shape[0]}, expected N={self.N}")
        if not np.all((pi > 0) & (pi <= 1)):
            raise ValueError("inclusion probabilities must satisfy 0 < pi_i <= 1")
        object.__setattr__(self, "pi", _frozen(pi))
        if self.joint is not None:
            joint = np.asarray(self.joint, dtype=float)
            if joint.shape != (self.N, self.N):
                raise ValueError("joint table must be N x N")
            object.__setattr__(self, "joint", _frozen(joint))

    @property
    def d(self) -> np.ndarray:
        return 1.0 / self.pi

    @property
    def has_joint(self) -> bool:
        return self.kind is DesignKind.UNIFORM_SRSWOR or self.joint is not None

    def joint_prob(self, i: int, j: int) -> float:
        """pi_ij, with pi_ii identified with pi_i."""
        if i == j:
            return float(self.pi[i])
        if self.kind is DesignKind.UNIFORM_SRSWOR:
            return self.n * (self.n - 1) / (self.N * (self.N - 1))
        if self.joint is None:
            raise UnsupportedOperationError(
                "joint inclusion probabilities are not available for this design"
            )
        return float(self.joint[i, j])


@dataclass(frozen=True)
class Sample:
    """Units drawn from a population together with their design weights."""

    indices: np.ndarray
    d: np.ndarray
    x_s: np.ndarray
    y_s: np.ndarray | None
    N: int
    ids: np.ndarray

    def __post_init__(self):
        idx = np.asarray(self.indices, dtype=np.int64).ravel()
        if np.unique(idx).size != idx.size:
            raise ValueError("sample indices must be distinct")
        d = np.asarray(self.d, dtype=float).ravel()
        if d.shape != idx.shape:
            raise ValueError("one design weight per sampled unit is required")
        if np.any(d < 1):
            raise ValueError("design weights d_i = 1/pi_i must be >= 1")
        x_s = np.asarray(self.x_s, dtype=float)
        if x_s.ndim == 1:
            x_s = x_s[:, None]
        if x_s.shape[0] != idx.size:
            raise ValueError("x_s must have one row per sampled unit")
        object.__setattr__(self, "indices", _frozen(idx, np.int64))
        object.__setattr__(self, "d", _frozen(d))
        object.__setattr__(self, "x_s", _frozen(x_s))
        object.__setattr__(self, "ids", _frozen(self.ids, np.int64))
        if self.y_s is not None:
            y_s = np.asarray(self.y_s, dtype=float).ravel()
            if y_s.shape[0] != idx.size:
                raise ValueError("y_s must have one entry per sampled unit")
            object.__setattr__(self, "y_s", _frozen(y_s))

    @property
    def n(self) -> int:
        return self.indices.size

    @property
    def pi(self) -> np.ndarray:
        return 1.0 / self.d

    def ht_mean(self, values) -> np.ndarray | float:
        """Horvitz-Thompson mean ``N^-1 sum_s d_i v_i`` (row-wise for 2-D input)."""
        v = np.asarray(values, dtype=float)
        out = self.d @ v / self.N
        return float(out) if np.ndim(out) == 0 else out


def make_uniform_design(N: int, n: int) -> SamplingDesign:
    """Simple random sampling of ``n`` units out of ``N`` without replacement."""
    if int(N) != N or int(n) != n:
        raise ValueError("N and n must be integers")
    N, n = int(N), int(n)
    if N < 1 or n < 1 or n > N:
        raise ValueError(f"need 1 <= n <= N, got N={N}, n={n}")
    return SamplingDesign(N=N, n=n, pi=np.full(N, n / N), kind=DesignKind.UNIFORM_SRSWOR)


def design_from_support(N: int, support: Mapping[Sequence[int], float]) -> SamplingDesign:
    """Build a design from its full distribution ``{sample: p(s)}``.

    Samples are collections of 0-based unit positions. First and second
    order inclusion probabilities are computed exactly from the support.
    """
    items = []
    total = 0.0
    for s, p in support.items():
        s = tuple(sorted(int(i) for i in s))
        if p < 0:
            raise ValueError("sample probabilities must be non-negative")
        if len(set(s)) != len(s) or (s and (s[0] < 0 or s[-1] >= N)):
            raise ValueError(f"invalid sample {s}")
        if p > 0:
            items.append((s, float(p)))
            total += p
    if not math.isclose(total, 1.0, rel_tol=0, abs_tol=1e-12):
        raise ValueError(f"sample probabilities sum to {total}, not 1")
    joint = np.zeros((N, N))
    for s, p in items:
        idx = np.array(s, dtype=np.int64)
        joint[np.ix_(idx, idx)] += p
    pi = np.diag(joint).copy()
    sizes = {len(s) for s, _ in items}
    n = sizes.pop() if len(sizes) == 1 else int(round(pi.sum()))
    return SamplingDesign(
        N=N, n=n, pi=pi, kind=DesignKind.USER_SPECIFIED, joint=joint, support=tuple(items)
    )


def user_design(pi, joint=None) -> SamplingDesign:
    """A design known only through its pi table (and optionally pi_ij)."""
    pi = np.asarray(pi, dtype=float).ravel()
    return SamplingDesign(
        N=pi.size, n=int(round(pi.sum())), pi=pi, kind=DesignKind.USER_SPECIFIED, joint=joint
    )


def _partial_fisher_yates(N: int, n: int, rng: np.random.Generator) -> np.ndarray:
    # sparse swap table: O(n) memory regardless of N
    swapped: dict[int, int] = {}
    out = np.empty(n, dtype=np.int64)
    picks = rng.integers(np.arange(n), N)
    for i in range(n):
        j = int(picks[i])
        vi = swapped.get(i, i)
        vj = swapped.get(j, j)
        out[i] = vj
        swapped[j] = vi
    return out


def draw_sample(design: SamplingDesign, pop: Population, seed: int) -> Sample:
    """Draw one sample. Deterministic given ``seed``."""
    if design.N != pop.N:
        raise ValueError(f"design N={design.N} does not match population N={pop.N}")
    rng = np.random.default_rng(np.uint64(seed % 2**64))
    if design.kind is DesignKind.UNIFORM_SRSWOR:
        idx = np.sort(_partial_fisher_yates(design.N, design.n, rng))
    elif design.support is not None:
        probs = np.array([p for _, p in design.support])
        k = rng.choice(len(design.support), p=probs / probs.sum())
        idx = np.array(design.support[k][0], dtype=np.int64)
    else:
        raise UnsupportedOperationError(
            "drawing requires a uniform design or a design given by its support"
        )
    return sample_from_indices(design, pop, idx)


def sample_from_indices(design: SamplingDesign, pop: Population, indices) -> Sample:
    idx = np.asarray(indices, dtype=np.int64)
    return Sample(
        indices=idx,
        d=1.0 / design.pi[idx],
        x_s=pop.x[idx],
        y_s=None if pop.y is None else pop.y[idx],
        N=pop.N,
        ids=pop.ids[idx],
    )


def enumerate_design(design: SamplingDesign) -> list[tuple[tuple[int, ...], float]]:
    """All samples with positive probability, as ``(indices, p(s))`` pairs."""
    if design.support is not None:
        return list(design.support)
    if design.kind is not DesignKind.UNIFORM_SRSWOR:
        raise UnsupportedOperationError("design has no enumerable support")
    count = math.comb(design.N, design.n)
    if count > MAX_ENUMERATION:
        raise SizeError(f"C({design.N},{design.n}) = {count} exceeds {MAX_ENUMERATION}")
    p = 1.0 / count
    return [(s, p) for s in itertools.combinations(range(design.N), design.n)]


def inclusion_from_enumeration(samples, N: int) -> tuple[np.ndarray, np.ndarray]:
    """Recompute (pi_i, pi_ij) by summing p(s) over an enumeration."""
    joint = np.zeros((N, N))
    for s, p in samples:
        idx = np.asarray(s, dtype=np.int64)
        joint[np.ix_(idx, idx)] += p
    return np.diag(joint).copy(), joint


def delta(design: SamplingDesign, i: int, j: int) -> float:
    """Design covariance kernel ``pi_ij d_i d_j - 1``."""
    return design.joint_prob(i, j) / (design.pi[i] * design.pi[j]) - 1.0


def uniform_delta_values(N: int, n: int) -> tuple[float, float]:
    """(Delta_ii, Delta_ij for i != j) of simple random sampling."""
    diag = N / n - 1.0
    off = -(N - n) / (n * (N - 1)) if N > 1 else 0.0
    return diag, off


def delta_matrix(design: SamplingDesign) -> np.ndarray:
    """Full ``N x N`` table of Delta_ij."""
    if design.N > MAX_DELTA_MATRIX:
        raise SizeError(f"N={design.N} too large for a dense Delta table")
    if design.kind is DesignKind.UNIFORM_SRSWOR:
        diag, off = uniform_delta_values(design.N, design.n)
        out = np.full((design.N, design.N), off)
        np.fill_diagonal(out, diag)
        return out
    if design.joint is None:
        raise UnsupportedOperationError(
            "joint inclusion probabilities are not available for this design"
        )
    d = design.d
    return design.joint * np.outer(d, d) - 1.0
