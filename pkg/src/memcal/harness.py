"""Monte Carlo replication of the exp-model simulation study.

A population of N units with X ~ Uniform[1, 2] and Y = exp(X) + eps,
eps ~ Normal(0, sigma2), is generated once; every replication draws a
fresh simple random sample of size n and evaluates all estimators on that
same sample (common random numbers).

Seeds: the population uses ``SeedSequence(seed, spawn_key=(0, 0))`` and
replication r draws its sample with the 64-bit seed generated by
``SeedSequence(seed, spawn_key=(1, r))`` (PCG64 throughout). Reports are
therefore identical for any number of workers.
"""

from __future__ import annotations

import csv
import io
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .amem import amem_estimate, fit_projection, monomial_basis
from .design import Population, draw_sample, make_uniform_design
from .errors import MemcalError
from .expr import design_matrix
from .instruments import InstrumentSpec, instrument_estimate
from .calibrate import calibrate


@dataclass(frozen=True)
class EstimatorSpec:
    """One estimator of the study.

    ``kind`` is ``ht``, ``instrument`` (closed form, instruments = aux),
    ``mem`` (dual solve with ``prior``) or ``amem`` (monomial basis of size ``m``).
    ``aux`` holds column expressions in the variable ``x``.
    """

    name: str
    kind: str
    aux: tuple[str, ...] = ()
    prior: str = "gaussian"
    m: int | None = None

    @property
    def aux_label(self) -> str:
        if self.kind == "ht":
            return "none"
        if self.kind == "amem":
            return "(1,x,...,x^%d)" % self.m if self.m else "(1,x,...,x^m)"
        return self.aux[0] if len(self.aux) == 1 else "(" + ",".join(self.aux) + ")"

    @property
    def instrument_label(self) -> str:
        if self.kind == "ht":
            return "none"
        if self.kind == "mem":
            return f"prior:{self.prior}"
        return "aux"


def default_estimators(m: int = 6) -> tuple[EstimatorSpec, ...]:
    return (
        EstimatorSpec("t1", "ht"),
        EstimatorSpec("t2", "instrument", ("x",)),
        EstimatorSpec("t3", "instrument", ("1", "x")),
        EstimatorSpec("t4", "instrument", ("exp(x)",)),
        EstimatorSpec("t5", "instrument", ("1", "exp(x)")),
        EstimatorSpec("t6", "amem", m=m),
    )


@dataclass(frozen=True)
class SimConfig:
    N: int = 100_000
    n: int = 121
    sigma2: float = 1.0
    reps: int = 50
    seed: int = 20240607
    m: int = 6
    estimators: tuple[EstimatorSpec, ...] | None = None
    fresh_population: bool = False
    workers: int = 1

    def __post_init__(self):
        if self.reps < 2:
            raise ValueError("reps must be at least 2")
        if self.sigma2 < 0:
            raise ValueError("sigma2 must be non-negative")
        if not 1 <= self.n <= self.N:
            raise ValueError("need 1 <= n <= N")
        if self.estimators is None:
            object.__setattr__(self, "estimators", default_estimators(self.m))
        else:
            object.__setattr__(
                self,
                "estimators",
                tuple(e if isinstance(e, EstimatorSpec) else _spec_from_dict(e) for e in self.estimators),
            )

    def to_dict(self) -> dict:
        out = asdict(self)
        out["estimators"] = [asdict(e) for e in self.estimators]
        for e in out["estimators"]:
            e["aux"] = list(e["aux"])
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "SimConfig":
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown config fields: {sorted(unknown)}")
        return cls(**data)


def _spec_from_dict(d: dict) -> EstimatorSpec:
    d = dict(d)
    d["aux"] = tuple(d.get("aux", ()))
    return EstimatorSpec(**d)


def _seed(seed: int, *key: int) -> int:
    return int(np.random.SeedSequence(seed, spawn_key=key).generate_state(1, np.uint64)[0])


def generate_population(config: SimConfig, key: int = 0) -> Population:
    """N iid pairs X ~ U[1,2], Y = exp(X) + N(0, sigma2)."""
    rng = np.random.default_rng(np.random.SeedSequence(config.seed, spawn_key=(0, key)))
    x = rng.uniform(1.0, 2.0, size=config.N)
    eps = rng.normal(0.0, math.sqrt(config.sigma2), size=config.N)
    y = np.exp(x) + eps if config.sigma2 > 0 else np.exp(x)
    return Population(x=x, y=y)


@dataclass(frozen=True)
class EstimatorResult:
    estimator: str
    aux: str
    instrument: str
    mean: float
    variance: float
    bias: float
    failures: int


@dataclass(eq=False)
class SimReport:
    config: dict
    seed: int
    t_y: float
    rows: list[EstimatorResult]
    estimates: np.ndarray = field(repr=False)
    amem_identity_gap: float = float("nan")
    amem_b_self_gap: float = float("nan")

    def to_dict(self) -> dict:
        return {
            "config": self.config,
            "seed": self.seed,
            "t_y": self.t_y,
            "rows": [asdict(r) for r in self.rows],
            "estimates": [[None if math.isnan(v) else float(v) for v in row] for row in self.estimates],
            "amem_identity_gap": self.amem_identity_gap,
            "amem_b_self_gap": self.amem_b_self_gap,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_dict(cls, data: dict) -> "SimReport":
        est = np.array(
            [[np.nan if v is None else v for v in row] for row in data["estimates"]], dtype=float
        )
        return cls(
            config=data["config"],
            seed=data["seed"],
            t_y=data["t_y"],
            rows=[EstimatorResult(**r) for r in data["rows"]],
            estimates=est,
            amem_identity_gap=data["amem_identity_gap"],
            amem_b_self_gap=data["amem_b_self_gap"],
        )

    @classmethod
    def from_json(cls, text: str) -> "SimReport":
        return cls.from_dict(json.loads(text))

    def __eq__(self, other):
        return isinstance(other, SimReport) and self.to_json() == other.to_json()

    def row(self, name: str) -> EstimatorResult:
        for r in self.rows:
            if r.estimator == name:
                return r
        raise KeyError(name)


def evaluate_estimators(specs, sample, pop: Population, pop_aux_cache: dict, domain):
    """All estimates on one sample; returns (estimates, amem identity gap, b_self gap)."""
    out = np.full(len(specs), np.nan)
    id_gap, self_gap = 0.0, 0.0
    x_s = sample.x_s[:, 0]
    for j, spec in enumerate(specs):
        try:
            if spec.kind == "ht":
                out[j] = sample.ht_mean(sample.y_s)
            elif spec.kind in ("instrument", "mem"):
                if spec.aux not in pop_aux_cache:
                    pop_aux_cache[spec.aux] = design_matrix(spec.aux, {"x": pop.x[:, 0]}).mean(axis=0)
                target = pop_aux_cache[spec.aux]
                aux = design_matrix(spec.aux, {"x": x_s}, sample.n)
                if spec.kind == "instrument":
                    out[j] = instrument_estimate(sample, aux, None, InstrumentSpec(aux), target)[0]
                else:
                    out[j] = calibrate(sample, aux, target, spec.prior).estimate
            elif spec.kind == "amem":
                proj = fit_projection(sample, monomial_basis(spec.m, domain=domain))
                est, diag = amem_estimate(proj, pop.x[:, 0], sample)
                out[j] = est
                id_gap = max(id_gap, diag["identity_gap"])
                self_gap = max(self_gap, diag["b_self_gap"])
            else:
                raise ValueError(f"unknown estimator kind {spec.kind!r}")
        except (MemcalError, np.linalg.LinAlgError):
            out[j] = np.nan
    return out, id_gap, self_gap


def _run_chunk(args):
    config, pop, reps = args
    design = make_uniform_design(config.N, config.n)
    specs = config.estimators
    cache: dict = {}
    rows, ty, gaps = [], [], []
    for r in reps:
        if config.fresh_population:
            pop = generate_population(config, key=r + 1)
            cache = {}
        domain = (float(pop.x.min()), float(pop.x.max()))
        sample = draw_sample(design, pop, _seed(config.seed, 1, r))
        est, g1, g2 = evaluate_estimators(specs, sample, pop, cache, domain)
        rows.append(est)
        ty.append(pop.mean_y())
        gaps.append((g1, g2))
    return rows, ty, gaps


def run_replications(config: SimConfig, population: Population | None = None) -> SimReport:
    """Run ``config.reps`` replications; solver failures are counted, not raised."""
    pop = population if population is not None else generate_population(config)
    if pop.N != config.N:
        config = replace(config, N=pop.N)
    if pop.y is None:
        raise ValueError("the population needs responses")
    reps = list(range(config.reps))
    workers = max(1, int(config.workers))
    if workers == 1:
        chunks = [_run_chunk((config, pop, reps))]
    else:
        size = math.ceil(len(reps) / workers)
        parts = [reps[i : i + size] for i in range(0, len(reps), size)]
        with ProcessPoolExecutor(max_workers=workers) as ex:
            chunks = list(ex.map(_run_chunk, [(config, pop, p) for p in parts]))
    est = np.array([row for c in chunks for row in c[0]])
    ty = np.array([t for c in chunks for t in c[1]])
    gaps = np.array([g for c in chunks for g in c[2]])
    errors = est - ty[:, None]
    rows = []
    for j, spec in enumerate(config.estimators):
        ok = ~np.isnan(est[:, j])
        e = est[ok, j]
        rows.append(
            EstimatorResult(
                estimator=spec.name,
                aux=spec.aux_label,
                instrument=spec.instrument_label,
                mean=float(e.mean()) if e.size else float("nan"),
                variance=float(np.var(errors[ok, j], ddof=1)) if e.size > 1 else float("nan"),
                bias=float(errors[ok, j].mean()) if e.size else float("nan"),
                failures=int((~ok).sum()),
            )
        )
    has_amem = any(s.kind == "amem" for s in config.estimators)
    return SimReport(
        config=config.to_dict(),
        seed=config.seed,
        t_y=float(ty.mean()),
        rows=rows,
        estimates=est,
        amem_identity_gap=float(gaps[:, 0].max()) if has_amem else float("nan"),
        amem_b_self_gap=float(gaps[:, 1].max()) if has_amem else float("nan"),
    )


COLUMNS = ("estimator", "aux", "instrument", "variance", "bias", "failures")


def report_table(report: SimReport, format: str = "text") -> str:
    """Serialise a report; ``json`` is the full report, ``text``/``csv`` the table."""
    if format == "json":
        return report.to_json()
    if format == "csv":
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(COLUMNS)
        for r in report.rows:
            w.writerow([r.estimator, r.aux, r.instrument, f"{r.variance:.17g}", f"{r.bias:.17g}", r.failures])
        return buf.getvalue()
    if format != "text":
        raise ValueError(f"unknown format {format!r}")
    c = report.config
    lines = [
        f"N={c['N']} n={c['n']} sigma2={c['sigma2']:g} reps={c['reps']} seed={report.seed}",
        f"t_y={report.t_y:.6f}",
        f"{'estimator':<10} {'aux':<16} {'instrument':<16} {'variance':>12} {'bias':>12} {'failures':>8}",
    ]
    for r in report.rows:
        lines.append(
            f"{r.estimator:<10} {r.aux:<16} {r.instrument:<16} {r.variance:>12.4e} {r.bias:>12.4e} {r.failures:>8d}"
        )
    return "\n".join(lines) + "\n"
