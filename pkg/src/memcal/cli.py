"""Command-line front end.

stdout carries data (CSV or JSON), stderr carries diagnostics. Exit codes:
0 success, 1 input error, 2 infeasible calibration, 3 solver failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import os
import re
import sys
import tempfile
from dataclasses import dataclass

import numpy as np

from . import __version__
from .amem import amem_estimate, fit_projection, monomial_basis
from .calibrate import SolverOptions, calibrate, greg_closed_form
from .design import (
    Population,
    Sample,
    SamplingDesign,
    design_from_support,
    enumerate_design,
    inclusion_from_enumeration,
    make_uniform_design,
    uniform_delta_values,
)
from .efficiency import efficiency_report
from .errors import InfeasibleError, MemcalError, SingularityError, SolverError
from .expr import ExpressionError, design_matrix
from .harness import SimConfig, report_table, run_replications
from .instruments import InstrumentSpec, instrument_estimate, optimal_instruments_uniform

SEED_ENV = "MEMCAL_SEED"

EXIT_OK, EXIT_INPUT, EXIT_INFEASIBLE, EXIT_SOLVER = 0, 1, 2, 3


class InputError(Exception):
    """Bad user input; the message names the offending file, line and column."""


def _fmt(v: float) -> str:
    return format(float(v), ".17g")


# ---------------------------------------------------------------- CSV input


@dataclass(frozen=True)
class Table:
    path: str
    header: list[str]
    ids: np.ndarray
    columns: dict[str, np.ndarray]

    def __len__(self):
        return self.ids.size


def read_table(path: str, required: list[str] | None = None) -> Table:
    """Read a numeric CSV with an integer ``id`` first column."""
    try:
        fh = open(path, newline="", encoding="utf-8")
    except OSError as exc:
        raise InputError(f"{path}: cannot open ({exc.strerror})") from exc
    with fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise InputError(f"{path}: empty file") from None
        if not header or header[0] != "id":
            raise InputError(f"{path}:1:1: first column must be 'id', got {header[:1]}")
        if len(set(header)) != len(header):
            raise InputError(f"{path}:1: duplicate column names in header {header}")
        missing = [c for c in (required or []) if c not in header]
        if missing:
            raise InputError(f"{path}:1: header {header} is missing columns {missing}")
        ids, rows = [], []
        for line_no, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(header):
                raise InputError(f"{path}:{line_no}: expected {len(header)} fields, found {len(row)}")
            try:
                ids.append(int(row[0]))
            except ValueError:
                raise InputError(f"{path}:{line_no}:1 (id): not an integer: {row[0]!r}") from None
            vals = []
            for col, (name, cell) in enumerate(zip(header[1:], row[1:]), start=2):
                try:
                    v = float(cell)
                except ValueError:
                    raise InputError(f"{path}:{line_no}:{col} ({name}): not a number: {cell!r}") from None
                if not math.isfinite(v):
                    raise InputError(f"{path}:{line_no}:{col} ({name}): non-finite value {cell!r}")
                vals.append(v)
            rows.append(vals)
    if not ids:
        raise InputError(f"{path}: no data rows")
    ids_arr = np.array(ids, dtype=np.int64)
    if np.unique(ids_arr).size != ids_arr.size:
        raise InputError(f"{path}: ids are not distinct")
    data = np.array(rows, dtype=float).reshape(len(rows), len(header) - 1)
    return Table(path, header, ids_arr, {h: data[:, j] for j, h in enumerate(header[1:])})


def _aux_names(table: Table, extra: set[str] = frozenset()) -> list[str]:
    """Check the ``id,x1..xk[,y]`` schema and return the aux column names."""
    xs = [h for h in table.header[1:] if re.fullmatch(r"x\d+", h)]
    expected = [f"x{j}" for j in range(1, len(xs) + 1)]
    others = [h for h in table.header[1:] if h not in xs and h != "y" and h not in extra]
    if not xs or xs != expected or others:
        want = ["id"] + (expected or ["x1"]) + ["[y]"]
        raise InputError(
            f"{table.path}:1: header mismatch: expected {','.join(want)}, got {','.join(table.header)}"
            + (f"; unexpected columns {others}" if others else "")
        )
    return xs


def read_population(path: str, extra: set[str] = frozenset()) -> tuple[Population, Table]:
    table = read_table(path)
    xs = _aux_names(table, extra)
    x = np.column_stack([table.columns[c] for c in xs])
    return Population(x=x, y=table.columns.get("y"), ids=table.ids), table


def parse_design_spec(spec: str) -> tuple[int, int] | None:
    """``uniform:N,n`` -> (N, n); any other value is treated as a CSV path."""
    if not spec.startswith("uniform:"):
        return None
    m = re.fullmatch(r"uniform:(\d+),(\d+)", spec.replace(" ", ""))
    if not m:
        raise InputError(f"--design {spec!r}: expected uniform:N,n")
    N, n = int(m.group(1)), int(m.group(2))
    if not 1 <= n <= N:
        raise InputError(f"--design {spec!r}: need 1 <= n <= N")
    return N, n


def read_design_table(path: str) -> Table:
    table = read_table(path, required=["pi"])
    if table.header != ["id", "pi"]:
        raise InputError(f"{path}:1: header mismatch: expected id,pi, got {','.join(table.header)}")
    for line, p in enumerate(table.columns["pi"], start=2):
        if not p > 0:
            raise InputError(f"{path}:{line}:2 (pi): π_i strictly positive is required, got {float(p)!r}")
        if p > 1:
            raise InputError(f"{path}:{line}:2 (pi): inclusion probability {float(p)!r} exceeds 1")
    return table


def build_sample(table: Table, aux_names: list[str], design: str, N: int | None) -> Sample:
    """Attach design weights to sample rows from ``uniform:N,n`` or an ``id,pi`` table."""
    n = len(table)
    uni = parse_design_spec(design)
    if uni is not None:
        Nd, nd = uni
        if nd != n:
            raise InputError(f"{table.path}: sample has {n} rows but the design has n={nd}")
        pi = np.full(n, nd / Nd)
        N = Nd if N is None else N
        if N != Nd:
            raise InputError(f"--N {N} conflicts with design N={Nd}")
    else:
        dt = read_design_table(design)
        lookup = dict(zip(dt.ids.tolist(), dt.columns["pi"].tolist()))
        missing = [int(i) for i in table.ids if int(i) not in lookup]
        if missing:
            raise InputError(f"{design}: no pi for sample ids {missing[:5]}")
        pi = np.array([lookup[int(i)] for i in table.ids])
        if N is None:
            N = len(dt)
    if N < n:
        raise InputError(f"population size N={N} is smaller than the sample size {n}")
    x = np.column_stack([table.columns[c] for c in aux_names])
    return Sample(
        indices=np.arange(n), d=1.0 / pi, x_s=x, y_s=table.columns.get("y"), N=int(N), ids=table.ids
    )


def parse_target(inline: str | None, path: str | None, k: int) -> np.ndarray:
    if inline is not None and path is not None:
        raise InputError("give the target either with --target or with --target-file, not both")
    if inline is None and path is None:
        raise InputError("a target is required (--target or --target-file)")
    if inline is not None:
        try:
            t = np.array([float(v) for v in inline.split(",")])
        except ValueError:
            raise InputError(f"--target {inline!r}: expected comma-separated numbers") from None
        source = "--target"
    else:
        t = _read_target_file(path)
        source = path
    if t.size != k or not np.all(np.isfinite(t)):
        raise InputError(
            f"{source}: dimension mismatch: target has {t.size} values but there are k={k} aux columns"
        )
    return t


def _read_target_file(path: str) -> np.ndarray:
    try:
        with open(path, newline="", encoding="utf-8") as fh:
            rows = [r for r in csv.reader(fh) if r and any(c.strip() for c in r)]
    except OSError as exc:
        raise InputError(f"{path}: cannot open ({exc.strerror})") from exc
    start = 0
    if rows:
        try:
            float(rows[0][0])
        except ValueError:
            start = 1
    body = rows[start:]
    if len(body) != 1:
        raise InputError(f"{path}: expected exactly one row of target values, found {len(body)}")
    out = []
    for col, cell in enumerate(body[0], start=1):
        try:
            out.append(float(cell))
        except ValueError:
            raise InputError(f"{path}:{start + 1}:{col}: not a number: {cell!r}") from None
    return np.array(out)


def parse_prior(spec: str) -> tuple[str, str | None]:
    name, _, qcol = spec.partition(":")
    name = name.strip().lower()
    if name not in ("gaussian", "exponential", "poisson"):
        raise InputError(f"--prior {spec!r}: expected gaussian[:q_column], exponential or poisson")
    if qcol and name != "gaussian":
        raise InputError(f"--prior {spec!r}: only the gaussian prior takes a q column")
    return name, (qcol or None)


# ---------------------------------------------------------------- output


def write_atomic(path: str | None, text: str) -> None:
    """Write to ``path`` via a temp file and rename, or to stdout when None/'-'."""
    if path in (None, "-"):
        sys.stdout.write(text)
        sys.stdout.flush()
        return
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(prefix=".memcal-", dir=directory)
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _json(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


def _diag(args, payload: dict) -> None:
    if getattr(args, "diag", False):
        sys.stderr.write(json.dumps(payload, sort_keys=True) + "\n")


# ---------------------------------------------------------------- shared setup


def _load_problem(args, extra: set[str] = frozenset()):
    table = read_table(args.sample)
    if args.aux:
        # expressions may reference any column
        extra = set(extra) | set(table.header[1:])
    xs = _aux_names(table, extra)
    sample = build_sample(table, xs, args.design, args.N)
    if args.aux:
        exprs = [e.strip() for e in args.aux.split(",") if e.strip()]
        aux = design_matrix(exprs, {c: table.columns[c] for c in table.header[1:]}, len(table))
    else:
        aux = sample.x_s
    target = parse_target(args.target, args.target_file, aux.shape[1])
    return table, sample, aux, target


def _options(args) -> SolverOptions:
    if args.max_iter < 1:
        raise InputError("--max-iter must be at least 1")
    if args.tol is not None and args.tol <= 0:
        raise InputError("--tol must be positive")
    if args.ridge < 0:
        raise InputError("--ridge must be non-negative")
    return SolverOptions(tol=args.tol, max_iter=args.max_iter, ridge=args.ridge)


def _q_values(table: Table, qcol: str | None):
    if qcol is None:
        return None
    if qcol not in table.columns:
        raise InputError(f"{table.path}:1: q column {qcol!r} not found in header {table.header}")
    q = table.columns[qcol]
    bad = np.flatnonzero(q <= 0)
    if bad.size:
        col = table.header.index(qcol) + 1
        raise InputError(f"{table.path}:{bad[0] + 2}:{col} ({qcol}): q must be positive")
    return q


def _solve(args):
    prior, qcol = parse_prior(args.prior)
    extra = {qcol} if qcol else set()
    table, sample, aux, target = _load_problem(args, extra)
    q = _q_values(table, qcol)
    sol = calibrate(sample, aux, target, prior, q=q, options=_options(args))
    return table, sample, sol, prior


# ---------------------------------------------------------------- subcommands


def cmd_calibrate(args) -> int:
    table, sample, sol, prior = _solve(args)
    lines = ["id,d,w,pi_w"]
    for i, d, w in zip(sample.ids, sample.d, sol.weights):
        lines.append(f"{int(i)},{_fmt(d)},{_fmt(w)},{_fmt(w / d)}")
    write_atomic(args.out, "\n".join(lines) + "\n")
    diag = sol.diagnostics()
    diag["prior"] = prior
    if sol.estimate is not None:
        diag["estimate"] = sol.estimate
    _diag(args, diag)
    return EXIT_OK


def cmd_estimate(args) -> int:
    if args.method == "mem":
        table, sample, sol, prior = _solve(args)
        if sample.y_s is None:
            raise InputError(f"{args.sample}: a y column is required for estimation")
        out = {"method": f"mem:{prior}", "estimate": sol.estimate, **sol.diagnostics()}
    else:
        table, sample, aux, target = _load_problem(args)
        if sample.y_s is None:
            raise InputError(f"{args.sample}: a y column is required for estimation")
        if args.method == "ht":
            out = {"method": "ht", "estimate": sample.ht_mean(sample.y_s)}
        else:
            est, B = greg_closed_form(sample, aux, target)
            out = {"method": "greg", "estimate": est, "B": [float(b) for b in B]}
    out["ht_estimate"] = sample.ht_mean(sample.y_s)
    write_atomic(args.out, _json(out))
    _diag(args, {"n": sample.n, "N": sample.N})
    return EXIT_OK


def cmd_instruments(args) -> int:
    qcol = args.q_column
    table, sample, aux, target = _load_problem(args, {qcol} if qcol else set())
    if sample.y_s is None:
        raise InputError(f"{args.sample}: a y column is required")
    kind = args.instruments
    if kind == "x":
        z = InstrumentSpec(aux, label="x")
    elif kind == "qx":
        q = _q_values(table, qcol)
        z = InstrumentSpec(aux * (1.0 if q is None else q[:, None]), label="qx")
    elif kind == "optimal-uniform":
        z = optimal_instruments_uniform(aux, target, sample.N, sample.n)
    elif kind.startswith("csv:"):
        path = kind[4:]
        zt = read_table(path)
        names = [f"z{j}" for j in range(1, len(zt.header))]
        if zt.header[1:] != names:
            raise InputError(f"{path}:1: header mismatch: expected id,z1,...,zk, got {','.join(zt.header)}")
        lookup = {int(i): r for r, i in enumerate(zt.ids)}
        missing = [int(i) for i in sample.ids if int(i) not in lookup]
        if missing:
            raise InputError(f"{path}: no instruments for sample ids {missing[:5]}")
        rows = [lookup[int(i)] for i in sample.ids]
        z = InstrumentSpec(np.column_stack([zt.columns[c][rows] for c in names]), label="csv")
    else:
        raise InputError(f"--instruments {kind!r}: expected x, qx, optimal-uniform or csv:<path>")
    if z.z.shape[1] != aux.shape[1]:
        raise InputError(
            f"dimension mismatch: {z.z.shape[1]} instrument columns for k={aux.shape[1]} aux columns"
        )
    est, B, w = instrument_estimate(sample, aux, None, z, target)
    out = {
        "instruments": z.label,
        "estimate": est,
        "B": [float(b) for b in B],
        "ht_estimate": sample.ht_mean(sample.y_s),
        "weights": {str(int(i)): float(v) for i, v in zip(sample.ids, w)},
    }
    write_atomic(args.out, _json(out))
    _diag(args, {"negative_weights": bool(np.any(w < 0))})
    return EXIT_OK


def cmd_efficiency(args) -> int:
    pop, table = read_population(args.population)
    if pop.y is None:
        raise InputError(f"{args.population}: a y column is required")
    uni = parse_design_spec(args.design)
    if uni is None:
        raise InputError(f"--design {args.design!r}: efficiency supports uniform:N,n only")
    if uni[0] != pop.N:
        raise InputError(f"--design N={uni[0]} does not match population size {pop.N}")
    exprs = [e.strip() for e in args.u.split(",") if e.strip()]
    u = design_matrix(exprs, {c: table.columns[c] for c in table.header[1:] if c != "y"}, pop.N)
    rep = efficiency_report(pop, make_uniform_design(*uni), u)
    out = {"u": exprs, **rep.to_dict()}
    write_atomic(args.out, _json(out))
    return EXIT_OK


def cmd_amem(args) -> int:
    m = re.fullmatch(r"monomial:(\d+)", args.basis)
    if not m or int(m.group(1)) < 1:
        raise InputError(f"--basis {args.basis!r}: expected monomial:<m> with m >= 1")
    pop, ptable = read_population(args.population)
    stable = read_table(args.sample)
    xs = _aux_names(stable)
    if args.column not in xs or args.column not in ptable.columns:
        raise InputError(f"--column {args.column!r} must name an x column of both files")
    if "y" not in stable.columns:
        raise InputError(f"{args.sample}: a y column is required")
    design = args.design or f"uniform:{pop.N},{len(stable)}"
    sample = build_sample(stable, [args.column], design, pop.N)
    pop_x = ptable.columns[args.column]
    basis = monomial_basis(int(m.group(1)), domain=(float(pop_x.min()), float(pop_x.max())))
    proj = fit_projection(sample, basis)
    est, diag = amem_estimate(proj, pop_x, sample)
    out = {
        "estimate": est,
        "b_phi": diag["b_phi"],
        "identity_gap": diag["identity_gap"],
        "b_self": diag["b_self"],
        "population_form": diag["population_form"],
        "scalar_form": diag["scalar_form"],
    }
    write_atomic(args.out, _json(out))
    _diag(args, {"basis": args.basis, "domain": list(basis.domain)})
    return EXIT_OK


def _resolve_seed(args, default: int) -> int:
    if args.seed is not None:
        return args.seed
    env = os.environ.get(SEED_ENV)
    if env:
        try:
            return int(env)
        except ValueError:
            raise InputError(f"{SEED_ENV}={env!r} is not an integer") from None
    return default


def cmd_simulate(args) -> int:
    data = {}
    if args.config:
        try:
            with open(args.config, encoding="utf-8") as fh:
                data = json.load(fh)
        except OSError as exc:
            raise InputError(f"{args.config}: cannot open ({exc.strerror})") from exc
        except json.JSONDecodeError as exc:
            raise InputError(f"{args.config}:{exc.lineno}:{exc.colno}: invalid JSON ({exc.msg})") from None
        if not isinstance(data, dict):
            raise InputError(f"{args.config}: expected a JSON object")
    for key in ("N", "n", "sigma2", "reps", "m", "workers"):
        v = getattr(args, key)
        if v is not None:
            data[key] = v
    if args.fresh_population:
        data["fresh_population"] = True
    data["seed"] = _resolve_seed(args, data.get("seed", SimConfig.seed))
    try:
        config = SimConfig.from_dict(data)
    except (TypeError, ValueError) as exc:
        raise InputError(f"invalid simulation config: {exc}") from None
    report = run_replications(config)
    write_atomic(args.out, report_table(report, args.format))
    _diag(
        args,
        {
            "seed": report.seed,
            "amem_identity_gap": report.amem_identity_gap,
            "amem_b_self_gap": report.amem_b_self_gap,
            "failures": {r.estimator: r.failures for r in report.rows},
        },
    )
    return EXIT_OK


def _read_support(path: str, N: int) -> SamplingDesign:
    try:
        with open(path, newline="", encoding="utf-8") as fh:
            rows = list(csv.reader(fh))
    except OSError as exc:
        raise InputError(f"{path}: cannot open ({exc.strerror})") from exc
    if not rows or [h.strip() for h in rows[0]] != ["sample", "p"]:
        raise InputError(f"{path}:1: header mismatch: expected sample,p")
    support = {}
    for line, row in enumerate(rows[1:], start=2):
        if not row:
            continue
        if len(row) != 2:
            raise InputError(f"{path}:{line}: expected 2 fields, found {len(row)}")
        try:
            units = tuple(int(u) - 1 for u in row[0].split())
        except ValueError:
            raise InputError(f"{path}:{line}:1 (sample): expected space-separated unit ids") from None
        if any(not 0 <= u < N for u in units):
            raise InputError(f"{path}:{line}:1 (sample): unit ids must lie in 1..{N}")
        try:
            support[units] = float(row[1])
        except ValueError:
            raise InputError(f"{path}:{line}:2 (p): not a number: {row[1]!r}") from None
    try:
        return design_from_support(N, support)
    except ValueError as exc:
        raise InputError(f"{path}: {exc}") from None


def cmd_oracle_design(args) -> int:
    if (args.design is None) == (args.support is None):
        raise InputError("give exactly one of --design uniform:N,n or --support <csv>")
    if args.design is not None:
        uni = parse_design_spec(args.design)
        if uni is None:
            raise InputError(f"--design {args.design!r}: expected uniform:N,n")
        design = make_uniform_design(*uni)
    else:
        if args.N is None:
            raise InputError("--support requires --N")
        design = _read_support(args.support, args.N)
    samples = enumerate_design(design)
    pi_hat, joint = inclusion_from_enumeration(samples, design.N)
    d = 1.0 / design.pi
    delta = joint * np.outer(d, d) - 1.0
    out = {
        "N": design.N,
        "n": design.n,
        "samples": len(samples),
        "total_probability": float(sum(p for _, p in samples)),
        "max_pi_error": float(np.max(np.abs(pi_hat - design.pi))),
        "sum_delta": float(delta.sum()),
        "scaled_delta_trace": float(design.n * np.trace(delta) / design.N**2),
        "one_minus_sampling_fraction": 1.0 - design.n / design.N,
    }
    if design.kind.name == "UNIFORM_SRSWOR":
        diag, off = uniform_delta_values(design.N, design.n)
        out["delta_ii"], out["delta_ij"] = diag, off
    if args.population:
        pop, _ = read_population(args.population)
        if pop.N != design.N:
            raise InputError(f"{args.population}: population has {pop.N} units, design N={design.N}")
        if pop.y is not None:
            expected = sum(p * float(d[list(s)] @ pop.y[list(s)]) / design.N for s, p in samples)
            out["ht_expectation"] = expected
            out["population_mean"] = pop.mean_y()
            out["ht_bias"] = expected - pop.mean_y()
    write_atomic(args.out, _json(out))
    return EXIT_OK


# ---------------------------------------------------------------- parser


def _sample_args(p: argparse.ArgumentParser, target: bool = True) -> None:
    p.add_argument("--sample", required=True, help="sample CSV with header id,x1,...,xk[,y]")
    p.add_argument(
        "--design",
        required=True,
        help="uniform:N,n for simple random sampling, or a design CSV with header id,pi",
    )
    p.add_argument("--N", type=int, help="population size (default: from the design)")
    p.add_argument("--aux", help="comma-separated aux expressions over sample columns, e.g. '1,x1,exp(x2)'")
    if target:
        p.add_argument("--target", help="population means t_x inline, e.g. 1.25,0.5")
        p.add_argument("--target-file", help="one-row CSV of population means t_x")


def _solver_args(p: argparse.ArgumentParser) -> None:
    p.add_argument(
        "--prior",
        default="gaussian",
        help="gaussian[:q_column] | exponential | poisson (default gaussian)",
    )
    p.add_argument("--tol", type=float, help="gradient tolerance (default 1e-10 * max(1, |t_x|))")
    p.add_argument("--max-iter", type=int, default=100, help="maximum Newton iterations (default 100)")
    p.add_argument("--ridge", type=float, default=1e-12, help="initial Hessian ridge on Cholesky failure")


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--out", help="output file (written atomically); default stdout")
    p.add_argument("--diag", action="store_true", help="emit JSON diagnostics on stderr")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="memcal", description="Survey calibration by maximum entropy on the mean."
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, metavar="SUBCOMMAND")

    p = sub.add_parser("calibrate", help="solve for calibrated weights (CSV id,d,w,pi_w)")
    _sample_args(p)
    _solver_args(p)
    _common(p)
    p.set_defaults(func=cmd_calibrate)

    p = sub.add_parser("estimate", help="estimate the mean of y (JSON)")
    _sample_args(p)
    _solver_args(p)
    p.add_argument("--method", choices=("mem", "greg", "ht"), default="mem", help="estimator (default mem)")
    _common(p)
    p.set_defaults(func=cmd_estimate)

    p = sub.add_parser("instruments", help="closed-form instrument estimator (JSON)")
    _sample_args(p)
    p.add_argument(
        "--instruments",
        default="x",
        help="x | qx | optimal-uniform | csv:<path> (CSV header id,z1,...,zk); default x",
    )
    p.add_argument("--q-column", help="sample column holding q_i for --instruments qx")
    _common(p)
    p.set_defaults(func=cmd_instruments)

    p = sub.add_parser("efficiency", help="variance bound V*(u) and linearised risk (JSON)")
    p.add_argument("--population", required=True, help="population CSV with header id,x1,...,xk,y")
    p.add_argument("--u", required=True, help="constraint functions: comma-separated columns or expressions")
    p.add_argument("--design", required=True, help="uniform:N,n")
    _common(p)
    p.set_defaults(func=cmd_efficiency)

    p = sub.add_parser("amem", help="approximate MEM estimate on a monomial basis (JSON)")
    p.add_argument("--population", required=True, help="population CSV with header id,x1,...,xk[,y]")
    p.add_argument("--sample", required=True, help="sample CSV with header id,x1,...,xk,y")
    p.add_argument("--basis", default="monomial:6", help="monomial:<m> (default monomial:6)")
    p.add_argument("--column", default="x1", help="auxiliary column the basis acts on (default x1)")
    p.add_argument("--design", help="uniform:N,n or design CSV id,pi (default uniform over the population)")
    _common(p)
    p.set_defaults(func=cmd_amem)

    p = sub.add_parser("simulate", help="Monte Carlo variance table for the six estimators")
    p.add_argument("--config", help="JSON file with SimConfig fields")
    p.add_argument("--seed", type=int, help=f"master seed (overrides ${SEED_ENV} and the config)")
    p.add_argument("--reps", type=int, help="number of replications")
    p.add_argument("--sigma2", type=float, help="noise variance")
    p.add_argument("--N", type=int, help="population size")
    p.add_argument("--n", type=int, help="sample size")
    p.add_argument("--m", type=int, help="AMEM basis size")
    p.add_argument("--workers", type=int, help="worker processes (results do not depend on it)")
    p.add_argument("--fresh-population", action="store_true", help="redraw the population every replication")
    p.add_argument("--format", choices=("text", "json", "csv"), default="text", help="output format")
    _common(p)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("oracle-design", help="exhaustive enumeration checks for a tiny design (JSON)")
    p.add_argument("--design", help="uniform:N,n")
    p.add_argument("--support", help="CSV with header sample,p; sample = space-separated unit ids")
    p.add_argument("--N", type=int, help="population size for --support")
    p.add_argument("--population", help="population CSV; with y, HT unbiasedness is checked")
    _common(p)
    p.set_defaults(func=cmd_oracle_design)
    return parser


def _error(kind: str, message: str, extra: dict | None = None) -> None:
    sys.stderr.write(f"memcal: {kind}: {message}\n")
    if extra is not None:
        sys.stderr.write(json.dumps(extra, sort_keys=True) + "\n")


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except InfeasibleError as exc:
        report = exc.report.to_dict() if exc.report is not None else None
        _error("infeasible", str(exc), {"feasibility": report})
        return EXIT_INFEASIBLE
    except (SolverError, SingularityError) as exc:
        _error("solver failure", str(exc))
        return EXIT_SOLVER
    except (InputError, ExpressionError) as exc:
        _error("input error", str(exc))
        return EXIT_INPUT
    except (MemcalError, ValueError) as exc:
        _error("input error", str(exc))
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
