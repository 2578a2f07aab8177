"""Command-line driver: ``run``, ``compare`` and ``mesh-info``.

Exit status: 0 on success, 2 for invalid input, 1 when a solve fails.
"""
import argparse
import csv
import logging
import math
import os
import sys
from dataclasses import dataclass, fields
from typing import Optional

import numpy as np

from .assembly import SolveError
from .estimator import adapt_loop, uniform_loop
from .mesh import uniform_refine, write_mesh
from .problems import PROBLEMS, SPACES, convergence_table, cook_reference, get_problem


CSV_COLUMNS = ("level", "triangles", "stress_dofs", "total_dofs", "eta", "osc_f", "osc_g",
               "error_A", "error_Hdiv", "error_u", "effectivity")
ORDER_KEYS = ("error_A", "error_Hdiv", "error_u", "eta")
MODES = ("uniform", "adaptive")


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    problem: str = "lshape"
    space: Optional[str] = None  # problem default when None
    mode: str = "uniform"
    levels: int = 4
    start_level: int = 1
    max_dofs: Optional[int] = None
    theta: float = 0.5
    quad_degree: int = 8
    threads: int = 1
    out: str = "results"
    dump_meshes: bool = False
    reference: Optional[str] = None

    def validate(self):
        if self.problem not in PROBLEMS:
            raise ConfigError(f"unknown problem {self.problem!r}; choose from {', '.join(PROBLEMS)}")
        if self.space is not None and self.space not in SPACES:
            raise ConfigError(f"unknown space {self.space!r}; choose from {', '.join(SPACES)}")
        if self.mode not in MODES:
            raise ConfigError(f"unknown mode {self.mode!r}; choose from {', '.join(MODES)}")
        if self.levels < 1:
            raise ConfigError(f"--levels must be at least 1, got {self.levels}")
        if self.start_level < 0:
            raise ConfigError(f"--start-level must be non-negative, got {self.start_level}")
        if not 0.0 < self.theta < 1.0:
            raise ConfigError(f"--theta must lie in (0, 1), got {self.theta}")
        if self.max_dofs is not None and self.max_dofs < 1:
            raise ConfigError(f"--max-dofs must be positive, got {self.max_dofs}")
        if not 6 <= self.quad_degree <= 20:
            raise ConfigError(f"--quad-degree must lie in [6, 20], got {self.quad_degree}")
        if self.threads < 1:
            raise ConfigError(f"--threads must be at least 1, got {self.threads}")
        return self


_TYPES = {f.name: f.type for f in fields(RunConfig)}


def _convert(key, value):
    kind = _TYPES[key]
    try:
        if kind in (int, "int", Optional[int]):
            return None if str(value).lower() == "none" else int(value)
        if kind in (float, "float"):
            return float(value)
        if kind in (bool, "bool"):
            v = str(value).strip().lower()
            if v not in ("1", "0", "true", "false", "yes", "no"):
                raise ValueError(value)
            return v in ("1", "true", "yes")
    except ValueError:
        raise ConfigError(f"invalid value {value!r} for {key}") from None
    return None if str(value).lower() == "none" else str(value)


def read_config(path):
    """``key = value`` lines; ``#`` starts a comment; keys use ``-`` or ``_``."""
    out = {}
    with open(path) as fh:
        for num, raw in enumerate(fh, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{num}: expected 'key = value'")
            key, value = (s.strip() for s in line.split("=", 1))
            key = key.replace("-", "_")
            if key not in _TYPES:
                raise ConfigError(f"{path}:{num}: unknown key {key!r}")
            out[key] = _convert(key, value)
    return out


def make_config(args, explicit):
    """Defaults, then the config file, then flags given on the command line."""
    values = {}
    if args.config:
        values.update(read_config(args.config))
    for key in explicit:
        values[key] = getattr(args, key)
    cfg = RunConfig(**values)
    env = os.environ.get("NESTED_HZ_OUT")
    if env:
        cfg.out = env
    if cfg.mode == "uniform" and ("max_dofs" in values or "theta" in values):
        raise ConfigError("--max-dofs and --theta only apply to --mode adaptive")
    if cfg.mode == "adaptive" and "start_level" in values:
        raise ConfigError("--start-level only applies to --mode uniform")
    return cfg.validate()


# --------------------------------------------------------------------------
# output

def _fmt(v):
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    v = float(v)
    return "nan" if math.isnan(v) else f"{v:.12e}"


def write_csv(rows, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_COLUMNS)
        for r in rows:
            w.writerow([_fmt(r[c]) for c in CSV_COLUMNS])


def read_csv(path):
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        head = next(reader, None)
        if head is None or tuple(head) != CSV_COLUMNS:
            raise ConfigError(f"{path}: columns do not match the level-table schema")
        rows = []
        for line in reader:
            if len(line) != len(CSV_COLUMNS):
                raise ConfigError(f"{path}: malformed row {line}")
            r = {}
            for c, v in zip(CSV_COLUMNS, line):
                r[c] = int(v) if c in ("level", "triangles", "stress_dofs", "total_dofs") else float(v)
            rows.append(r)
    return rows


def summary_table(rows, adaptive=False, title=""):
    """Level table with observed orders (log2 ratios, or against DOFs for
    adaptive runs)."""
    if len(rows) > 1:
        rows = convergence_table(rows, ORDER_KEYS, adaptive)
    head = ["level", "|T|", "dofs", "error_A", "order", "error_Hdiv", "order", "error_u", "order",
            "eta", "order"]
    lines = [title] if title else []
    if adaptive:
        lines.append("orders measured against total DOF counts")
    lines.append(" ".join(f"{h:>11}" for h in head))

    def num(v, order=False):
        if v is None or (isinstance(v, float) and math.isnan(v)):
            return f"{'-':>11}"
        return f"{v:>11.4f}" if order else f"{v:>11.4e}"

    for r in rows:
        cells = [f"{r['level']:>11d}", f"{r['triangles']:>11d}", f"{r['total_dofs']:>11d}"]
        for k in ORDER_KEYS:
            cells += [num(r[k]), num(r.get(f"order_{k}"), True)]
        lines.append(" ".join(cells))
    return "\n".join(lines) + "\n"


def _stem(cfg):
    return os.path.join(cfg.out, f"{cfg.problem}_{cfg.space}_{cfg.mode}")


def run(cfg: RunConfig):
    """Execute one study and write ``<stem>.csv`` and ``<stem>_summary.txt``."""
    kw = {}
    if cfg.problem == "cook":
        kw["reference"] = cook_reference(cfg.reference) if cfg.reference or _shipped_reference() else None
    problem = get_problem(cfg.problem, **kw)
    if cfg.space is None:
        cfg.space = problem.default_space
    problem.space_kind(cfg.space, problem.initial_mesh())  # reject unsupported spaces early
    if cfg.mode == "uniform":
        results = uniform_loop(problem, cfg.space, cfg.start_level + cfg.levels - 1, first=cfg.start_level,
                               quad_degree=cfg.quad_degree, threads=cfg.threads)
    else:
        results = adapt_loop(problem, cfg.space, theta=cfg.theta, max_levels=cfg.levels,
                             max_dofs=cfg.max_dofs, quad_degree=cfg.quad_degree, threads=cfg.threads)
    os.makedirs(cfg.out, exist_ok=True)
    stem = _stem(cfg)
    rows = [r.row() for r in results]
    write_csv(rows, f"{stem}.csv")
    title = f"{cfg.problem}, space {cfg.space}, {cfg.mode} refinement"
    text = summary_table(rows, cfg.mode == "adaptive", title)
    with open(f"{stem}_summary.txt", "w") as fh:
        fh.write(text)
    if cfg.dump_meshes:
        for r in results:
            write_mesh(r.mesh, f"{stem}_level{r.level}.mesh")
    return results, text


def _shipped_reference():
    from .problems import COOK_REFERENCE

    return os.path.exists(f"{COOK_REFERENCE}.mesh")


def compare(path_a, path_b, out=None):
    """Rows of both runs aligned by level, with b / a ratios and the
    log10 data of the convergence-history plots."""
    a, b = read_csv(path_a), read_csv(path_b)
    by_level = {r["level"]: r for r in b}
    rows = []
    for ra in a:
        rb = by_level.get(ra["level"])
        if rb is None:
            continue
        row = {"level": ra["level"], "dofs_a": ra["total_dofs"], "dofs_b": rb["total_dofs"]}
        for k in ("eta", "error_A", "error_Hdiv", "error_u"):
            row[f"{k}_a"], row[f"{k}_b"] = ra[k], rb[k]
            row[f"ratio_{k}"] = rb[k] / ra[k] if ra[k] != 0 else (1.0 if rb[k] == 0 else math.inf)
        for tag, r in (("a", ra), ("b", rb)):
            row[f"log_dofs_{tag}"] = math.log10(r["total_dofs"])
            row[f"log_eta_{tag}"] = math.log10(r["eta"]) if r["eta"] > 0 else math.nan
            row[f"log_error_A_{tag}"] = math.log10(r["error_A"]) if r["error_A"] > 0 else math.nan
        rows.append(row)
    if not rows:
        raise ConfigError("the two runs share no level")
    if out:
        with open(out, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(list(rows[0]))
            for r in rows:
                w.writerow([_fmt(v) for v in r.values()])
    head = ["level", "dofs_a", "dofs_b", "eta b/a", "error_A b/a", "error_Hdiv b/a", "error_u b/a"]
    lines = [" ".join(f"{h:>14}" for h in head)]
    for r in rows:
        cells = [f"{r['level']:>14d}", f"{r['dofs_a']:>14d}", f"{r['dofs_b']:>14d}"]
        cells += [f"{r[f'ratio_{k}']:>14.4f}" for k in ("eta", "error_A", "error_Hdiv", "error_u")]
        lines.append(" ".join(cells))
    return rows, "\n".join(lines) + "\n"


def mesh_info(problem_name, level=0):
    problem = get_problem(problem_name)
    mesh = uniform_refine(problem.initial_mesh(), level) if level else problem.initial_mesh()
    markers, counts = np.unique(mesh.boundary_markers, return_counts=True)
    lines = [
        f"problem      {problem_name} (level {level})",
        f"vertices     {mesh.n_vertices}",
        f"triangles    {mesh.n_triangles}",
        f"edges        {len(mesh.edges)}",
        "boundary     " + ", ".join(f"{'D' if m > 0 else 'N'}{abs(int(m))}: {c}" for m, c in zip(markers, counts)),
        f"h range      {mesh.h.min():.4e} .. {mesh.h.max():.4e}",
        f"min angle    {np.degrees(mesh.min_angle()):.2f} deg",
        f"corners      {', '.join(str(tuple(float(v) for v in problem.points[c])) for c in problem.corners) or 'none'}",
        f"default      {problem.default_space}",
    ]
    return "\n".join(lines) + "\n"


# --------------------------------------------------------------------------
# argument parsing

def build_parser():
    p = argparse.ArgumentParser(prog="nestedhz", description="Nested Hu-Zhang mixed elements for elasticity")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="uniform or adaptive convergence study", argument_default=argparse.SUPPRESS)
    r.add_argument("--config", default=None, help="text file with 'key = value' lines; flags win")
    r.add_argument("--problem", choices=sorted(PROBLEMS))
    r.add_argument("--space", choices=SPACES)
    r.add_argument("--mode", choices=MODES)
    r.add_argument("--levels", type=int, help="number of levels (rows)")
    r.add_argument("--start-level", dest="start_level", type=int,
                   help="uniform mode: refinements of the initial mesh on the first row (default 1)")
    r.add_argument("--max-dofs", dest="max_dofs", type=int, help="adaptive mode: stress DOF budget")
    r.add_argument("--theta", type=float, help="adaptive mode: bulk parameter")
    r.add_argument("--quad-degree", dest="quad_degree", type=int)
    r.add_argument("--threads", type=int)
    r.add_argument("--out", help="output directory (NESTED_HZ_OUT overrides)")
    r.add_argument("--dump-meshes", dest="dump_meshes", action="store_true")
    r.add_argument("--reference", help="Cook reference file stem (<stem>.mesh, <stem>.field.gz)")

    c = sub.add_parser("compare", help="align two run CSVs by level")
    c.add_argument("run_a")
    c.add_argument("run_b")
    c.add_argument("--out", default=None, help="write the aligned table as CSV")

    m = sub.add_parser("mesh-info", help="statistics of a problem mesh")
    m.add_argument("--problem", required=True, choices=sorted(PROBLEMS))
    m.add_argument("--level", type=int, default=0)

    for s in (r, c, m):
        s.add_argument("-v", "--verbose", action="store_true", default=False)
    return p


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        if args.command == "run":
            explicit = [k for k in vars(args) if k in _TYPES]
            if not hasattr(args, "config"):
                args.config = None
            cfg = make_config(args, explicit)
            _, text = run(cfg)
            sys.stdout.write(text)
            sys.stdout.write(f"wrote {_stem(cfg)}.csv\n")
        elif args.command == "compare":
            _, text = compare(args.run_a, args.run_b, args.out)
            sys.stdout.write(text)
        else:
            sys.stdout.write(mesh_info(args.problem, args.level))
    except (ConfigError, ValueError, FileNotFoundError) as err:
        sys.stderr.write(f"error: {err}\n")
        return 2
    except SolveError as err:
        sys.stderr.write(f"solver failure: {err}\n")
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
