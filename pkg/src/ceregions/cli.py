"""Command-line interface: compute, example, verify, truncate.

Exit codes: 0 success, 2 input error, 3 infeasible problem, 4 verification
failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .dp import (
    PCollection,
    brute_force_dp,
    ce_backup,
    compute_ce_region,
    terminal_collection,
)
from .errors import (
    CERegionsError,
    EmptySetError,
    GridTooCoarseError,
    InfeasibleProblemError,
    MalformedInputError,
    NotCoveredError,
    SchemaError,
    VerificationError,
)
from .examples import EXAMPLE_NAMES, example_file
from .geometry import bounding_box, polygon_area, polytopes_equal, vertices_2d
from .problem_io import parse_problem, write_problem
from .solvers import solve_qp
from .symmetry import close_group, reconstruct_collection, symmetric_ce_region
from .truncation import DisturbanceSpec, per_stage_mass, truncate_disturbance

log = logging.getLogger(__name__)

COVERAGE_SAMPLES = 100_000
COVERAGE_SEED = 0


@dataclass
class RunReport:
    """Summary of one region computation, exported as report.json."""

    name: str
    symmetric: bool
    horizon: int
    state_dim: int
    input_dim: int
    mpqp_solves: int
    stage_counts: list           # [{"t", "total", "passed", "failed"}]
    p0_regions: int
    coverage: float
    timings: dict
    representative_counts: list = None
    warnings: list = field(default_factory=list)

    def to_dict(self) -> dict:
        d = {
            "name": self.name,
            "symmetric": self.symmetric,
            "horizon": self.horizon,
            "state_dim": self.state_dim,
            "input_dim": self.input_dim,
            "mpqp_solves": self.mpqp_solves,
            "stage_counts": self.stage_counts,
            "p0_regions": self.p0_regions,
            "coverage": self.coverage,
            "timings": self.timings,
            "warnings": list(self.warnings),
        }
        if self.representative_counts is not None:
            d["representative_counts"] = self.representative_counts
        return d


def coverage_fraction(spec, p0: PCollection, seed: int = COVERAGE_SEED,
                      samples: int = COVERAGE_SAMPLES) -> float:
    """Fraction of the stage-0 constraint set covered by the collection.

    Exact in one and two dimensions (interval lengths / polygon areas via
    the vertex walk); Monte Carlo with a fixed seed above that.
    """
    X0 = spec.X[0]
    if len(p0) == 0:
        return 0.0
    if spec.n == 1:
        lo0, hi0 = bounding_box(X0)
        total = float(hi0[0] - lo0[0])
        covered = 0.0
        for cr in p0:
            lo, hi = bounding_box(cr.region)
            covered += max(0.0, float(hi[0] - lo[0]))
        return min(1.0, covered / total)
    if spec.n == 2:
        total = polygon_area(vertices_2d(X0))
        covered = 0.0
        for cr in p0:
            try:
                covered += polygon_area(vertices_2d(cr.region))
            except CERegionsError:
                continue
        return min(1.0, covered / total)
    rng = np.random.default_rng(seed)
    lo, hi = bounding_box(X0)
    pts = rng.uniform(lo, hi, size=(samples, spec.n))
    in_x0 = X0.contains_batch(pts)
    pts = pts[in_x0]
    if pts.shape[0] == 0:
        return 0.0
    hit = np.zeros(pts.shape[0], dtype=bool)
    for cr in p0:
        hit |= cr.region.contains_batch(pts)
        if hit.all():
            break
    return float(hit.mean())


def _counts_from_audit(audit) -> list:
    out = []
    for t, recs in enumerate(audit):
        total = len(recs)
        passed = sum(1 for r in recs if r["passed"])
        out.append({"t": t, "total": total, "passed": passed,
                    "failed": total - passed})
    return out


def _flatten_audit(audit) -> list:
    return [rec for recs in audit for rec in recs]


def run_compute(pf, symmetric: bool = False, jobs: int = 1):
    """Run the backward sweep and assemble the report; returns (result, report)."""
    spec = pf.spec
    t0 = time.perf_counter()
    if symmetric:
        if not pf.generators:
            raise MalformedInputError(
                "--symmetric requires symmetry.generators in the problem file")
        group = close_group(pf.generators)
        result = symmetric_ce_region(spec, group, jobs=jobs)
        p0 = result.p0_full
        rep_counts = [len(st) for st in result.rep_stages]
    else:
        result = compute_ce_region(spec, jobs=jobs)
        p0 = result.p0
        rep_counts = None
    t1 = time.perf_counter()
    coverage = coverage_fraction(spec, p0)
    t2 = time.perf_counter()
    report = RunReport(
        name=pf.name or "problem",
        symmetric=symmetric,
        horizon=spec.N,
        state_dim=spec.n,
        input_dim=spec.p,
        mpqp_solves=result.mpqp_solves,
        stage_counts=_counts_from_audit(result.audit),
        p0_regions=len(p0),
        coverage=coverage,
        timings={"compute_s": round(t1 - t0, 6),
                 "report_s": round(t2 - t1, 6),
                 "total_s": round(t2 - t0, 6)},
        representative_counts=rep_counts,
        warnings=list(result.warnings),
    )
    return result, report


def export_results(out_dir, spec, result, report, symmetric: bool) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    if symmetric:
        group = result.group
        stages = [reconstruct_collection(st, group) for st in result.rep_stages]
        p0 = result.p0_full
        regions = {
            "symmetric": True,
            "mpqp_solves": result.mpqp_solves,
            "stages": [st.to_dict() for st in stages],
            "representative_stages": [st.to_dict() for st in result.rep_stages],
            "audit": _flatten_audit(result.audit),
            "warnings": list(result.warnings),
        }
    else:
        p0 = result.p0
        regions = {
            "symmetric": False,
            "mpqp_solves": result.mpqp_solves,
            "stages": [st.to_dict() for st in result.stages],
            "audit": _flatten_audit(result.audit),
            "warnings": list(result.warnings),
        }
    (out / "regions.json").write_text(json.dumps(regions) + "\n")
    (out / "p0.json").write_text(json.dumps(p0.to_dict()) + "\n")
    (out / "report.json").write_text(
        json.dumps(report.to_dict(), indent=2) + "\n")
    if spec.n == 2:
        with (out / "p0_polygons.csv").open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["region", "vertex", "x1", "x2"])
            for i, cr in enumerate(p0):
                try:
                    verts = vertices_2d(cr.region)
                except CERegionsError:
                    continue
                for j, v in enumerate(verts):
                    w.writerow([i, j, repr(float(v[0])), repr(float(v[1]))])


def cmd_compute(args) -> int:
    pf = parse_problem(args.file)
    jobs = args.jobs if args.jobs else int(pf.options.get("jobs", 1))
    result, report = run_compute(pf, symmetric=args.symmetric, jobs=jobs)
    p0_len = report.p0_regions
    if args.export:
        export_results(args.export, pf.spec, result, report, args.symmetric)
    print(f"{report.name}: horizon {report.horizon}, "
          f"{'symmetric' if report.symmetric else 'plain'} sweep")
    print(f"  mpQP solves: {report.mpqp_solves}")
    for sc in report.stage_counts:
        line = (f"  stage {sc['t']}: {sc['total']} candidates, "
                f"{sc['passed']} passed, {sc['failed']} failed")
        if report.representative_counts is not None:
            line += f", {report.representative_counts[sc['t']]} representatives"
        print(line)
    print(f"  stage-0 regions: {p0_len}")
    print(f"  coverage of X_0: {report.coverage:.4f}")
    print(f"  compute time: {report.timings['compute_s']:.2f} s")
    for wmsg in report.warnings:
        print(f"  warning: {wmsg}")
    if p0_len == 0:
        print("no region was certified; the problem is infeasible or the "
              "disturbance erodes every stage", file=sys.stderr)
        return 3
    return 0


def cmd_example(args) -> int:
    params = {}
    if args.name == "battery" and args.n:
        params["n"] = args.n
    if args.horizon:
        params["horizon"] = args.horizon
    if args.name == "slab":
        if args.window:
            params["window"] = args.window
        if args.rho is not None:
            params["rho"] = args.rho
    try:
        data = example_file(args.name, **params)
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    out = args.out or f"{args.name}.json"
    write_problem(data, out)
    print(f"wrote {out}")
    return 0


def _sample_states(spec, count, rng):
    """Uniform samples from X_0 by rejection from its bounding box."""
    X0 = spec.X[0]
    lo, hi = bounding_box(X0)
    out = []
    for _ in range(200):
        pts = rng.uniform(lo, hi, size=(max(4 * count, 64), spec.n))
        keep = pts[X0.contains_batch(pts)]
        out.extend(keep)
        if len(out) >= count:
            break
    return np.asarray(out[:count])


def _symmetric_atoms(spec, m):
    """Per-axis symmetric atom grid on D preserving the (stage-0) mean."""
    lo, hi = bounding_box(spec.D[0])
    mu = spec.mean[0]
    axes = [mu[i] + (hi[i] - mu[i]) * np.linspace(-1.0, 1.0, m)
            for i in range(spec.nd)]
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.column_stack([g.ravel() for g in mesh])


def _verify_oracle(spec, p0, args):
    for t in range(spec.N):
        if not polytopes_equal(spec.D[t], spec.D[0]) or \
                np.max(np.abs(spec.mean[t] - spec.mean[0])) > 0:
            print("error: oracle mode needs a stage-constant disturbance; "
                  "use --mode consistency", file=sys.stderr)
            return 2
    lo = np.min([bounding_box(X)[0] for X in spec.X], axis=0)
    hi = np.max([bounding_box(X)[1] for X in spec.X], axis=0)
    h = args.grid if args.grid else (1e-3 if spec.n == 1 else 0.1)
    du = args.input_grid if args.input_grid else (1e-2 if spec.p == 1 else 0.1)
    state_grid = [np.arange(lo[i], hi[i] + h / 2, h) for i in range(spec.n)]
    ulo, uhi = bounding_box(spec.U)
    input_grid = [np.arange(ulo[i], uhi[i] + du / 2, du) for i in range(spec.p)]
    atoms = _symmetric_atoms(spec, args.atoms)
    table = brute_force_dp(spec, state_grid if spec.n > 1 else state_grid[0],
                           input_grid if spec.p > 1 else input_grid[0],
                           atoms, certainty_equivalent=False)
    rng = np.random.default_rng(args.seed)
    states = _sample_states(spec, args.samples, rng)
    # the achievable bound is limited by the value-interpolation bias of the
    # state grid, so the default tolerance tracks the default grid
    tol = args.tol if args.tol else (1e-3 if spec.n == 1 else 0.1)
    covered = 0
    not_covered = 0
    max_dev = 0.0
    for x in states:
        if not p0.contains(x):
            not_covered += 1
            continue
        covered += 1
        u_claim = p0.law(x)
        try:
            u_ref = table.polish_law_at(x, t=0)
        except NotCoveredError:
            not_covered += 1
            covered -= 1
            continue
        max_dev = max(max_dev, float(np.max(np.abs(u_claim - u_ref))))
    print(f"verify (oracle, {args.atoms} atoms/axis): {len(states)} samples, "
          f"{covered} covered, {not_covered} not covered")
    print(f"  max law deviation: {max_dev:.3e} (tolerance {tol:.1e})")
    if covered == 0:
        print("error: no sample landed in the certified collection",
              file=sys.stderr)
        return 4
    if max_dev > tol:
        print("verification FAILED", file=sys.stderr)
        return 4
    print("verification passed")
    return 0


def _verify_consistency(spec, p0, p0_dir, args):
    if spec.N == 1:
        J1 = terminal_collection(spec)
    else:
        rpath = Path(p0_dir) / "regions.json"
        if not rpath.exists():
            print("error: consistency mode needs regions.json next to p0.json",
                  file=sys.stderr)
            return 2
        data = json.loads(rpath.read_text())
        J1 = PCollection.from_dict(data["stages"][1])
    subs = ce_backup(J1, spec, 0)
    if not subs:
        print("error: every successor region erodes to the empty set",
              file=sys.stderr)
        return 3
    rng = np.random.default_rng(args.seed)
    states = _sample_states(spec, args.samples, rng)
    tol = args.tol if args.tol else 1e-6
    covered = 0
    not_covered = 0
    max_u_dev = 0.0
    max_v_dev = 0.0
    for x in states:
        if not p0.contains(x):
            not_covered += 1
            continue
        covered += 1
        u_claim = p0.law(x)
        v_claim = p0.value(x)
        best_v = np.inf
        best_u = None
        for sub in subs:
            sol = solve_qp(sub.form.qp_at(x))
            if sol.status not in ("optimal", "degenerate"):
                continue
            val = sub.form.objective(sol.z_star, x)
            if val < best_v:
                best_v = val
                best_u = sol.z_star
        if best_u is None:
            max_u_dev = np.inf
            continue
        max_u_dev = max(max_u_dev, float(np.max(np.abs(u_claim - best_u))))
        max_v_dev = max(max_v_dev,
                        abs(v_claim - best_v) / max(1.0, abs(best_v)))
    print(f"verify (consistency): {len(states)} samples, {covered} covered, "
          f"{not_covered} not covered")
    print(f"  max law deviation:   {max_u_dev:.3e}")
    print(f"  max value deviation: {max_v_dev:.3e} (tolerance {tol:.1e})")
    if covered == 0:
        print("error: no sample landed in the certified collection",
              file=sys.stderr)
        return 4
    if max_u_dev > tol or max_v_dev > tol:
        print("verification FAILED", file=sys.stderr)
        return 4
    print("verification passed")
    return 0


def cmd_verify(args) -> int:
    pf = parse_problem(args.file)
    spec = pf.spec
    p0_path = Path(args.p0) / "p0.json"
    if not p0_path.exists():
        print(f"error: {p0_path} not found", file=sys.stderr)
        return 2
    p0 = PCollection.from_dict(json.loads(p0_path.read_text()))
    mode = args.mode
    if mode == "auto":
        # the tabulated oracle needs very fine grids for tight law bounds, so
        # it is the default only in one dimension; consistency is exact and
        # cheap everywhere
        mode = "oracle" if spec.n == 1 else "consistency"
    if mode == "oracle" and spec.n > 2:
        print("error: the brute-force oracle supports state dimension <= 2; "
              "use --mode consistency", file=sys.stderr)
        return 2
    if mode == "oracle":
        return _verify_oracle(spec, p0, args)
    return _verify_consistency(spec, p0, args.p0, args)


def cmd_truncate(args) -> int:
    path = Path(args.file)
    try:
        data = json.loads(path.read_text())
    except OSError as exc:
        print(f"error: cannot read {path}: {exc}", file=sys.stderr)
        return 2
    except json.JSONDecodeError as exc:
        print(f"error: invalid JSON in {path}: {exc}", file=sys.stderr)
        return 2
    conf = args.confidence if args.confidence is not None \
        else data.get("confidence")
    if conf is None:
        print("error: confidence missing (flag or file field)", file=sys.stderr)
        return 2
    dspec = DisturbanceSpec(
        kind=data.get("kind", "gaussian"),
        mean=np.atleast_2d(np.asarray(data.get("mean", [0.0]), dtype=float)),
        horizon=args.horizon,
        confidence=float(conf),
        sigma=None if data.get("sigma") is None else np.asarray(data["sigma"]),
        corr=None if data.get("corr") is None else np.asarray(data["corr"]))
    results = truncate_disturbance(
        dspec, method="union" if args.union_bound else "olkin-pratt")
    out = {
        "confidence": float(conf),
        "horizon": args.horizon,
        "per_stage_mass": per_stage_mass(float(conf), args.horizon),
        "stages": [{
            "A": r.polytope.A.tolist(),
            "b": r.polytope.b.tolist(),
            "mass": r.mass,
            "method": r.method,
            "half_widths": r.half_widths.tolist(),
        } for r in results],
    }
    text = json.dumps(out, indent=2)
    if args.out:
        Path(args.out).write_text(text + "\n")
        print(f"wrote {args.out}")
    else:
        print(text)
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="ceregions",
        description="Certainty-equivalence region computation for "
                    "constrained linear-quadratic control")
    sub = ap.add_subparsers(dest="command", required=True)

    c = sub.add_parser("compute", help="run the backward region sweep")
    c.add_argument("file", help="problem JSON file")
    c.add_argument("--symmetric", action="store_true",
                   help="use the symmetry-reduced sweep")
    c.add_argument("--export", metavar="DIR",
                   help="write regions.json/p0.json/report.json here")
    c.add_argument("--jobs", type=int, default=0,
                   help="parallel mpQP solves (default: options.jobs or 1)")
    c.set_defaults(func=cmd_compute)

    e = sub.add_parser("example", help="write a bundled example problem file")
    e.add_argument("name", choices=EXAMPLE_NAMES)
    e.add_argument("--n", type=int, default=0,
                   help="battery ring size (default 5)")
    e.add_argument("--horizon", type=int, default=0,
                   help="override the example's default horizon")
    e.add_argument("--window", type=int, default=0,
                   help="slab: first forecast hour to use")
    e.add_argument("--rho", type=float, default=None,
                   help="slab: input-cost weight (default 0.01)")
    e.add_argument("--out", help="output path (default <name>.json)")
    e.set_defaults(func=cmd_example)

    v = sub.add_parser("verify", help="check exported regions and laws")
    v.add_argument("file", help="problem JSON file")
    v.add_argument("--p0", required=True, metavar="DIR",
                   help="directory with p0.json (and regions.json)")
    v.add_argument("--samples", type=int, default=50)
    v.add_argument("--atoms", type=int, default=3,
                   help="oracle mode: atoms per disturbance axis")
    v.add_argument("--seed", type=int, default=0)
    v.add_argument("--mode", choices=("auto", "oracle", "consistency"),
                   default="auto")
    v.add_argument("--tol", type=float, default=None,
                   help="override the mode's default tolerance")
    v.add_argument("--grid", type=float, default=None,
                   help="oracle mode: state grid spacing")
    v.add_argument("--input-grid", type=float, default=None,
                   help="oracle mode: input grid spacing")
    v.set_defaults(func=cmd_verify)

    t = sub.add_parser("truncate", help="truncate an unbounded disturbance")
    t.add_argument("file", help="distribution JSON file")
    t.add_argument("--confidence", type=float, default=None)
    t.add_argument("--horizon", type=int, required=True)
    t.add_argument("--union-bound", action="store_true",
                   help="use the union tail bound instead of the default")
    t.add_argument("--out", help="write the truncation here instead of stdout")
    t.set_defaults(func=cmd_truncate)
    return ap


def main(argv=None) -> int:
    logging.basicConfig(level=logging.WARNING)
    ap = build_parser()
    args = ap.parse_args(argv)
    try:
        return args.func(args)
    except SchemaError as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return 2
    except (MalformedInputError, FileNotFoundError, GridTooCoarseError) as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return 2
    except (EmptySetError, InfeasibleProblemError) as exc:
        print(f"infeasible problem: {exc}", file=sys.stderr)
        return 3
    except VerificationError as exc:
        print(f"verification failure: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
