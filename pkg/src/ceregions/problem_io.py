"""Reading and writing problem files.

Problems are hand-editable JSON with explicit dense matrices.  Constraint
sets are either full H-representations {"A": ..., "b": ...} or axis-aligned
boxes {"lo": ..., "hi": ...}; single sets broadcast over the horizon.
Unbounded disturbance models declared under ``disturbance.distribution``
are truncated to polytopes while parsing.  All parse errors name the
offending field.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field as dc_field
from pathlib import Path

import numpy as np

from .dp import ProblemSpec
from .errors import MalformedInputError, SchemaError
from .geometry import Polytope, polytopes_equal
from .symmetry import SymmetryPair
from .truncation import DisturbanceSpec, truncate_disturbance


@dataclass
class ProblemFile:
    """A parsed problem: validated spec plus optional symmetry and options."""

    spec: ProblemSpec
    generators: list = dc_field(default_factory=list)
    options: dict = dc_field(default_factory=dict)
    name: str = ""
    raw: dict = dc_field(default_factory=dict)


def _get(d: dict, path: str, required: bool = True, default=None):
    node = d
    for part in path.split("."):
        if not isinstance(node, dict) or part not in node:
            if required:
                raise SchemaError(path, "missing required field")
            return default
        node = node[part]
    return node


def _matrix(val, field: str) -> np.ndarray:
    try:
        M = np.array(val, dtype=float)
    except (TypeError, ValueError) as exc:
        raise SchemaError(field, f"not a numeric matrix: {exc}") from None
    if M.ndim == 1:
        M = M[None, :] if M.size else M
    if M.ndim != 2 or not np.isfinite(M).all():
        raise SchemaError(field, "expected a finite 2-D matrix")
    return M


def _vector(val, field: str) -> np.ndarray:
    try:
        v = np.asarray(val, dtype=float).ravel()
    except (TypeError, ValueError) as exc:
        raise SchemaError(field, f"not a numeric vector: {exc}") from None
    if not np.isfinite(v).all():
        raise SchemaError(field, "expected finite entries")
    return v


def _polytope(val, field: str) -> Polytope:
    if not isinstance(val, dict):
        raise SchemaError(field, "expected an object with A/b or lo/hi")
    try:
        if "A" in val and "b" in val:
            return Polytope(np.array(val["A"], dtype=float),
                            np.array(val["b"], dtype=float))
        if "lo" in val and "hi" in val:
            return Polytope.from_box(val["lo"], val["hi"])
    except (MalformedInputError, TypeError, ValueError) as exc:
        raise SchemaError(field, str(exc)) from None
    raise SchemaError(field, "expected keys A/b or lo/hi")


def _per_stage(val, field: str, count: int, parse_one):
    """A single item broadcast ``count`` times, or a list of ``count`` items."""
    if isinstance(val, list):
        if len(val) != count:
            raise SchemaError(field, f"expected {count} per-stage entries, "
                                     f"got {len(val)}")
        return [parse_one(v, f"{field}[{i}]") for i, v in enumerate(val)]
    return [parse_one(val, field)] * count


def _cost_list(val, field: str, count: int):
    # a bare matrix is a nested list too, so detect the per-stage case by
    # looking one level deeper
    if isinstance(val, list) and val and isinstance(val[0], list) \
            and val[0] and isinstance(val[0][0], list):
        if len(val) != count:
            raise SchemaError(field, f"expected {count} per-stage matrices, "
                                     f"got {len(val)}")
        return [_matrix(v, f"{field}[{i}]") for i, v in enumerate(val)]
    return [_matrix(val, field)] * count


def _parse_distribution(dist: dict, N: int, mean_fallback, options: dict):
    kind = _get(dist, "kind")
    if kind == "polytopic-uniform":
        raise SchemaError(
            "disturbance.distribution.kind",
            "bounded polytopic disturbances belong in constraints.D")
    mean = dist.get("mean", mean_fallback)
    if mean is None:
        raise SchemaError("disturbance.distribution.mean",
                          "missing required field")
    sigma = _vector(_get(dist, "sigma"), "disturbance.distribution.sigma")
    conf = dist.get("confidence")
    if conf is None:
        raise SchemaError("disturbance.distribution.confidence",
                          "missing required field")
    corr = dist.get("corr")
    try:
        dspec = DisturbanceSpec(
            kind=kind, mean=np.atleast_2d(np.asarray(mean, dtype=float)),
            horizon=N, confidence=float(conf), sigma=sigma,
            corr=None if corr is None else np.array(corr, dtype=float))
        method = "union" if options.get("union_bound") else "olkin-pratt"
        results = truncate_disturbance(dspec, method=method)
    except MalformedInputError as exc:
        raise SchemaError("disturbance.distribution", str(exc)) from None
    return [r.polytope for r in results], dspec.mean


def parse_problem(source) -> ProblemFile:
    """Parse a problem file (path, JSON string, or already-loaded dict)."""
    if isinstance(source, dict):
        raw = source
    else:
        path = Path(source)
        try:
            text = path.read_text()
        except OSError as exc:
            raise SchemaError(str(source), f"cannot read file: {exc}") from None
        try:
            raw = json.loads(text)
        except json.JSONDecodeError as exc:
            raise SchemaError(str(source), f"invalid JSON: {exc}") from None
    if not isinstance(raw, dict):
        raise SchemaError("<root>", "top level must be a JSON object")

    A = _matrix(_get(raw, "dynamics.A"), "dynamics.A")
    B = _matrix(_get(raw, "dynamics.B"), "dynamics.B")
    n = A.shape[0]
    N = _get(raw, "horizon")
    if not isinstance(N, int) or N < 1:
        raise SchemaError("horizon", "expected a positive integer")
    G_raw = _get(raw, "dynamics.G", required=False)
    G = None if G_raw is None else _matrix(G_raw, "dynamics.G")
    drift_raw = _get(raw, "dynamics.drift", required=False)
    drift = None
    if drift_raw is not None:
        if isinstance(drift_raw, list) and drift_raw \
                and isinstance(drift_raw[0], list):
            if len(drift_raw) != N:
                raise SchemaError("dynamics.drift",
                                  f"expected {N} per-stage vectors")
            drift = [_vector(v, f"dynamics.drift[{i}]")
                     for i, v in enumerate(drift_raw)]
        else:
            drift = _vector(drift_raw, "dynamics.drift")

    Q = _cost_list(_get(raw, "cost.Q"), "cost.Q", N)
    R = _cost_list(_get(raw, "cost.R"), "cost.R", N)
    QN = _matrix(_get(raw, "cost.QN"), "cost.QN")

    X = _per_stage(_get(raw, "constraints.X"), "constraints.X", N + 1, _polytope)
    U = _polytope(_get(raw, "constraints.U"), "constraints.U")

    options = raw.get("options", {})
    if not isinstance(options, dict):
        raise SchemaError("options", "expected an object")

    dist_block = raw.get("disturbance", {})
    if not isinstance(dist_block, dict):
        raise SchemaError("disturbance", "expected an object")
    mean_raw = dist_block.get("mean")
    D_raw = _get(raw, "constraints.D", required=False)
    distribution = dist_block.get("distribution")
    if distribution is not None and D_raw is not None:
        raise SchemaError(
            "constraints.D",
            "give either constraints.D or disturbance.distribution, not both")
    if distribution is not None:
        D, mean = _parse_distribution(distribution, N, mean_raw, options)
        mean = [np.asarray(m, dtype=float) for m in mean]
    elif D_raw is not None:
        D = _per_stage(D_raw, "constraints.D", N, _polytope)
        nd = D[0].dim
        if mean_raw is None:
            mean = [np.zeros(nd) for _ in range(N)]
        elif isinstance(mean_raw, list) and mean_raw \
                and isinstance(mean_raw[0], list):
            if len(mean_raw) != N:
                raise SchemaError("disturbance.mean",
                                  f"expected {N} per-stage vectors")
            mean = [_vector(v, f"disturbance.mean[{i}]")
                    for i, v in enumerate(mean_raw)]
        else:
            one = _vector(mean_raw, "disturbance.mean")
            mean = [one.copy() for _ in range(N)]
    else:
        raise SchemaError("constraints.D",
                          "missing required field (or provide "
                          "disturbance.distribution)")

    spec = ProblemSpec(A=A, B=B, N=N, Q=Q, R=R, QN=QN,
                       X=X, U=U, D=D, mean=mean, G=G, drift=drift)

    generators = []
    sym = raw.get("symmetry")
    if sym is not None:
        gens = _get(sym, "generators") if isinstance(sym, dict) else None
        if gens is None or not isinstance(gens, list):
            raise SchemaError("symmetry.generators", "expected a list")
        for i, g in enumerate(gens):
            fld = f"symmetry.generators[{i}]"
            if not isinstance(g, dict) or "Theta" not in g or "Omega" not in g:
                raise SchemaError(fld, "expected an object with Theta and Omega")
            try:
                generators.append(SymmetryPair(_matrix(g["Theta"], fld + ".Theta"),
                                               _matrix(g["Omega"], fld + ".Omega")))
            except MalformedInputError as exc:
                raise SchemaError(fld, str(exc)) from None

    return ProblemFile(spec=spec, generators=generators, options=options,
                       name=str(raw.get("name", "")), raw=raw)


def _poly_dict(P: Polytope) -> dict:
    return {"A": P.A.tolist(), "b": P.b.tolist()}


def spec_to_dict(spec: ProblemSpec, generators=(), options=None,
                 name: str = "") -> dict:
    """Serialize a spec back into the problem-file structure."""
    out: dict = {}
    if name:
        out["name"] = name
    dyn = {"A": spec.A.tolist(), "B": spec.B.tolist()}
    if spec.G is not None:
        dyn["G"] = spec.G.tolist()
    drift_mat = np.asarray(spec.drift)
    if np.any(drift_mat != 0.0):
        if np.all(drift_mat == drift_mat[0]):
            dyn["drift"] = spec.drift[0].tolist()
        else:
            dyn["drift"] = [d.tolist() for d in spec.drift]
    out["dynamics"] = dyn
    out["horizon"] = int(spec.N)

    def costs(mats):
        if all(np.array_equal(m, mats[0]) for m in mats):
            return mats[0].tolist()
        return [m.tolist() for m in mats]

    out["cost"] = {"Q": costs(spec.Q), "R": costs(spec.R),
                   "QN": spec.QN.tolist()}

    def sets(polys):
        if all(polytopes_equal(P, polys[0]) for P in polys):
            return _poly_dict(polys[0])
        return [_poly_dict(P) for P in polys]

    out["constraints"] = {"X": sets(spec.X), "U": _poly_dict(spec.U),
                          "D": sets(spec.D)}
    mean_mat = np.asarray(spec.mean)
    if np.all(mean_mat == mean_mat[0]):
        mean = spec.mean[0].tolist()
    else:
        mean = [m.tolist() for m in spec.mean]
    out["disturbance"] = {"mean": mean}
    if generators:
        out["symmetry"] = {"generators": [
            {"Theta": g.Theta.tolist(), "Omega": g.Omega.tolist()}
            for g in generators]}
    if options:
        out["options"] = options
    return out


def write_problem(pf, path) -> None:
    """Write a problem file (ProblemFile or raw dict) as indented JSON."""
    if isinstance(pf, ProblemFile):
        data = pf.raw if pf.raw else spec_to_dict(pf.spec, pf.generators,
                                                  pf.options, pf.name)
    else:
        data = pf
    Path(path).write_text(json.dumps(data, indent=2) + "\n")
