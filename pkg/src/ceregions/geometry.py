"""Polytope algebra on H-representations {x : A x <= b}.

Everything here works on dense numpy arrays.  Empty polytopes are first-class
values: operations that can produce an empty set return a polytope whose
``is_empty`` flag is set (with a Farkas witness), they do not raise.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple, Optional, Sequence

import numpy as np

from . import _kernels as K
from .errors import EmptySetError, MalformedInputError

CHEB_RADIUS_CAP = 1e6

_EMPTY_UNKNOWN = 0
_EMPTY_NO = 1
_EMPTY_YES = 2


class Polytope:
    """Convex polyhedron {x : A x <= b} with lazily-computed emptiness."""

    __slots__ = ("A", "b", "_empty_state", "_empty_witness")

    def __init__(self, A, b):
        A = np.ascontiguousarray(np.atleast_2d(np.asarray(A, dtype=float)))
        b = np.ascontiguousarray(np.asarray(b, dtype=float).ravel())
        if A.ndim != 2:
            raise MalformedInputError("A must be a 2-D array")
        if A.shape[0] != b.shape[0]:
            raise MalformedInputError(
                f"row mismatch: A has {A.shape[0]} rows, b has {b.shape[0]}"
            )
        if not (np.isfinite(A).all() and np.isfinite(b).all()):
            raise MalformedInputError("non-finite entries in H-representation")
        self.A = A
        self.b = b
        self._empty_state = _EMPTY_UNKNOWN
        self._empty_witness: Optional[np.ndarray] = None

    # -- basic introspection -------------------------------------------------

    @property
    def dim(self) -> int:
        return self.A.shape[1]

    @property
    def nrows(self) -> int:
        return self.A.shape[0]

    def __repr__(self) -> str:  # pragma: no cover - debugging aid
        return f"Polytope(dim={self.dim}, rows={self.nrows})"

    @classmethod
    def from_box(cls, lo, hi) -> "Polytope":
        lo = np.asarray(lo, dtype=float).ravel()
        hi = np.asarray(hi, dtype=float).ravel()
        if lo.shape != hi.shape:
            raise MalformedInputError("box bounds must have equal length")
        n = lo.size
        A = np.vstack([np.eye(n), -np.eye(n)])
        b = np.concatenate([hi, -lo])
        return cls(A, b)

    def to_dict(self) -> dict:
        return {"A": self.A.tolist(), "b": self.b.tolist()}

    @classmethod
    def from_dict(cls, data: dict) -> "Polytope":
        return cls(np.asarray(data["A"], dtype=float), np.asarray(data["b"], dtype=float))

    # -- membership / emptiness ----------------------------------------------

    def contains(self, x, tol: float = 1e-9) -> bool:
        x = np.asarray(x, dtype=float).ravel()
        return bool(np.all(self.A @ x <= self.b + tol))

    def contains_batch(self, X, tol: float = 1e-9) -> np.ndarray:
        """Vectorised membership test for points stacked in rows of X."""

        X = np.atleast_2d(np.asarray(X, dtype=float))
        return np.all(X @ self.A.T <= self.b + tol, axis=1)

    @property
    def is_empty(self) -> bool:
        if self._empty_state == _EMPTY_UNKNOWN:
            self._check_empty()
        return self._empty_state == _EMPTY_YES

    @property
    def empty_witness(self) -> Optional[np.ndarray]:
        """Farkas certificate y >= 0 with y'A = 0 and y'b < 0 (empty sets only)."""

        if self._empty_state == _EMPTY_UNKNOWN:
            self._check_empty()
        return self._empty_witness

    def _check_empty(self) -> None:
        if self.nrows == 0:
            self._empty_state = _EMPTY_NO
            return
        status, _ = K.lp_feasible_point(self.A, self.b)
        if status == K.OPTIMAL:
            self._empty_state = _EMPTY_NO
        else:
            self._empty_state = _EMPTY_YES
            self._empty_witness = _farkas_certificate(self.A, self.b)

    def _mark_empty(self, witness: Optional[np.ndarray]) -> None:
        self._empty_state = _EMPTY_YES
        self._empty_witness = witness


def _farkas_certificate(A: np.ndarray, b: np.ndarray) -> Optional[np.ndarray]:
    """Find y >= 0, 1'y = 1 with A'y = 0 and b'y < 0 witnessing infeasibility."""

    m, n = A.shape
    A_ub = -np.eye(m)
    b_ub = np.zeros(m)
    A_eq = np.vstack([A.T, np.ones((1, m))])
    b_eq = np.concatenate([np.zeros(n), [1.0]])
    status, y = K.lp_dense(np.ascontiguousarray(b), A_ub, b_ub,
                           np.ascontiguousarray(A_eq), b_eq)
    if status == K.OPTIMAL and b @ y < 0:
        return y
    return None


class ChebyshevResult(NamedTuple):
    center: np.ndarray
    radius: float
    capped: bool


@dataclass
class FacetMatch:
    """Row correspondence between two normalized minimal H-representations."""

    exclusive: np.ndarray          # rows of R matching no row of X
    matched: list                  # (row of X, matching row of R) pairs
    tol: float


# ---------------------------------------------------------------------------
# operations
# ---------------------------------------------------------------------------


def normalize(P: Polytope, tol: float = 1e-12) -> Polytope:
    """Scale every row to unit Euclidean norm; raises on (near-)zero rows."""

    norms = np.linalg.norm(P.A, axis=1)
    if np.any(norms <= tol):
        raise MalformedInputError("zero row in H-representation")
    return Polytope(P.A / norms[:, None], P.b / norms)


def minimal_rep(P: Polytope) -> Polytope:
    """Drop redundant rows (one LP per row, strict-improvement threshold 1e-9).

    Empty inputs come back as an explicitly flagged empty polytope.  The result
    keeps the surviving rows in their original order and scaling, so the
    operation is idempotent.
    """

    if P.nrows == 0:
        return Polytope(P.A.copy(), P.b.copy())
    if P.is_empty:
        out = Polytope(P.A.copy(), P.b.copy())
        out._mark_empty(P.empty_witness)
        return out

    norms = np.linalg.norm(P.A, axis=1)
    if np.any(norms <= 1e-300):
        raise MalformedInputError("zero row in H-representation")
    An = P.A / norms[:, None]
    bn = P.b / norms

    m = P.nrows
    keep = np.ones(m, dtype=bool)
    # exact-duplicate sweep first so twin rows cannot knock each other out
    for i in range(m):
        if not keep[i]:
            continue
        for j in range(i + 1, m):
            if keep[j] and np.all(np.abs(An[i] - An[j]) <= 1e-12) and abs(bn[i] - bn[j]) <= 1e-12:
                keep[j] = False

    for i in range(m):
        if not keep[i]:
            continue
        others = keep.copy()
        others[i] = False
        rows = np.flatnonzero(others)
        A_lp = np.vstack([P.A[rows], P.A[i][None, :]])
        b_lp = np.concatenate([P.b[rows], [P.b[i] + 1.0]])
        status, x = K.lp_dense(
            np.ascontiguousarray(-P.A[i]),
            np.ascontiguousarray(A_lp),
            np.ascontiguousarray(b_lp),
            np.zeros((0, P.dim)),
            np.zeros(0),
        )
        if status == K.OPTIMAL and P.A[i] @ x <= P.b[i] + 1e-9:
            keep[i] = False

    return Polytope(P.A[keep], P.b[keep])


def chebyshev_center(P: Polytope) -> ChebyshevResult:
    """Largest inscribed ball; unbounded radius is capped (flag set)."""

    if P.nrows == 0:
        raise EmptySetError("chebyshev_center of an unconstrained set is undefined")
    n = P.dim
    norms = np.linalg.norm(P.A, axis=1)
    if np.any(norms <= 1e-300):
        raise MalformedInputError("zero row in H-representation")
    A_lp = np.hstack([P.A, norms[:, None]])
    r_lo = np.zeros((1, n + 1))
    r_lo[0, n] = -1.0
    r_hi = np.zeros((1, n + 1))
    r_hi[0, n] = 1.0
    A_lp = np.vstack([A_lp, r_lo, r_hi])
    b_lp = np.concatenate([P.b, [0.0, CHEB_RADIUS_CAP]])
    c = np.zeros(n + 1)
    c[n] = -1.0
    status, sol = K.lp_dense(c, np.ascontiguousarray(A_lp), b_lp,
                             np.zeros((0, n + 1)), np.zeros(0))
    if status != K.OPTIMAL:
        raise EmptySetError("polytope is empty")
    radius = sol[n]
    return ChebyshevResult(sol[:n].copy(), float(radius), bool(radius >= CHEB_RADIUS_CAP - 1e-6))


def support(P: Polytope, direction) -> float:
    """Support function h_P(d) = max_{x in P} d'x (inf when unbounded)."""

    d = np.asarray(direction, dtype=float).ravel()
    status, x = K.lp_dense(np.ascontiguousarray(-d), P.A, P.b,
                           np.zeros((0, P.dim)), np.zeros(0))
    if status == K.UNBOUNDED:
        return np.inf
    if status != K.OPTIMAL:
        raise EmptySetError("support of an empty polytope")
    return float(d @ x)


def pontryagin_diff(X: Polytope, D: Polytope, image: Optional[np.ndarray] = None) -> Polytope:
    """Erosion X minus D: offsets b_i shrink by the support of D along each normal.

    ``image`` maps D into the space of X (x+ = ... + image @ d); identity by
    default.  The result may be empty, in which case it carries the flag.
    """

    if D.is_empty:
        raise EmptySetError("pontryagin_diff with an empty disturbance set")
    if image is None:
        if X.dim != D.dim:
            raise MalformedInputError("dimension mismatch between X and D")
        dirs = X.A
    else:
        image = np.asarray(image, dtype=float)
        if image.shape != (X.dim, D.dim):
            raise MalformedInputError("image matrix has wrong shape")
        dirs = X.A @ image
    offsets = np.empty(X.nrows)
    for i in range(X.nrows):
        h = support(D, dirs[i])
        if not np.isfinite(h):
            raise MalformedInputError("disturbance set is unbounded")
        offsets[i] = h
    return Polytope(X.A.copy(), X.b - offsets)


def facet_index_sets(R: Polytope, X: Polytope, tol: float = 1e-8) -> FacetMatch:
    """Split R's rows into exclusive vs shared facets relative to X.

    Both inputs must be normalized (minimal representations are assumed).  Rows
    match when normals agree within ``tol`` in max-norm and offsets within
    ``tol``.
    """

    for P, name in ((R, "R"), (X, "X")):
        norms = np.linalg.norm(P.A, axis=1)
        if P.nrows and np.max(np.abs(norms - 1.0)) > 1e-9:
            raise MalformedInputError(f"{name} is not normalized")
    if R.dim != X.dim:
        raise MalformedInputError("dimension mismatch")

    matched_pairs = []
    matched_r = np.zeros(R.nrows, dtype=bool)
    for ix in range(X.nrows):
        for ir in range(R.nrows):
            if matched_r[ir]:
                continue
            if (np.max(np.abs(R.A[ir] - X.A[ix])) <= tol
                    and abs(R.b[ir] - X.b[ix]) <= tol):
                matched_pairs.append((ix, ir))
                matched_r[ir] = True
                break
    exclusive = np.flatnonzero(~matched_r)
    return FacetMatch(exclusive=exclusive, matched=matched_pairs, tol=tol)


def linear_image_equal(T, P: Polytope, Q: Polytope, tol: float = 1e-8) -> bool:
    """True when {T x : x in P} equals Q as a set of normalized rows.

    Both polytopes should be in normalized minimal form; the image is compared
    row-by-row up to permutation.  Raises on a singular map.
    """

    T = np.asarray(T, dtype=float)
    if T.shape[0] != T.shape[1] or T.shape[0] != P.dim or Q.dim != P.dim:
        raise MalformedInputError("map/polytope dimension mismatch")
    try:
        Tinv = np.linalg.inv(T)
    except np.linalg.LinAlgError as exc:
        raise MalformedInputError("singular map in linear_image_equal") from exc
    if np.linalg.cond(T) > 1e12:
        raise MalformedInputError("numerically singular map in linear_image_equal")

    A_img = P.A @ Tinv
    norms = np.linalg.norm(A_img, axis=1)
    if np.any(norms <= 1e-300):
        raise MalformedInputError("zero row after mapping")
    A_img = A_img / norms[:, None]
    b_img = P.b / norms

    normsq = np.linalg.norm(Q.A, axis=1)
    A_q = Q.A / normsq[:, None]
    b_q = Q.b / normsq

    if A_img.shape[0] != A_q.shape[0]:
        return False
    used = np.zeros(A_q.shape[0], dtype=bool)
    for i in range(A_img.shape[0]):
        hit = False
        for j in range(A_q.shape[0]):
            if used[j]:
                continue
            if (np.max(np.abs(A_img[i] - A_q[j])) <= tol
                    and abs(b_img[i] - b_q[j]) <= tol):
                used[j] = True
                hit = True
                break
        if not hit:
            return False
    return True


# ---------------------------------------------------------------------------
# helpers used across the package (not part of the op surface)
# ---------------------------------------------------------------------------


def solve_lp_rows(c, A_ub, b_ub, A_eq=None, b_eq=None):
    """Thin typed wrapper over the LP kernel for internal callers."""

    if A_eq is None:
        A_eq = np.zeros((0, len(c)))
        b_eq = np.zeros(0)
    return K.lp_dense(
        np.ascontiguousarray(np.asarray(c, dtype=float)),
        np.ascontiguousarray(np.atleast_2d(np.asarray(A_ub, dtype=float))),
        np.ascontiguousarray(np.asarray(b_ub, dtype=float).ravel()),
        np.ascontiguousarray(np.atleast_2d(np.asarray(A_eq, dtype=float))),
        np.ascontiguousarray(np.asarray(b_eq, dtype=float).ravel()),
    )


def facet_interior_point(P: Polytope, row: int) -> Optional[np.ndarray]:
    """Chebyshev-style center of facet ``row`` within its hyperplane.

    Expects normalized rows.  Returns None when the facet is lower-dimensional
    or empty (radius within the hyperplane ~ 0 still yields the point found).
    """

    n = P.dim
    a_i = P.A[row]
    rows = [j for j in range(P.nrows) if j != row]
    # projected row norms within the facet hyperplane
    coefs = []
    for j in rows:
        aj = P.A[j]
        proj = aj - (aj @ a_i) * a_i
        coefs.append(np.linalg.norm(proj))
    A_lp = np.zeros((len(rows) + 2, n + 1))
    b_lp = np.zeros(len(rows) + 2)
    for k, j in enumerate(rows):
        A_lp[k, :n] = P.A[j]
        A_lp[k, n] = coefs[k]
        b_lp[k] = P.b[j]
    A_lp[-2, n] = -1.0          # r >= 0
    A_lp[-1, n] = 1.0           # r <= cap
    b_lp[-1] = CHEB_RADIUS_CAP
    A_eq = np.zeros((1, n + 1))
    A_eq[0, :n] = a_i
    b_eq = np.array([P.b[row]])
    c = np.zeros(n + 1)
    c[n] = -1.0
    status, sol = solve_lp_rows(c, A_lp, b_lp, A_eq, b_eq)
    if status != K.OPTIMAL:
        return None
    return sol[:n].copy()


def sample_points(P: Polytope, count: int, rng: np.random.Generator,
                  margin: float = 0.98, burnin: int = 3) -> np.ndarray:
    """Hit-and-run samples from the interior of a (bounded) polytope."""

    if P.is_empty:
        raise EmptySetError("cannot sample an empty polytope")
    x = chebyshev_center(P).center
    out = np.empty((count, P.dim))
    total = count + burnin
    k = 0
    for it in range(total):
        d = rng.normal(size=P.dim)
        d /= np.linalg.norm(d)
        Ad = P.A @ d
        resid = P.b - P.A @ x
        resid = np.maximum(resid, 0.0)
        pos = Ad > 1e-12
        neg = Ad < -1e-12
        s_hi = np.min(resid[pos] / Ad[pos]) if np.any(pos) else 1e3
        s_lo = -np.min(resid[neg] / -Ad[neg]) if np.any(neg) else -1e3
        s = rng.uniform(margin * s_lo, margin * s_hi)
        x = x + s * d
        if it >= burnin:
            out[k] = x
            k += 1
    return out


def bounding_box(P: Polytope):
    """Axis-aligned bounding box via 2n support LPs."""

    lo = np.empty(P.dim)
    hi = np.empty(P.dim)
    for i in range(P.dim):
        e = np.zeros(P.dim)
        e[i] = 1.0
        hi[i] = support(P, e)
        lo[i] = -support(P, -e)
    return lo, hi


def vertices_2d(P: Polytope, tol: float = 1e-7) -> np.ndarray:
    """Vertices of a bounded 2-D polytope, counterclockwise, starting at the
    lexicographic minimum."""

    if P.dim != 2:
        raise MalformedInputError("vertices_2d requires a 2-D polytope")
    cands = []
    m = P.nrows
    for i in range(m):
        for j in range(i + 1, m):
            M = np.array([P.A[i], P.A[j]])
            det = M[0, 0] * M[1, 1] - M[0, 1] * M[1, 0]
            if abs(det) < 1e-10:
                continue
            v = np.linalg.solve(M, np.array([P.b[i], P.b[j]]))
            if np.all(P.A @ v <= P.b + tol):
                cands.append(v)
    if not cands:
        return np.zeros((0, 2))
    pts = np.array(cands)
    # dedup
    uniq = []
    for v in pts:
        if not any(np.linalg.norm(v - u) <= tol for u in uniq):
            uniq.append(v)
    pts = np.array(uniq)
    centroid = pts.mean(axis=0)
    ang = np.arctan2(pts[:, 1] - centroid[1], pts[:, 0] - centroid[0])
    pts = pts[np.argsort(ang)]
    start = np.lexsort((pts[:, 1], pts[:, 0]))[0]
    return np.roll(pts, -start, axis=0)


def polygon_area(vertices: np.ndarray) -> float:
    """Shoelace area of a CCW-ordered vertex loop."""

    if len(vertices) < 3:
        return 0.0
    x = vertices[:, 0]
    y = vertices[:, 1]
    return 0.5 * float(np.abs(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1))))


def polytopes_equal(P: Polytope, Q: Polytope, tol: float = 1e-8) -> bool:
    """Set equality of two normalized minimal H-representations."""

    if P.dim != Q.dim:
        return False
    return linear_image_equal(np.eye(P.dim), P, Q, tol=tol)
