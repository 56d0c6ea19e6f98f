"""Component kernel submanifolds: Euclidean, Sphere, Oblique, Stiefel.

A kernel ``W`` of shape ``(rows, cols)`` lives on one of four constraint
surfaces of its ambient space ``R^{rows x cols}``:

* ``Euclidean`` -- unconstrained.
* ``Sphere``    -- the whole kernel has unit Frobenius norm, S^{rows*cols-1}.
* ``Oblique``   -- every column has unit Euclidean norm.
* ``Stiefel``   -- orthonormal columns, ``W^T W = I`` (needs rows >= cols).

All four carry the metric induced by the Frobenius inner product of the
ambient space. Every function here is pure; randomness comes in through an
explicit seed.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .errors import (
    BaseMismatch,
    DegenerateInput,
    DegenerateRetraction,
    InvalidPoint,
    ShapeError,
    Unsupported,
)

__all__ = [
    "Kind",
    "ManifoldSpec",
    "Euclidean",
    "Sphere",
    "Oblique",
    "Stiefel",
    "tangent_project",
    "retract",
    "exp_map",
    "inner",
    "norm",
    "geodesic_distance",
    "random_point",
    "project_to_manifold",
    "constraint_residual",
    "check_point",
    "POINT_TOL",
    "INPUT_TOL",
]

# on-manifold residual guaranteed by retract/random_point/project_to_manifold
POINT_TOL = 1e-10
# residual above which an input point is rejected
INPUT_TOL = 1e-6
# relative pivot size below which QR / normalisation is declared degenerate
DEGENERATE_RTOL = 1e-12


class Kind(str, enum.Enum):
    EUCLIDEAN = "Euclidean"
    SPHERE = "Sphere"
    OBLIQUE = "Oblique"
    STIEFEL = "Stiefel"

    @property
    def code(self) -> int:
        return _KIND_CODES[self]


_KIND_CODES = {Kind.EUCLIDEAN: 0, Kind.SPHERE: 1, Kind.OBLIQUE: 2, Kind.STIEFEL: 3}


@dataclass(frozen=True)
class ManifoldSpec:
    """One component submanifold for a ``rows x cols`` kernel.

    ``stiefel_curvature`` is the sectional-curvature upper bound assumed for
    Stiefel components; no closed form is used for it, so it is a plain
    configuration constant. It is ignored for the other kinds.
    """

    kind: Kind
    rows: int
    cols: int
    stiefel_curvature: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "kind", Kind(self.kind))
        for name in ("rows", "cols"):
            value = getattr(self, name)
            if isinstance(value, bool) or int(value) != value or value < 1:
                raise ShapeError(f"{name} must be a positive integer, got {value!r}")
            object.__setattr__(self, name, int(value))
        if self.kind is Kind.SPHERE and self.rows * self.cols < 2:
            raise ShapeError("Sphere needs rows*cols >= 2")
        if self.kind is Kind.STIEFEL and self.rows < self.cols:
            raise ShapeError(
                f"Stiefel needs rows >= cols, got {self.rows}x{self.cols}"
            )
        if not self.stiefel_curvature >= 0:
            raise ValueError("stiefel_curvature must be non-negative")

    @property
    def shape(self) -> tuple[int, int]:
        return (self.rows, self.cols)

    @property
    def size(self) -> int:
        return self.rows * self.cols

    @property
    def intrinsic_dim(self) -> int:
        a, b = self.rows, self.cols
        if self.kind is Kind.EUCLIDEAN:
            return a * b
        if self.kind is Kind.SPHERE:
            return a * b - 1
        if self.kind is Kind.OBLIQUE:
            return b * (a - 1)
        return a * b - b * (b + 1) // 2

    @property
    def curvature_upper_bound(self) -> float:
        if self.kind is Kind.EUCLIDEAN:
            return 0.0
        if self.kind is Kind.STIEFEL:
            return float(self.stiefel_curvature)
        return 1.0

    def to_dict(self) -> dict:
        out = {"kind": self.kind.value, "rows": self.rows, "cols": self.cols}
        if self.kind is Kind.STIEFEL and self.stiefel_curvature != 1.0:
            out["curvature_bound"] = self.stiefel_curvature
        return out

    @classmethod
    def from_dict(cls, d: dict) -> "ManifoldSpec":
        return cls(
            Kind(d["kind"]),
            d["rows"],
            d["cols"],
            stiefel_curvature=float(d.get("curvature_bound", 1.0)),
        )

    def __str__(self):
        return f"{self.kind.value}({self.rows},{self.cols})"


def Euclidean(rows, cols=1):
    return ManifoldSpec(Kind.EUCLIDEAN, rows, cols)


def Sphere(rows, cols=1):
    return ManifoldSpec(Kind.SPHERE, rows, cols)


def Oblique(rows, cols=1):
    return ManifoldSpec(Kind.OBLIQUE, rows, cols)


def Stiefel(rows, cols=1, curvature=1.0):
    return ManifoldSpec(Kind.STIEFEL, rows, cols, stiefel_curvature=curvature)


def _as_matrix(spec: ManifoldSpec, x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.shape == spec.shape:
        return x
    if x.ndim == 1 and x.size == spec.size:
        return x.reshape(spec.shape)
    raise ShapeError(f"expected shape {spec.shape} for {spec}, got {x.shape}")


def _like(template, m: np.ndarray) -> np.ndarray:
    return m.reshape(np.shape(template))


def _qr_positive(y: np.ndarray):
    """Thin QR with non-negative R diagonal; returns (Q, diag(R))."""
    q, r = np.linalg.qr(y)
    d = np.diag(r).copy()
    signs = np.where(d < 0, -1.0, 1.0)
    return q * signs, d * signs


def _column_norms(m: np.ndarray) -> np.ndarray:
    return np.sqrt(np.sum(m * m, axis=0))


def constraint_residual(spec: ManifoldSpec, p) -> float:
    """Distance of ``p`` from satisfying the manifold constraint (0 = on it)."""
    p = _as_matrix(spec, p)
    if spec.kind is Kind.EUCLIDEAN:
        return 0.0
    if spec.kind is Kind.SPHERE:
        return float(abs(np.linalg.norm(p) - 1.0))
    if spec.kind is Kind.OBLIQUE:
        return float(np.max(np.abs(_column_norms(p) - 1.0)))
    gram = p.T @ p
    return float(np.max(np.abs(gram - np.eye(spec.cols))))


def check_point(spec: ManifoldSpec, p, tol: float = INPUT_TOL) -> np.ndarray:
    m = _as_matrix(spec, p)
    res = constraint_residual(spec, m)
    if not res <= tol:
        raise InvalidPoint(f"point is off {spec}: residual {res:.3e} > {tol:.0e}")
    return m


def tangent_project(spec: ManifoldSpec, p, ambient) -> np.ndarray:
    """Orthogonal projection of an ambient matrix onto the tangent space at ``p``."""
    pm = check_point(spec, p)
    a = _as_matrix(spec, ambient)
    if spec.kind is Kind.EUCLIDEAN:
        out = a.copy()
    elif spec.kind is Kind.SPHERE:
        out = a - np.sum(a * pm) * pm
    elif spec.kind is Kind.OBLIQUE:
        out = a - pm * np.sum(pm * a, axis=0)
    else:
        s = pm.T @ a
        out = a - pm @ (0.5 * (s + s.T))
    return _like(ambient, out)


def retract(spec: ManifoldSpec, p, v) -> np.ndarray:
    """Map the tangent step ``v`` at ``p`` back onto the manifold.

    Sphere: ``(p+v)/||p+v||``. Oblique: column normalisation of ``p+v``.
    Stiefel: Q factor of the thin QR of ``p+v`` with non-negative R diagonal.
    Euclidean: ``p+v``.
    """
    pm = check_point(spec, p)
    vm = _as_matrix(spec, v)
    y = pm + vm
    if spec.kind is Kind.EUCLIDEAN or not np.any(vm != 0.0):
        return _like(p, y)
    if spec.kind is Kind.SPHERE:
        n = np.linalg.norm(y)
        if not (np.isfinite(n) and n > 0):
            raise DegenerateRetraction(f"p+v has zero norm on {spec}")
        return _like(p, y / n)
    if spec.kind is Kind.OBLIQUE:
        n = _column_norms(y)
        if not (np.all(np.isfinite(n)) and np.all(n > 0)):
            raise DegenerateRetraction(f"p+v has a zero column on {spec}")
        return _like(p, y / n)
    q, d = _qr_positive(y)
    scale = np.max(_column_norms(y))
    if not (np.all(np.isfinite(d)) and np.min(d) > DEGENERATE_RTOL * scale):
        raise DegenerateRetraction(f"p+v is rank deficient on {spec}")
    return _like(p, q)


def exp_map(spec: ManifoldSpec, p, v) -> np.ndarray:
    """Riemannian exponential map; available for Euclidean, Sphere, Oblique."""
    if spec.kind is Kind.STIEFEL:
        raise Unsupported("exp_map is not provided for Stiefel; use retract")
    pm = check_point(spec, p)
    vm = _as_matrix(spec, v)
    if spec.kind is Kind.EUCLIDEAN:
        return _like(p, pm + vm)
    if spec.kind is Kind.SPHERE:
        nv = np.linalg.norm(vm)
        if nv == 0.0:
            return _like(p, pm.copy())
        return _like(p, np.cos(nv) * pm + np.sin(nv) * (vm / nv))
    nv = _column_norms(vm)
    safe = np.where(nv > 0, nv, 1.0)
    sinc = np.where(nv > 0, np.sin(nv) / safe, 1.0)
    return _like(p, np.cos(nv) * pm + sinc * vm)


def _check_tangent(spec, pm, u):
    um = _as_matrix(spec, u)
    if spec.kind is Kind.EUCLIDEAN:
        return um
    if spec.kind is Kind.SPHERE:
        off = abs(np.sum(pm * um))
    elif spec.kind is Kind.OBLIQUE:
        off = np.max(np.abs(np.sum(pm * um, axis=0)))
    else:
        s = pm.T @ um
        off = np.max(np.abs(s + s.T))
    if off > INPUT_TOL * max(1.0, float(np.linalg.norm(um))):
        raise BaseMismatch(f"vector is not tangent to {spec} at the given point")
    return um


def inner(spec: ManifoldSpec, p, u, v) -> float:
    """Frobenius inner product of two tangent vectors at ``p``."""
    pm = check_point(spec, p)
    um = _check_tangent(spec, pm, u)
    vm = _check_tangent(spec, pm, v)
    return float(np.sum(um * vm))


def norm(spec: ManifoldSpec, p, u) -> float:
    return float(np.sqrt(inner(spec, p, u, u)))


def geodesic_distance(spec: ManifoldSpec, x, y) -> float:
    """Geodesic distance; for Stiefel the chordal Frobenius distance stands in."""
    xm = check_point(spec, x)
    ym = check_point(spec, y)
    if spec.kind in (Kind.EUCLIDEAN, Kind.STIEFEL):
        return float(np.linalg.norm(xm - ym))
    # 2 atan2(|x-y|, |x+y|) is the arc length, accurate near 0 and near pi
    if spec.kind is Kind.SPHERE:
        return float(2.0 * np.arctan2(np.linalg.norm(xm - ym), np.linalg.norm(xm + ym)))
    arcs = 2.0 * np.arctan2(_column_norms(xm - ym), _column_norms(xm + ym))
    return float(np.sqrt(np.sum(arcs * arcs)))


def random_point(spec: ManifoldSpec, seed) -> np.ndarray:
    """Deterministic random point; ``seed`` is anything numpy's default_rng takes."""
    g = np.random.default_rng(seed).standard_normal(spec.shape)
    if spec.kind is Kind.EUCLIDEAN:
        return g / np.sqrt(spec.size)
    if spec.kind is Kind.SPHERE:
        return g / np.linalg.norm(g)
    if spec.kind is Kind.OBLIQUE:
        return g / _column_norms(g)
    return _qr_positive(g)[0]


def project_to_manifold(spec: ManifoldSpec, ambient) -> np.ndarray:
    """Nearest point on the manifold to an ambient matrix.

    Stiefel uses the polar factor ``U V^T`` of the thin SVD.
    """
    a = _as_matrix(spec, ambient)
    if spec.kind is Kind.EUCLIDEAN:
        return _like(ambient, a.copy())
    if spec.kind is Kind.SPHERE:
        n = np.linalg.norm(a)
        if not (np.isfinite(n) and n > 0):
            raise DegenerateInput(f"cannot normalise a zero kernel onto {spec}")
        return _like(ambient, a / n)
    if spec.kind is Kind.OBLIQUE:
        n = _column_norms(a)
        if not (np.all(np.isfinite(n)) and np.all(n > 0)):
            raise DegenerateInput(f"zero column cannot be normalised onto {spec}")
        return _like(ambient, a / n)
    u, s, vt = np.linalg.svd(a, full_matrices=False)
    if not (np.all(np.isfinite(s)) and s[-1] > DEGENERATE_RTOL * max(s[0], 1e-300)):
        raise DegenerateInput(f"rank-deficient kernel cannot be mapped onto {spec}")
    return _like(ambient, u @ vt)
