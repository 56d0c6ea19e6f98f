"""Products of component submanifolds (PEMs).

A point of a product is the row-major concatenation of its component
kernels, in construction order. Tangent vectors use the same layout. The
metric is the sum of component metrics and the curvature tensor is the sum
of component tensors, so mixed two-planes (one direction per component) are
flat.
"""
from __future__ import annotations

import numpy as np

from . import backend
from . import manifolds as mf
from .errors import (
    DegeneratePlane,
    DegenerateRetraction,
    EmptyProduct,
    InvalidPoint,
    ShapeError,
    Unsupported,
)
from .manifolds import Kind, ManifoldSpec

__all__ = [
    "ProductManifold",
    "build_product",
    "product_inner",
    "product_tangent_project",
    "product_retract",
    "product_grad_norm",
    "product_residuals",
    "curvature_tensor_eval",
    "sectional_curvature",
    "product_curvature_upper_bound",
]

GRAM_TOL = 1e-12


class ProductManifold:
    """Ordered product of :class:`ManifoldSpec` components with a flat layout."""

    __slots__ = ("components", "offsets", "total_ambient_dim", "_layout")

    def __init__(self, components):
        components = tuple(components)
        if not components:
            raise EmptyProduct("a product needs at least one component")
        for c in components:
            if not isinstance(c, ManifoldSpec):
                raise TypeError(f"expected ManifoldSpec, got {type(c).__name__}")
        sizes = [c.size for c in components]
        offsets = np.concatenate([[0], np.cumsum(sizes)[:-1]]).astype(np.intp)
        self.components = components
        self.offsets = tuple(int(o) for o in offsets)
        self.total_ambient_dim = int(sum(sizes))
        self._layout = (
            np.array([c.kind.code for c in components], dtype=np.intp),
            offsets,
            np.array([c.rows for c in components], dtype=np.intp),
            np.array([c.cols for c in components], dtype=np.intp),
        )

    def __len__(self):
        return len(self.components)

    def __eq__(self, other):
        return isinstance(other, ProductManifold) and self.components == other.components

    def __hash__(self):
        return hash(self.components)

    def __repr__(self):
        return "ProductManifold(" + " x ".join(str(c) for c in self.components) + ")"

    @property
    def layout(self):
        """``(kinds, offsets, rows, cols)`` arrays consumed by the kernel backend."""
        return self._layout

    def slice(self, i: int) -> slice:
        o = self.offsets[i]
        return slice(o, o + self.components[i].size)

    def split(self, flat) -> list[np.ndarray]:
        """Component matrices (views) of a flat product vector."""
        flat = self.check_flat(flat)
        return [flat[self.slice(i)].reshape(c.shape) for i, c in enumerate(self.components)]

    def concat(self, parts) -> np.ndarray:
        if len(parts) != len(self.components):
            raise ShapeError(f"expected {len(self.components)} parts, got {len(parts)}")
        out = np.empty(self.total_ambient_dim)
        for i, (c, part) in enumerate(zip(self.components, parts)):
            part = np.asarray(part, dtype=np.float64)
            if part.size != c.size:
                raise ShapeError(f"part {i} has {part.size} entries, {c} needs {c.size}")
            out[self.slice(i)] = part.ravel()
        return out

    def check_flat(self, flat) -> np.ndarray:
        flat = np.ascontiguousarray(flat, dtype=np.float64)
        if flat.shape != (self.total_ambient_dim,):
            raise ShapeError(
                f"expected flat vector of length {self.total_ambient_dim}, got {flat.shape}"
            )
        return flat

    def random_point(self, seed) -> np.ndarray:
        """Concatenated random component points; component ``i`` uses ``(*seed, i)``."""
        base = list(np.atleast_1d(seed).tolist())
        return self.concat([mf.random_point(c, base + [i]) for i, c in enumerate(self.components)])

    def zero(self) -> np.ndarray:
        return np.zeros(self.total_ambient_dim)


def build_product(components) -> ProductManifold:
    return ProductManifold(components)


def product_residuals(M: ProductManifold, p) -> np.ndarray:
    """Constraint residual of every component slice."""
    p = M.check_flat(p)
    out = np.empty(len(M.components))
    backend.residuals(*M.layout, p, out)
    return out


def _check_point(M, p, tol=mf.INPUT_TOL):
    p = M.check_flat(p)
    res = product_residuals(M, p)
    bad = np.flatnonzero(~(res <= tol))
    if bad.size:
        i = int(bad[0])
        raise InvalidPoint(
            f"component {i} ({M.components[i]}) is off-manifold: residual {res[i]:.3e}"
        )
    return p


def product_tangent_project(M: ProductManifold, p, ambient) -> np.ndarray:
    """Project a flat ambient vector onto the product tangent space at ``p``."""
    p = _check_point(M, p)
    ambient = M.check_flat(ambient)
    out = np.empty_like(p)
    backend.project(*M.layout, p, ambient, out)
    return out


def product_retract(M: ProductManifold, p, v) -> np.ndarray:
    p = _check_point(M, p)
    v = M.check_flat(v)
    out = np.empty_like(p)
    bad = backend.retract(*M.layout, p, v, 1.0, out)
    if bad >= 0:
        raise DegenerateRetraction(
            f"retraction degenerate on component {bad} ({M.components[bad]})", component=bad
        )
    return out


def product_inner(M: ProductManifold, p, u, v) -> float:
    """Sum of component inner products."""
    ps, us, vs = M.split(p), M.split(u), M.split(v)
    return float(
        sum(mf.inner(c, pi, ui, vi) for c, pi, ui, vi in zip(M.components, ps, us, vs))
    )


def product_grad_norm(M: ProductManifold, g) -> float:
    """``sqrt(sum_i ||g_i||^2)`` over component slices."""
    return float(np.sqrt(sum(float(np.sum(gi * gi)) for gi in M.split(g))))


def _sphere_tensor(u, v, x, y):
    # <C(U,V)X, Y> on the unit sphere with C(U,V)X = <V,X>U - <U,X>V
    return np.sum(v * x) * np.sum(u * y) - np.sum(u * x) * np.sum(v * y)


def _oblique_tensor(u, v, x, y):
    dot = lambda a, b: np.sum(a * b, axis=0)  # noqa: E731
    return np.sum(dot(v, x) * dot(u, y) - dot(u, x) * dot(v, y))


def curvature_tensor_eval(M: ProductManifold, p, u, v, x, y) -> float:
    """Riemann tensor ``<C(u,v)x, y>`` of the product, summed over components.

    Sphere components use the constant-curvature-1 tensor, Oblique components
    treat every column as a unit sphere, Euclidean components contribute 0.
    With this sign convention the sectional curvature is ``C(u,v,v,u)/gram``.
    """
    if any(c.kind is Kind.STIEFEL for c in M.components):
        raise Unsupported("curvature tensor is not available for Stiefel components")
    for c, pi, *vecs in zip(M.components, M.split(p), M.split(u), M.split(v), M.split(x), M.split(y)):
        for w in vecs:
            mf._check_tangent(c, pi, w)
    total = 0.0
    for i, c in enumerate(M.components):
        if c.kind is Kind.EUCLIDEAN:
            continue
        s = M.slice(i)
        args = [np.asarray(w, dtype=np.float64)[s].reshape(c.shape) for w in (u, v, x, y)]
        total += float(_sphere_tensor(*args) if c.kind is Kind.SPHERE else _oblique_tensor(*args))
    return total


def sectional_curvature(M: ProductManifold, p, u, v) -> float:
    uu = product_inner(M, p, u, u)
    vv = product_inner(M, p, v, v)
    uv = product_inner(M, p, u, v)
    gram = uu * vv - uv * uv
    if not gram > GRAM_TOL:
        raise DegeneratePlane(f"tangent vectors span no 2-plane (gram determinant {gram:.3e})")
    return curvature_tensor_eval(M, p, u, v, v, u) / gram


def product_curvature_upper_bound(M: ProductManifold) -> float:
    return max(c.curvature_upper_bound for c in M.components)
