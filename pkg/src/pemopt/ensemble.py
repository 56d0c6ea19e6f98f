"""Assigning the kernels of a layer to products of submanifolds.

Kernel coordinates are 1-based ``(c, d)`` pairs: input channel ``c`` and
output channel ``d``. A plan partitions every coordinate of a layer into
non-empty groups; each group becomes one product manifold whose components
all share the group's manifold kind and the layer's kernel shape.

Strategies:

* ``PI``  -- per input channel, split the output channels (``O_b x {c}``).
* ``PO``  -- per output channel, split the input channels (``Lambda_a x {d}``).
* ``PIO`` -- explicit coordinate sets over both axes.
* ``Whole`` -- every kernel of the layer in a single product.
"""
from __future__ import annotations

import enum
from collections import Counter
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidPartition, ShapeError, TooManyGroups
from .manifolds import Kind, ManifoldSpec
from .product import ProductManifold

__all__ = [
    "Strategy",
    "LayerShape",
    "Group",
    "EnsemblePlan",
    "PlanReport",
    "kss_split",
    "build_pi",
    "build_po",
    "build_pio",
    "build_pio_kss",
    "build_whole",
    "validate_plan",
    "plan_to_products",
    "group_indices",
]


class Strategy(str, enum.Enum):
    PI = "PI"
    PO = "PO"
    PIO = "PIO"
    WHOLE = "Whole"


@dataclass(frozen=True)
class LayerShape:
    layer: int
    kernel_rows: int
    kernel_cols: int
    in_channels: int
    out_channels: int

    def __post_init__(self):
        for name in ("kernel_rows", "kernel_cols", "in_channels", "out_channels"):
            v = getattr(self, name)
            if isinstance(v, bool) or int(v) != v or v < 1:
                raise ShapeError(f"{name} must be a positive integer, got {v!r}")
        if self.layer < 1:
            raise ShapeError(f"layer index must be >= 1, got {self.layer}")

    @property
    def kernel_shape(self):
        return (self.kernel_rows, self.kernel_cols)

    @property
    def bank_shape(self):
        """Shape of the layer's kernel bank array: ``(C, D, A, B)``."""
        return (self.in_channels, self.out_channels, self.kernel_rows, self.kernel_cols)

    @property
    def n_kernels(self):
        return self.in_channels * self.out_channels

    def coordinates(self):
        return [
            (c, d)
            for c in range(1, self.in_channels + 1)
            for d in range(1, self.out_channels + 1)
        ]

    def to_dict(self):
        return {
            "layer": self.layer,
            "kernel_rows": self.kernel_rows,
            "kernel_cols": self.kernel_cols,
            "in_channels": self.in_channels,
            "out_channels": self.out_channels,
        }


@dataclass(frozen=True)
class Group:
    members: tuple
    manifold: ManifoldSpec

    def to_dict(self):
        return {"members": [list(m) for m in self.members], "manifold": self.manifold.to_dict()}


@dataclass(frozen=True)
class EnsemblePlan:
    layer: int
    strategy: Strategy
    groups: tuple

    def to_dict(self):
        return {
            "layer": self.layer,
            "strategy": self.strategy.value,
            "groups": [g.to_dict() for g in self.groups],
        }

    @classmethod
    def from_dict(cls, d):
        groups = tuple(
            Group(tuple(tuple(int(x) for x in m) for m in g["members"]),
                  ManifoldSpec.from_dict(g["manifold"]))
            for g in d["groups"]
        )
        return cls(int(d["layer"]), Strategy(d["strategy"]), groups)

    def kind_counts(self):
        """``{(kind, group size): number of groups}``, handy for summaries."""
        return Counter((g.manifold.kind, len(g.members)) for g in self.groups)


@dataclass
class PlanReport:
    missing: list = field(default_factory=list)
    duplicated: list = field(default_factory=list)
    out_of_range: list = field(default_factory=list)
    empty_groups: list = field(default_factory=list)
    bad_manifolds: list = field(default_factory=list)

    @property
    def ok(self):
        return not (self.missing or self.duplicated or self.out_of_range
                    or self.empty_groups or self.bad_manifolds)

    def __bool__(self):
        return self.ok

    def describe(self):
        if self.ok:
            return "ok"
        parts = []
        for name in ("missing", "duplicated", "out_of_range", "empty_groups", "bad_manifolds"):
            items = getattr(self, name)
            if items:
                parts.append(f"{name.replace('_', ' ')}: {items}")
        return "; ".join(parts)


def kss_split(n: int, m: int) -> list[list[int]]:
    """Split ``1..n`` into ``m`` contiguous near-equal subsets, larger ones first."""
    if n < 1 or m < 1:
        raise ValueError("n and m must be positive")
    if m > n:
        raise TooManyGroups(f"cannot split {n} kernels into {m} non-empty subsets")
    q, r = divmod(n, m)
    out, start = [], 1
    for i in range(m):
        size = q + (1 if i < r else 0)
        out.append(list(range(start, start + size)))
        start += size
    return out


def _spec_for(shape: LayerShape, assignment) -> ManifoldSpec:
    if isinstance(assignment, ManifoldSpec):
        if assignment.shape != shape.kernel_shape:
            raise ShapeError(
                f"{assignment} does not match kernel shape {shape.kernel_shape}"
            )
        return assignment
    return ManifoldSpec(Kind(assignment), shape.kernel_rows, shape.kernel_cols)


def _check_partition(splits, n, axis):
    seen = Counter(i for s in splits for i in s)
    for s in splits:
        if not s:
            raise InvalidPartition(f"empty {axis} subset")
    for i, k in sorted(seen.items()):
        if not 1 <= i <= n:
            raise InvalidPartition(f"{axis} index {i} outside 1..{n}", coordinate=i)
        if k > 1:
            raise InvalidPartition(f"{axis} index {i} appears in {k} subsets", coordinate=i)
    for i in range(1, n + 1):
        if i not in seen:
            raise InvalidPartition(f"{axis} index {i} is not covered", coordinate=i)


def _per_split_specs(shape, splits, assignment):
    if isinstance(assignment, (str, Kind, ManifoldSpec)):
        assignment = [assignment] * len(splits)
    if len(assignment) != len(splits):
        raise InvalidPartition(
            f"{len(splits)} subsets but {len(assignment)} manifold assignments"
        )
    return [_spec_for(shape, a) for a in assignment]


def _finish(layer, strategy, groups, shape):
    plan = EnsemblePlan(
        layer,
        strategy,
        tuple(Group(tuple(sorted(members)), spec) for members, spec in groups),
    )
    report = validate_plan(plan, shape)
    if not report.ok:
        coord = (report.duplicated or report.missing or report.out_of_range or [None])[0]
        raise InvalidPartition(f"invalid ensemble plan: {report.describe()}", coordinate=coord)
    return plan


def build_pi(shape: LayerShape, splits, assignment) -> EnsemblePlan:
    """One product per (input channel, output-channel subset)."""
    _check_partition(splits, shape.out_channels, "output channel")
    specs = _per_split_specs(shape, splits, assignment)
    groups = [
        ([(c, d) for d in split], spec)
        for c in range(1, shape.in_channels + 1)
        for split, spec in zip(splits, specs)
    ]
    return _finish(shape.layer, Strategy.PI, groups, shape)


def build_po(shape: LayerShape, splits, assignment) -> EnsemblePlan:
    """One product per (output channel, input-channel subset)."""
    _check_partition(splits, shape.in_channels, "input channel")
    specs = _per_split_specs(shape, splits, assignment)
    groups = [
        ([(c, d) for c in split], spec)
        for d in range(1, shape.out_channels + 1)
        for split, spec in zip(splits, specs)
    ]
    return _finish(shape.layer, Strategy.PO, groups, shape)


def build_pio(shape: LayerShape, groups) -> EnsemblePlan:
    """Plan from explicit ``(coordinates, manifold)`` pairs covering the layer."""
    groups = [([tuple(int(x) for x in m) for m in members], _spec_for(shape, a))
              for members, a in groups]
    return _finish(shape.layer, Strategy.PIO, groups, shape)


def build_pio_kss(shape: LayerShape, m: int, assignment) -> EnsemblePlan:
    """PIO plan: KSS over the lexicographically ordered kernel coordinates.

    ``assignment`` is cycled over the ``m`` subsets, e.g. ``["Sphere",
    "Stiefel"]`` alternates the two kinds.
    """
    coords = shape.coordinates()
    if isinstance(assignment, (str, Kind, ManifoldSpec)):
        assignment = [assignment]
    groups = [
        ([coords[i - 1] for i in idx], assignment[k % len(assignment)])
        for k, idx in enumerate(kss_split(len(coords), m))
    ]
    return build_pio(shape, groups)


def build_whole(shape: LayerShape, assignment) -> EnsemblePlan:
    spec = _spec_for(shape, assignment)
    return _finish(shape.layer, Strategy.WHOLE, [(shape.coordinates(), spec)], shape)


def validate_plan(plan: EnsemblePlan, shape: LayerShape) -> PlanReport:
    """Check that the plan covers every kernel coordinate exactly once."""
    report = PlanReport()
    counts = Counter()
    for gi, g in enumerate(plan.groups):
        if not g.members:
            report.empty_groups.append(gi)
        if g.manifold.shape != shape.kernel_shape:
            report.bad_manifolds.append(gi)
        counts.update(tuple(m) for m in g.members)
    valid = set(shape.coordinates())
    report.out_of_range = sorted(c for c in counts if c not in valid)
    report.duplicated = sorted(c for c, k in counts.items() if k > 1)
    report.missing = sorted(c for c in valid if c not in counts)
    return report


def plan_to_products(plan: EnsemblePlan, shape: LayerShape) -> list[ProductManifold]:
    """One product manifold per group, components in member order."""
    report = validate_plan(plan, shape)
    if not report.ok:
        raise InvalidPartition(f"invalid ensemble plan: {report.describe()}")
    return [ProductManifold([g.manifold] * len(g.members)) for g in plan.groups]


def group_indices(plan: EnsemblePlan, shape: LayerShape) -> list[np.ndarray]:
    """Flat indices into the ``(C, D, A, B)`` kernel bank for each group."""
    ab = shape.kernel_rows * shape.kernel_cols
    block = np.arange(ab, dtype=np.intp)
    out = []
    for g in plan.groups:
        starts = [((c - 1) * shape.out_channels + (d - 1)) * ab for c, d in g.members]
        out.append(np.concatenate([s + block for s in starts]))
    return out
