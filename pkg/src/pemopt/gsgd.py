"""Geometry-aware SGD over ensembles of product manifolds.

Each step, for every product manifold (PEM) of every layer:

1. project the Euclidean gradient onto the product tangent space,
2. scale it by ``-g(t) / denom`` where ``g`` is the learning-rate schedule
   and ``denom >= 1`` bounds the effective step using the gradient norm,
   a distance estimate ``rho`` and the curvature bound ``c_hat``,
3. retract back onto the product.

The time index ``t`` advances once per call to :func:`gsgd_step`, i.e. once
per pass over all layers.
"""
from __future__ import annotations

import csv
import enum
import math
import warnings
from collections import Counter
from dataclasses import dataclass, field, replace

import numpy as np

from . import backend
from . import manifolds as mf
from .ensemble import EnsemblePlan, LayerShape, group_indices, plan_to_products
from .errors import DegenerateRetraction, NonFiniteGradient, ShapeError
from .product import ProductManifold, product_curvature_upper_bound

__all__ = [
    "ScheduleMode",
    "ScheduleConfig",
    "RhoPolicy",
    "OptimizerConfig",
    "LayerEnsemble",
    "OptimizerState",
    "StepDiagnostics",
    "TraceRecord",
    "Trajectory",
    "RobbinsMonroWarning",
    "learning_rate",
    "adaptive_denominator",
    "sphere_denominator",
    "denominator_branch",
    "init_state",
    "gsgd_step",
    "train",
    "write_trace_csv",
    "TRACE_COLUMNS",
]

TRACE_COLUMNS = ("iteration", "loss", "grad_norm_max", "constraint_residual_max", "learning_rate")


class RobbinsMonroWarning(UserWarning):
    """The schedule does not have a divergent sum with a convergent sum of squares."""


class ScheduleMode(str, enum.Enum):
    INVERSE_TIME = "InverseTime"
    CONSTANT = "Constant"


@dataclass(frozen=True)
class ScheduleConfig:
    """``g(t) = base_rate / (1 + decay * t) ** exponent`` (or constant)."""

    base_rate: float = 0.1
    decay: float = 1e-3
    exponent: float = 1.0
    mode: ScheduleMode = ScheduleMode.INVERSE_TIME

    def __post_init__(self):
        object.__setattr__(self, "mode", ScheduleMode(self.mode))
        if not self.base_rate > 0:
            raise ValueError("base_rate must be positive")
        if not self.decay >= 0:
            raise ValueError("decay must be non-negative")
        if self.mode is ScheduleMode.INVERSE_TIME and not 0.5 < self.exponent <= 1.0:
            raise ValueError("exponent must lie in (0.5, 1] for InverseTime")

    @property
    def robbins_monro(self) -> bool:
        return self.mode is ScheduleMode.INVERSE_TIME and self.decay > 0

    def to_dict(self):
        return {"mode": self.mode.value, "base_rate": self.base_rate,
                "decay": self.decay, "exponent": self.exponent}

    @classmethod
    def from_dict(cls, d):
        return cls(
            base_rate=float(d.get("base_rate", 0.1)),
            decay=float(d.get("decay", 1e-3)),
            exponent=float(d.get("exponent", 1.0)),
            mode=ScheduleMode(d.get("mode", "InverseTime")),
        )


def learning_rate(t: int, sched: ScheduleConfig) -> float:
    if t < 0:
        raise ValueError("iteration must be non-negative")
    if sched.mode is ScheduleMode.CONSTANT:
        return float(sched.base_rate)
    return sched.base_rate / (1.0 + sched.decay * t) ** sched.exponent


def adaptive_denominator(R: float, rho: float, c_hat: float) -> float:
    """``max{1, R^2 max{(2 rho + R)^2, 1 + c_hat (rho + R)}}^(1/2)``."""
    return denominator_branch(R, rho, c_hat)[0]


def sphere_denominator(R: float) -> float:
    """Closed form for unit-sphere components: ``max{1, R^2 (2 + R)^2}^(1/2)``."""
    return math.sqrt(max(1.0, R * R * (2.0 + R) * (2.0 + R)))


def denominator_branch(R, rho, c_hat):
    """Adaptive denominator together with the branch that determined it.

    The branch is ``"floor"`` when the ``max{1, .}`` clamp engages, otherwise
    ``"distance"`` or ``"curvature"`` depending on which term of the inner max
    dominates.
    """
    dist = (2.0 * rho + R) ** 2
    curv = 1.0 + c_hat * (rho + R)
    gamma2, branch = (dist, "distance") if dist >= curv else (curv, "curvature")
    gamma1 = R * R * gamma2
    if gamma1 <= 1.0:
        return 1.0, "floor"
    return math.sqrt(gamma1), branch


class RhoKind(str, enum.Enum):
    CURVATURE_INVERSE = "CurvatureInverse"
    FIXED = "Fixed"
    ZERO = "Zero"


@dataclass(frozen=True)
class RhoPolicy:
    """Stand-in for the unknown geodesic distance to the minimiser.

    ``CurvatureInverse`` uses ``min(1/c_hat, value)`` (``value`` when the
    product is flat), ``Fixed`` uses ``value``, ``Zero`` uses 0.
    """

    kind: RhoKind = RhoKind.CURVATURE_INVERSE
    value: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "kind", RhoKind(self.kind))
        if not self.value >= 0:
            raise ValueError("rho value must be non-negative")

    def rho(self, c_hat: float) -> float:
        if self.kind is RhoKind.ZERO:
            return 0.0
        if self.kind is RhoKind.FIXED or c_hat <= 0:
            return float(self.value)
        return min(1.0 / c_hat, float(self.value))

    def to_dict(self):
        return {"kind": self.kind.value, "value": self.value}

    @classmethod
    def from_dict(cls, d):
        return cls(RhoKind(d.get("kind", "CurvatureInverse")), float(d.get("value", 1.0)))


DENOMINATORS = ("sphere", "adaptive", "unit")


@dataclass(frozen=True)
class OptimizerConfig:
    """``denominator`` selects the step regulariser.

    ``"sphere"`` applies the unit-sphere closed form to every product,
    ``"adaptive"`` uses the general form with ``rho_policy`` and the product's
    curvature bound, ``"unit"`` disables it (plain Riemannian SGD).
    """

    schedule: ScheduleConfig = field(default_factory=ScheduleConfig)
    rho_policy: RhoPolicy = field(default_factory=RhoPolicy)
    denominator: str = "sphere"

    def __post_init__(self):
        if self.denominator not in DENOMINATORS:
            raise ValueError(f"denominator must be one of {DENOMINATORS}")

    def denom(self, R, c_hat):
        if self.denominator == "unit":
            return 1.0, "unit"
        if self.denominator == "sphere":
            d = sphere_denominator(R)
            return d, ("floor" if d == 1.0 else "distance")
        return denominator_branch(R, self.rho_policy.rho(c_hat), c_hat)


@dataclass(frozen=True)
class LayerEnsemble:
    """A layer's shape and plan plus the derived product manifolds."""

    shape: LayerShape
    plan: EnsemblePlan
    products: tuple
    indices: tuple
    curvature_bounds: tuple

    @classmethod
    def build(cls, shape: LayerShape, plan: EnsemblePlan) -> "LayerEnsemble":
        products = tuple(plan_to_products(plan, shape))
        return cls(
            shape,
            plan,
            products,
            tuple(group_indices(plan, shape)),
            tuple(product_curvature_upper_bound(M) for M in products),
        )

    def gather(self, bank) -> list[np.ndarray]:
        flat = np.asarray(bank, dtype=np.float64).reshape(-1)
        if flat.size != int(np.prod(self.shape.bank_shape)):
            raise ShapeError(f"kernel bank of layer {self.shape.layer} has wrong size")
        return [flat[idx] for idx in self.indices]

    def scatter(self, points) -> np.ndarray:
        flat = np.empty(int(np.prod(self.shape.bank_shape)))
        for idx, p in zip(self.indices, points):
            flat[idx] = p
        return flat.reshape(self.shape.bank_shape)


@dataclass(frozen=True)
class OptimizerState:
    t: int
    layers: tuple
    points: tuple
    config: OptimizerConfig

    def kernels(self) -> list[np.ndarray]:
        """Kernel banks ``(C, D, A, B)`` of every layer."""
        return [layer.scatter(pts) for layer, pts in zip(self.layers, self.points)]

    def max_residual(self) -> float:
        worst = 0.0
        for layer, pts in zip(self.layers, self.points):
            for M, p in zip(layer.products, pts):
                out = np.empty(len(M.components))
                backend.residuals(*M.layout, p, out)
                worst = max(worst, float(out.max()))
        return worst


@dataclass(frozen=True)
class StepDiagnostics:
    layer: int
    group: int
    R: float
    g_t: float
    denom: float
    branch: str
    residual: float


@dataclass(frozen=True)
class TraceRecord:
    iteration: int
    loss: float
    grad_norm_max: float
    constraint_residual_max: float
    learning_rate: float

    def row(self):
        return [str(self.iteration)] + [
            repr(float(v)) for v in (self.loss, self.grad_norm_max,
                                     self.constraint_residual_max, self.learning_rate)
        ]


@dataclass
class Trajectory:
    records: list
    state: OptimizerState
    branch_counts: Counter = field(default_factory=Counter)

    def __len__(self):
        return len(self.records)


def init_state(shapes, plans, config: OptimizerConfig | None = None, seed=0,
               kernels=None, t: int = 0) -> OptimizerState:
    """Build the optimizer state for the given layers and plans.

    Without ``kernels`` every component starts at a seeded random point;
    with ``kernels`` (one ``(C, D, A, B)`` bank per layer) each supplied
    kernel is mapped onto its component manifold.
    """
    config = config or OptimizerConfig()
    if len(shapes) != len(plans):
        raise ShapeError(f"{len(shapes)} layer shapes but {len(plans)} plans")
    layers = tuple(LayerEnsemble.build(s, p) for s, p in zip(shapes, plans))
    points = []
    for li, layer in enumerate(layers):
        if kernels is None:
            pts = [M.random_point([seed, li, gi]) for gi, M in enumerate(layer.products)]
        else:
            pts = []
            for M, flat in zip(layer.products, layer.gather(kernels[li])):
                parts = [mf.project_to_manifold(c, part) for c, part in zip(M.components, M.split(flat))]
                pts.append(M.concat(parts))
        points.append(tuple(pts))
    return OptimizerState(t, layers, tuple(points), config)


def gsgd_step(state: OptimizerState, euclidean_grads):
    """One G-SGD iteration over every PEM of every layer.

    ``euclidean_grads[l][m]`` is the flat Euclidean gradient for PEM ``m`` of
    layer ``l``. Returns ``(new_state, diagnostics)``; ``state`` itself is
    never modified.
    """
    if len(euclidean_grads) != len(state.layers):
        raise ShapeError("gradient list does not match the number of layers")
    grads = []
    for layer, pts, lg in zip(state.layers, state.points, euclidean_grads):
        if len(lg) != len(pts):
            raise ShapeError(f"layer {layer.shape.layer}: expected {len(pts)} PEM gradients")
        row = []
        for M, g in zip(layer.products, lg):
            g = M.check_flat(g)
            if not np.all(np.isfinite(g)):
                raise NonFiniteGradient(
                    f"non-finite gradient at layer {layer.shape.layer}", iteration=state.t
                )
            row.append(g)
        grads.append(row)

    cfg = state.config
    g_t = learning_rate(state.t, cfg.schedule)
    new_points, diags = [], []
    for li, (layer, pts, lg) in enumerate(zip(state.layers, state.points, grads)):
        row = []
        for gi, (M, p, g, c_hat) in enumerate(zip(layer.products, pts, lg, layer.curvature_bounds)):
            layout = M.layout
            tangent = np.empty_like(p)
            R = math.sqrt(backend.project(*layout, p, g, tangent))
            denom, branch = cfg.denom(R, c_hat)
            new = np.empty_like(p)
            bad = backend.retract(*layout, p, tangent, -(g_t / denom), new)
            if bad >= 0:
                raise DegenerateRetraction(
                    f"layer {layer.shape.layer} group {gi}: degenerate retraction on "
                    f"component {bad}", component=bad,
                )
            res = np.empty(len(M.components))
            backend.residuals(*layout, new, res)
            row.append(new)
            diags.append(StepDiagnostics(li, gi, R, g_t, denom, branch, float(res.max())))
        new_points.append(tuple(row))
    return replace(state, t=state.t + 1, points=tuple(new_points)), diags


def train(objective, state: OptimizerState, T: int, seed=0, batch_size=None,
          callback=None) -> Trajectory:
    """Run ``T`` G-SGD iterations of ``objective`` starting from ``state``.

    ``objective.loss_and_grad(kernels, batch)`` must return the loss and one
    Euclidean gradient bank per layer. Mini-batches (when ``batch_size`` is
    set and the objective has data) depend only on ``(seed, t)``, so a run
    can be split and resumed without changing the result.
    """
    if not state.config.schedule.robbins_monro:
        warnings.warn(
            "learning-rate schedule does not satisfy sum g = inf, sum g^2 < inf",
            RobbinsMonroWarning,
            stacklevel=2,
        )
    records, branches = [], Counter()
    for _ in range(T):
        t = state.t
        batch = objective.batch(t, seed, batch_size) if batch_size else None
        loss, bank_grads = objective.loss_and_grad(state.kernels(), batch)
        if not math.isfinite(loss):
            raise NonFiniteGradient(f"non-finite loss at iteration {t}", iteration=t)
        pem_grads = [layer.gather(g) for layer, g in zip(state.layers, bank_grads)]
        try:
            state, diags = gsgd_step(state, pem_grads)
        except NonFiniteGradient as exc:
            exc.iteration = t
            raise
        branches.update(d.branch for d in diags)
        rec = TraceRecord(
            t,
            float(loss),
            max(d.R for d in diags),
            max(d.residual for d in diags),
            diags[0].g_t,
        )
        records.append(rec)
        if callback is not None:
            callback(rec, state)
    return Trajectory(records, state, branches)


def write_trace_csv(records, fh, header=True):
    """Write trace rows; floats use ``repr`` so output is byte-reproducible."""
    w = csv.writer(fh, lineterminator="\n")
    if header:
        w.writerow(TRACE_COLUMNS)
    for r in records:
        w.writerow(r.row())
