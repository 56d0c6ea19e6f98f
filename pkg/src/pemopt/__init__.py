"""Geometry-aware SGD on ensembles of products of kernel submanifolds."""
from . import backend
from .ensemble import (
    EnsemblePlan,
    LayerShape,
    Strategy,
    build_pi,
    build_pio,
    build_pio_kss,
    build_po,
    build_whole,
    kss_split,
    plan_to_products,
    validate_plan,
)
from .errors import *  # noqa: F401,F403
from .gsgd import (
    OptimizerConfig,
    OptimizerState,
    RhoPolicy,
    ScheduleConfig,
    adaptive_denominator,
    gsgd_step,
    init_state,
    learning_rate,
    sphere_denominator,
    train,
)
from .manifolds import (
    Euclidean,
    Kind,
    ManifoldSpec,
    Oblique,
    Sphere,
    Stiefel,
    constraint_residual,
    exp_map,
    geodesic_distance,
    inner,
    project_to_manifold,
    random_point,
    retract,
    tangent_project,
)
from .product import (
    ProductManifold,
    build_product,
    curvature_tensor_eval,
    product_curvature_upper_bound,
    product_grad_norm,
    product_inner,
    product_retract,
    product_tangent_project,
    sectional_curvature,
)

__version__ = "0.1.0"
BACKEND = backend.NAME
