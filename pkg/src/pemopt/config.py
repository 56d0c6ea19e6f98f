"""Experiment configuration: a single JSON document.

See ``docs/config.md`` for the full schema. Parsing validates everything,
including the ensemble plans, before any computation or file creation.
"""
from __future__ import annotations

import json
import os
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from . import ensemble as en
from .errors import ConfigError, PemError
from .gsgd import DENOMINATORS, OptimizerConfig, RhoPolicy, ScheduleConfig
from .manifolds import Kind, ManifoldSpec
from .objectives import (
    ConvNet,
    MLP,
    Procrustes,
    Rayleigh,
    load_dataset,
    make_synthetic_dataset,
)

_TOP_KEYS = {
    "objective", "layers", "schedule", "rho_policy", "denominator",
    "stiefel_curvature", "iterations", "seed", "batch_size", "strict", "out_dir",
}


@dataclass(frozen=True)
class ExperimentConfig:
    objective: dict
    layers: tuple
    optimizer: OptimizerConfig
    stiefel_curvature: float
    iterations: int
    seed: int
    batch_size: int | None
    strict: bool
    out_dir: Path
    base_dir: Path

    def with_overrides(self, seed=None, iterations=None, out_dir=None, strict=None):
        return replace(
            self,
            seed=self.seed if seed is None else int(seed),
            iterations=self.iterations if iterations is None else _nonneg_int(iterations, "iterations"),
            out_dir=self.out_dir if out_dir is None else Path(out_dir),
            strict=self.strict or bool(strict),
        )


def _nonneg_int(v, name):
    if isinstance(v, bool) or not isinstance(v, int) or v < 0:
        raise ConfigError(f"{name} must be a non-negative integer, got {v!r}")
    return v


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    try:
        raw = json.loads(path.read_text())
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from None
    return parse_config(raw, base_dir=path.parent)


def parse_config(raw, base_dir=".") -> ExperimentConfig:
    if not isinstance(raw, dict):
        raise ConfigError("config must be a JSON object")
    unknown = set(raw) - _TOP_KEYS
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    if "objective" not in raw or not isinstance(raw["objective"], dict):
        raise ConfigError("config needs an 'objective' object")
    layers = raw.get("layers", [])
    if not isinstance(layers, list) or not all(isinstance(x, dict) for x in layers):
        raise ConfigError("'layers' must be a list of objects")
    denominator = raw.get("denominator", "sphere")
    if denominator not in DENOMINATORS:
        raise ConfigError(f"denominator must be one of {list(DENOMINATORS)}")
    try:
        optimizer = OptimizerConfig(
            schedule=ScheduleConfig.from_dict(raw.get("schedule", {})),
            rho_policy=RhoPolicy.from_dict(raw.get("rho_policy", {})),
            denominator=denominator,
        )
        stiefel_curvature = float(raw.get("stiefel_curvature", 1.0))
    except (ValueError, TypeError) as exc:
        raise ConfigError(str(exc)) from None
    batch_size = raw.get("batch_size")
    if batch_size is not None and (not isinstance(batch_size, int) or batch_size < 1):
        raise ConfigError("batch_size must be a positive integer or null")
    seed = raw.get("seed", 0)
    if isinstance(seed, bool) or not isinstance(seed, int) or seed < 0:
        raise ConfigError("seed must be a non-negative integer")
    cfg = ExperimentConfig(
        objective=raw["objective"],
        layers=tuple(layers),
        optimizer=optimizer,
        stiefel_curvature=stiefel_curvature,
        iterations=_nonneg_int(raw.get("iterations", 1000), "iterations"),
        seed=seed,
        batch_size=batch_size,
        strict=bool(raw.get("strict", False)),
        out_dir=Path(raw.get("out_dir", "run")),
        base_dir=Path(base_dir),
    )
    # surface objective/plan errors at parse time
    build_problem(cfg)
    return cfg


def _matrix(v, name):
    try:
        m = np.array(v, dtype=np.float64)
    except (TypeError, ValueError):
        raise ConfigError(f"{name} must be a numeric matrix") from None
    if m.ndim != 2 or not np.all(np.isfinite(m)):
        raise ConfigError(f"{name} must be a finite 2-D matrix")
    return m


def _dataset(spec, base_dir):
    if not isinstance(spec, dict):
        raise ConfigError("objective.dataset must be an object")
    if "path" in spec:
        p = Path(spec["path"])
        p = p if p.is_absolute() else Path(base_dir) / p
        try:
            return load_dataset(p)
        except (OSError, ValueError) as exc:
            raise ConfigError(f"cannot load dataset {p}: {exc}") from None
    allowed = {"classes", "per_class", "seed", "size", "channels", "noise"}
    if set(spec) - allowed:
        raise ConfigError(f"unknown dataset keys: {sorted(set(spec) - allowed)}")
    try:
        return make_synthetic_dataset(
            int(spec.get("classes", 4)),
            int(spec.get("per_class", 64)),
            seed=int(spec.get("seed", 0)),
            size=int(spec.get("size", 8)),
            channels=int(spec.get("channels", 2)),
            noise=float(spec.get("noise", 1.0)),
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def build_objective(spec, base_dir="."):
    name = spec.get("name")
    try:
        if name == "rayleigh":
            if "matrix" in spec:
                return Rayleigh(_matrix(spec["matrix"], "objective.matrix"))
            if "diag" in spec:
                return Rayleigh(np.diag(np.asarray(spec["diag"], dtype=np.float64)))
            if "random" in spec:
                r = spec["random"]
                G = np.random.default_rng(int(r.get("seed", 0))).standard_normal((int(r["n"]),) * 2)
                return Rayleigh(0.5 * (G + G.T))
            raise ConfigError("rayleigh needs 'matrix', 'diag' or 'random'")
        if name == "procrustes":
            if "target" in spec:
                Y = _matrix(spec["target"], "objective.target")
            elif "random" in spec:
                r = spec["random"]
                Y = np.random.default_rng(int(r.get("seed", 0))).standard_normal((int(r["n"]), int(r["p"])))
            else:
                raise ConfigError("procrustes needs 'target' or 'random'")
            X = spec.get("conditioning")
            return Procrustes(Y, None if X is None else _matrix(X, "objective.conditioning"))
        if name == "mlp":
            return MLP(_dataset(spec.get("dataset", {}), base_dir), hidden=int(spec.get("hidden", 16)))
        if name == "conv":
            return ConvNet(
                _dataset(spec.get("dataset", {}), base_dir),
                out_channels=int(spec.get("out_channels", 4)),
                kernel=int(spec.get("kernel", 3)),
            )
    except ConfigError:
        raise
    except (PemError, KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"invalid objective: {exc}") from None
    raise ConfigError(f"unknown objective {name!r}; expected rayleigh, procrustes, mlp or conv")


def default_strategy(layer: int, n_layers: int) -> en.Strategy:
    """Layer conventions: PO at the input layer, PI at the top, PIO in between."""
    if n_layers == 1:
        return en.Strategy.WHOLE
    if layer == 1:
        return en.Strategy.PO
    if layer == n_layers:
        return en.Strategy.PI
    return en.Strategy.PIO


def _manifold(entry, shape, stiefel_curvature):
    if isinstance(entry, dict):
        spec = ManifoldSpec.from_dict({"rows": shape.kernel_rows, "cols": shape.kernel_cols, **entry})
    else:
        spec = ManifoldSpec(Kind(entry), shape.kernel_rows, shape.kernel_cols)
    if spec.kind is Kind.STIEFEL and not isinstance(entry, dict):
        spec = replace(spec, stiefel_curvature=stiefel_curvature)
    return spec


def build_plan(entry: dict, shape: en.LayerShape, n_layers: int, default_kind: str,
               stiefel_curvature: float = 1.0) -> en.EnsemblePlan:
    allowed = {"strategy", "manifolds", "splits", "kss", "groups", "shape"}
    if set(entry) - allowed:
        raise ConfigError(f"layer {shape.layer}: unknown keys {sorted(set(entry) - allowed)}")
    if "shape" in entry and entry["shape"] != shape.to_dict():
        raise ConfigError(
            f"layer {shape.layer}: declared shape {entry['shape']} does not match "
            f"objective shape {shape.to_dict()}"
        )
    try:
        strategy = en.Strategy(entry.get("strategy", default_strategy(shape.layer, n_layers)))
        kinds = entry.get("manifolds", [default_kind])
        if isinstance(kinds, (str, dict)):
            kinds = [kinds]
        specs = [_manifold(k, shape, stiefel_curvature) for k in kinds]
        if strategy is en.Strategy.WHOLE:
            if len(specs) != 1:
                raise ConfigError(f"layer {shape.layer}: Whole takes exactly one manifold")
            return en.build_whole(shape, specs[0])
        if strategy is en.Strategy.PIO:
            if "groups" in entry:
                groups = [(g["members"], _manifold(g["manifold"], shape, stiefel_curvature))
                          for g in entry["groups"]]
                return en.build_pio(shape, groups)
            return en.build_pio_kss(shape, int(entry.get("kss", len(specs))), specs)
        n = shape.out_channels if strategy is en.Strategy.PI else shape.in_channels
        splits = entry.get("splits") or en.kss_split(n, int(entry.get("kss", len(specs))))
        if len(specs) == 1:
            specs = specs * len(splits)
        elif len(specs) != len(splits):
            specs = [specs[i % len(specs)] for i in range(len(splits))]
        build = en.build_pi if strategy is en.Strategy.PI else en.build_po
        return build(shape, [list(s) for s in splits], specs)
    except ConfigError:
        raise
    except (PemError, KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"layer {shape.layer}: {exc}") from None


def build_problem(cfg: ExperimentConfig):
    """Objective, layer shapes and validated plans for a config."""
    objective = build_objective(cfg.objective, cfg.base_dir)
    shapes = objective.layers
    entries = list(cfg.layers)
    if len(entries) > len(shapes):
        raise ConfigError(f"config lists {len(entries)} layers, objective has {len(shapes)}")
    entries += [{}] * (len(shapes) - len(entries))
    plans = [
        build_plan(e, s, len(shapes), objective.default_kinds[i], cfg.stiefel_curvature)
        for i, (e, s) in enumerate(zip(entries, shapes))
    ]
    return objective, shapes, plans


def resolve_out_dir(cfg: ExperimentConfig) -> Path:
    out = cfg.out_dir
    return out if out.is_absolute() else Path(os.getcwd()) / out
