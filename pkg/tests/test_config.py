import json
import re
from pathlib import Path

import pytest

from pemopt.config import build_plan, build_problem, default_strategy, parse_config
from pemopt.ensemble import LayerShape, Strategy
from pemopt.errors import ConfigError
from pemopt.manifolds import Kind

DOCS = Path(__file__).resolve().parents[1] / "docs" / "config.md"


def test_documented_example_parses():
    block = re.search(r"```json\n(.*?)```", DOCS.read_text(), re.S).group(1)
    cfg = parse_config(json.loads(block))
    _, shapes, plans = build_problem(cfg)
    assert plans[0].strategy is Strategy.PIO and len(plans[0].groups) == 4
    assert cfg.strict and cfg.iterations == 5000


def test_default_strategies():
    assert default_strategy(1, 1) is Strategy.WHOLE
    assert [default_strategy(l, 4) for l in (1, 2, 3, 4)] == [
        Strategy.PO, Strategy.PIO, Strategy.PIO, Strategy.PI]


def test_manifold_cycling_and_curvature():
    shape = LayerShape(1, 3, 3, 2, 6)
    plan = build_plan({"strategy": "PI", "kss": 3, "manifolds": ["Sphere", "Stiefel"]},
                      shape, 2, "Euclidean", stiefel_curvature=0.5)
    kinds = [g.manifold.kind for g in plan.groups[:3]]
    assert kinds == [Kind.SPHERE, Kind.STIEFEL, Kind.SPHERE]
    assert plan.groups[1].manifold.curvature_upper_bound == 0.5


def test_explicit_pio_groups():
    shape = LayerShape(1, 2, 2, 1, 2)
    entry = {"strategy": "PIO", "groups": [
        {"members": [[1, 2]], "manifold": "Sphere"},
        {"members": [[1, 1]], "manifold": {"kind": "Stiefel", "curvature_bound": 2.0}},
    ]}
    plan = build_plan(entry, shape, 1, "Sphere")
    assert plan.groups[1].manifold.curvature_upper_bound == 2.0


@pytest.mark.parametrize("raw", [
    [],
    {"objective": {"name": "rayleigh"}},
    {"objective": {"name": "rayleigh", "diag": [1, 2]}, "iterations": -1},
    {"objective": {"name": "rayleigh", "diag": [1, 2]}, "denominator": "huge"},
    {"objective": {"name": "rayleigh", "diag": [1, 2]}, "schedule": {"exponent": 2}},
    {"objective": {"name": "rayleigh", "diag": [1, 2]}, "layers": [{"shape": {"layer": 9}}]},
    {"objective": {"name": "rayleigh", "diag": [1, 2]}, "layers": [{}, {}]},
    {"objective": {"name": "rayleigh", "diag": [1, 2]}, "batch_size": 0},
    {"objective": {"name": "conv", "dataset": {"classes": 1}}},
])
def test_rejections(raw):
    with pytest.raises(ConfigError):
        parse_config(raw)
