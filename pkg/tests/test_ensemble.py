import itertools
import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from pemopt.ensemble import (
    EnsemblePlan,
    Group,
    LayerShape,
    Strategy,
    build_pi,
    build_pio,
    build_pio_kss,
    build_po,
    build_whole,
    group_indices,
    kss_split,
    plan_to_products,
    validate_plan,
)
from pemopt.errors import InvalidPartition, ShapeError, TooManyGroups
from pemopt.manifolds import Kind, Sphere, Stiefel

SHAPE = LayerShape(1, 3, 3, 4, 6)


def brute_force_kss(n, m):
    """Every contiguous split into m parts with sizes within 1, larger first."""
    found = []
    for cuts in itertools.combinations(range(1, n), m - 1):
        bounds = (0, *cuts, n)
        sizes = [b - a for a, b in zip(bounds, bounds[1:])]
        if max(sizes) - min(sizes) <= 1 and sizes == sorted(sizes, reverse=True):
            found.append([list(range(a + 1, b + 1)) for a, b in zip(bounds, bounds[1:])])
    return found


class TestKss:
    def test_examples(self):
        assert kss_split(6, 2) == [[1, 2, 3], [4, 5, 6]]
        assert kss_split(5, 1) == [[1, 2, 3, 4, 5]]
        assert kss_split(5, 2) == [[1, 2, 3], [4, 5]]

    @pytest.mark.parametrize("n,m", [(n, m) for n in range(1, 13) for m in range(1, n + 1)])
    def test_unique_and_matches_enumeration(self, n, m):
        candidates = brute_force_kss(n, m)
        assert candidates == [kss_split(n, m)]

    def test_too_many(self):
        with pytest.raises(TooManyGroups):
            kss_split(3, 4)


class TestExampleLayer:
    def test_pi(self):
        plan = build_pi(SHAPE, [[1, 2, 3], [4, 5, 6]], ["Sphere", "Stiefel"])
        assert plan.kind_counts() == {(Kind.SPHERE, 3): 4, (Kind.STIEFEL, 3): 4}
        for g in plan.groups:
            assert len({c for c, _ in g.members}) == 1

    def test_po(self):
        plan = build_po(SHAPE, [[1, 2], [3, 4]], ["Sphere", "Stiefel"])
        assert plan.kind_counts() == {(Kind.SPHERE, 2): 6, (Kind.STIEFEL, 2): 6}
        for g in plan.groups:
            assert len({d for _, d in g.members}) == 1

    def test_pio_ten_groups(self):
        plan = build_pio_kss(SHAPE, 10, ["Stiefel", "Sphere"])
        assert len(plan.groups) == 10
        kinds = [g.manifold.kind for g in plan.groups]
        assert kinds.count(Kind.STIEFEL) == 5 and kinds.count(Kind.SPHERE) == 5
        assert sum(len(g.members) for g in plan.groups) == 24
        assert validate_plan(plan, SHAPE).ok

    def test_products(self):
        plan = build_pi(SHAPE, [[1, 2, 3], [4, 5, 6]], ["Sphere", "Stiefel"])
        products = plan_to_products(plan, SHAPE)
        assert len(products) == 8
        assert products[0].components == (Sphere(3, 3),) * 3
        assert products[0].total_ambient_dim == 27
        assert products[1].components == (Stiefel(3, 3),) * 2 + (Stiefel(3, 3),)


class TestTrivialCases:
    def test_single_split(self):
        assert len(build_pi(SHAPE, [list(range(1, 7))], "Sphere").groups) == 4
        assert len(build_po(SHAPE, [[1, 2, 3, 4]], "Sphere").groups) == 6

    def test_one_channel(self):
        shape = LayerShape(1, 3, 3, 1, 4)
        plan = build_pi(shape, [[1, 2], [3, 4]], "Sphere")
        assert [g.members for g in plan.groups] == [((1, 1), (1, 2)), ((1, 3), (1, 4))]

    def test_whole(self):
        plan = build_whole(SHAPE, "Oblique")
        assert len(plan.groups) == 1 and len(plan.groups[0].members) == 24

    def test_overlap_rejected(self):
        groups = [([(1, 1), (1, 2)], "Sphere"), ([(1, 1)], "Sphere")]
        with pytest.raises(InvalidPartition) as info:
            build_pio(LayerShape(1, 2, 2, 1, 2), groups)
        assert info.value.coordinate == (1, 1)

    def test_bad_split(self):
        with pytest.raises(InvalidPartition):
            build_pi(SHAPE, [[1, 2, 3], [3, 4, 5, 6]], "Sphere")
        with pytest.raises(InvalidPartition):
            build_po(SHAPE, [[1, 2]], "Sphere")

    def test_manifold_shape_checked(self):
        with pytest.raises(ShapeError):
            build_whole(SHAPE, Sphere(2, 2))


class TestValidate:
    def test_missing(self):
        shape = LayerShape(1, 2, 2, 2, 3)
        coords = [c for c in shape.coordinates() if c != (2, 3)]
        plan = EnsemblePlan(1, Strategy.PIO, (Group(tuple(coords), Sphere(2, 2)),))
        report = validate_plan(plan, shape)
        assert not report.ok and report.missing == [(2, 3)]

    def test_duplicated_and_range(self):
        shape = LayerShape(1, 2, 2, 1, 2)
        plan = EnsemblePlan(1, Strategy.PIO, (
            Group(((1, 1), (1, 2)), Sphere(2, 2)),
            Group(((1, 2), (3, 1)), Sphere(2, 2)),
        ))
        report = validate_plan(plan, shape)
        assert report.duplicated == [(1, 2)] and report.out_of_range == [(3, 1)]
        assert "duplicated" in report.describe()

    def test_json_roundtrip(self):
        plan = build_pio_kss(SHAPE, 5, [Sphere(3, 3), Stiefel(3, 3, curvature=0.5)])
        again = EnsemblePlan.from_dict(json.loads(json.dumps(plan.to_dict())))
        assert again == plan
        assert [M.layout[1].tolist() for M in plan_to_products(again, SHAPE)] == \
               [M.layout[1].tolist() for M in plan_to_products(plan, SHAPE)]


def test_group_indices_address_the_bank():
    shape = LayerShape(1, 2, 2, 3, 2)
    plan = build_po(shape, [[1, 3], [2]], "Sphere")
    bank = np.arange(np.prod(shape.bank_shape)).reshape(shape.bank_shape)
    idx = group_indices(plan, shape)
    for g, ix in zip(plan.groups, idx):
        expected = np.concatenate([bank[c - 1, d - 1].ravel() for c, d in g.members])
        np.testing.assert_array_equal(bank.ravel()[ix], expected)
    assert sorted(np.concatenate(idx).tolist()) == list(range(bank.size))


@settings(max_examples=200, deadline=None)
@given(st.integers(1, 6), st.integers(1, 6), st.data())
def test_random_plans_cover_exactly(C, D, data):
    shape = LayerShape(1, 2, 2, C, D)
    strategy = data.draw(st.sampled_from(list(Strategy)))
    if strategy is Strategy.PI:
        plan = build_pi(shape, kss_split(D, data.draw(st.integers(1, D))), "Sphere")
    elif strategy is Strategy.PO:
        plan = build_po(shape, kss_split(C, data.draw(st.integers(1, C))), "Oblique")
    elif strategy is Strategy.PIO:
        plan = build_pio_kss(shape, data.draw(st.integers(1, C * D)), ["Sphere", "Stiefel"])
    else:
        plan = build_whole(shape, "Euclidean")
    assert validate_plan(plan, shape).ok
    assert sum(len(g.members) for g in plan.groups) == C * D
