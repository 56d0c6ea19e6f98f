"""Acceptance criteria, one test each.

Every test appends a ``PASS``/``FAIL`` line that is printed in the pytest
terminal summary under "acceptance criteria".
"""
import contextlib
import json
import math
import time

import numpy as np
import pytest
import scipy.linalg

from pemopt import manifolds as mf
from pemopt.cli import main as cli_main
from pemopt.ensemble import (
    LayerShape,
    build_pi,
    build_pio,
    build_pio_kss,
    build_po,
    build_whole,
    validate_plan,
)
from pemopt.errors import DegeneratePlane
from pemopt.gsgd import (
    OptimizerConfig,
    ScheduleConfig,
    adaptive_denominator,
    init_state,
    sphere_denominator,
    train,
)
from pemopt.manifolds import Kind, ManifoldSpec, Sphere
from pemopt.objectives import (
    ConvNet,
    Procrustes,
    Rayleigh,
    conv2d_forward_backward,
    finite_difference_gradient,
    make_synthetic_dataset,
    mlp_forward_backward,
)
from pemopt.product import (
    ProductManifold,
    product_grad_norm,
    product_inner,
    product_tangent_project,
    sectional_curvature,
)

from conftest import ACCEPTANCE_RESULTS, random_spec, random_tangent


@contextlib.contextmanager
def criterion(number, title):
    detail = {}
    try:
        yield detail
    except BaseException as exc:
        reason = (str(exc).splitlines() or [type(exc).__name__])[0]
        line = f"FAIL  {number:>2}. {title}: {detail.get('note', '')}; {reason}"
        ACCEPTANCE_RESULTS.append(line)
        print(line)
        raise
    line = f"PASS  {number:>2}. {title}: {detail.get('note', '')}".rstrip()
    ACCEPTANCE_RESULTS.append(line)
    print(line)


def rel_err(a, n):
    scale = max(np.max(np.abs(a)), np.max(np.abs(n)), 1e-300)
    return float(np.max(np.abs(a - n)) / scale)


def test_01_manifold_invariants():
    with criterion(1, "manifold invariant suite") as d:
        start = time.perf_counter()
        worst = {"idem": 0.0, "orth": 0.0, "res": 0.0}
        for kind in Kind:
            rng = np.random.default_rng([1, kind.code])
            for trial in range(1000):
                spec = random_spec(rng, kind)
                p = mf.random_point(spec, [kind.code, trial])
                a = rng.standard_normal(spec.shape)
                pa = mf.tangent_project(spec, p, a)
                worst["idem"] = max(worst["idem"], np.max(np.abs(mf.tangent_project(spec, p, pa) - pa)))
                t = random_tangent(spec, p, rng)
                worst["orth"] = max(worst["orth"], abs(np.sum((a - pa) * t)))
                v = random_tangent(spec, p, rng, rng.uniform(0.0, 3.0))
                worst["res"] = max(worst["res"], mf.constraint_residual(spec, mf.retract(spec, p, v)))
        elapsed = time.perf_counter() - start
        d["note"] = (f"idempotence {worst['idem']:.1e}, orthogonality {worst['orth']:.1e}, "
                     f"residual {worst['res']:.1e}, {elapsed:.1f}s")
        assert worst["idem"] < 1e-8 and worst["orth"] < 1e-8
        assert worst["res"] < 1e-10
        assert elapsed < 10


def test_02_product_metric():
    with criterion(2, "product metric is the sum of component metrics") as d:
        rng = np.random.default_rng(2)
        worst = 0.0
        for trial in range(1000):
            M = ProductManifold([random_spec(rng) for _ in range(int(rng.integers(2, 9)))])
            p = M.random_point(trial)
            u = product_tangent_project(M, p, rng.standard_normal(M.total_ambient_dim))
            v = product_tangent_project(M, p, rng.standard_normal(M.total_ambient_dim))
            direct = 0.0
            for i in range(len(M)):
                s = M.slice(i)
                direct += float(np.dot(u[s], v[s]))
            worst = max(worst, abs(product_inner(M, p, u, v) - direct))
        d["note"] = f"max deviation {worst:.1e}"
        assert worst <= 1e-12


def _circle_tangent(p, rng):
    # tangent line of S^1 at p is spanned by (-p2, p1)
    return rng.standard_normal() * np.array([-p[1], p[0]])


def test_03_curvature_structure():
    with criterion(3, "curvature structure") as d:
        rng = np.random.default_rng(3)
        torus = ProductManifold([Sphere(2), Sphere(2)])
        zero = np.zeros(2)

        single, degenerate = [], 0
        for trial in range(100):
            p = torus.random_point(trial)
            c = int(rng.integers(2))
            pc = p[torus.slice(c)]
            u = torus.concat([_circle_tangent(pc, rng), zero][:: 1 if c == 0 else -1])
            v = torus.concat([_circle_tangent(pc, rng), zero][:: 1 if c == 0 else -1])
            try:
                single.append(sectional_curvature(torus, p, u, v))
            except DegeneratePlane:
                degenerate += 1

        mixed = []
        for trial in range(100):
            p = torus.random_point(100 + trial)
            p1, p2 = p[:2], p[2:]
            u = torus.concat([_circle_tangent(p1, rng), zero])
            v = torus.concat([zero, _circle_tangent(p2, rng)])
            mixed.append(sectional_curvature(torus, p, u, v))

        spheres = []
        while len(spheres) < 500:
            n = int(rng.integers(1, 5))
            M = ProductManifold([
                ManifoldSpec(Kind.SPHERE, int(rng.integers(2, 6)), int(rng.integers(1, 3)))
                for _ in range(n)
            ])
            if sum(c.intrinsic_dim for c in M.components) < 2:
                continue
            p = M.random_point(len(spheres))
            u = product_tangent_project(M, p, rng.standard_normal(M.total_ambient_dim))
            v = product_tangent_project(M, p, rng.standard_normal(M.total_ambient_dim))
            spheres.append(sectional_curvature(M, p, u, v))

        mixed_ok = max(abs(k) for k in mixed) <= 1e-10
        spheres_ok = all(-1e-10 <= k <= 1 + 1e-10 for k in spheres)
        single_ok = len(single) == 100 and all(abs(k - 1) <= 1e-10 for k in single)
        d["note"] = (f"single-component torus planes {len(single)}/100 evaluated "
                     f"({degenerate} degenerate), mixed max |K| {max(abs(k) for k in mixed):.1e}, "
                     f"sphere products in [{min(spheres):.1e}, {max(spheres):.12f}]")
        assert mixed_ok and spheres_ok
        assert single_ok, (
            "each S^1 factor has a one-dimensional tangent space, so two tangent vectors "
            "supported on a single factor are collinear and span no 2-plane"
        )


def test_04_step_size_formulas():
    with criterion(4, "step-size denominators") as d:
        grid = [k / 10 for k in range(51)]
        worst = max(abs(adaptive_denominator(R, 1.0, 1.0) - sphere_denominator(R)) for R in grid)
        d["note"] = f"max grid deviation {worst:.1e}"
        assert worst <= 1e-12
        assert sphere_denominator(0) == 1.0
        assert sphere_denominator(1) == 3.0


def test_05_gradient_oracle():
    with criterion(5, "analytic gradients match central differences") as d:
        start = time.perf_counter()
        worst_mlp = worst_conv = 0.0
        for draw in range(100):
            rng = np.random.default_rng([5, draw])
            X, y = rng.standard_normal((4, 6)), rng.integers(0, 3, 4)
            params = [rng.standard_normal((6, 5)), rng.standard_normal((5, 3))]
            _, grads = mlp_forward_backward(params, (X, y))
            num = finite_difference_gradient(lambda p: mlp_forward_backward(p, (X, y))[0], params, 1e-5)
            worst_mlp = max(worst_mlp, *(rel_err(a, n) for a, n in zip(grads, num)))

            X, y = rng.standard_normal((3, 2, 6, 6)), rng.integers(0, 3, 3)
            params = [rng.standard_normal((2, 2, 3, 3)), rng.standard_normal((2, 3))]
            _, grads = conv2d_forward_backward(params, (X, y))
            num = finite_difference_gradient(lambda p: conv2d_forward_backward(p, (X, y))[0], params, 1e-5)
            worst_conv = max(worst_conv, *(rel_err(a, n) for a, n in zip(grads, num)))
        elapsed = time.perf_counter() - start
        d["note"] = f"mlp {worst_mlp:.1e}, conv {worst_conv:.1e}, {elapsed:.1f}s"
        assert worst_mlp < 1e-5 and worst_conv < 1e-5
        assert elapsed < 60


def _final_grad_norm(state, objective):
    _, grads = objective.loss_and_grad(state.kernels())
    layer = state.layers[0]
    M, p = layer.products[0], state.points[0][0]
    return product_grad_norm(M, product_tangent_project(M, p, layer.gather(grads[0])[0]))


def _solve(objective, kind, T=10_000):
    cfg = OptimizerConfig(ScheduleConfig(0.1, 1e-3, 1.0))
    shape = objective.layers[0]
    state = init_state([shape], [build_whole(shape, kind)], cfg, seed=0)
    final = train(objective, state, T).state
    return objective.loss(final.kernels()), _final_grad_norm(final, objective), final


def test_06_rayleigh_convergence():
    with criterion(6, "Rayleigh quotient convergence") as d:
        start = time.perf_counter()
        mats = [np.diag([1.0, 2.0, 3.0])]
        for s in range(10):
            G = np.random.default_rng(100 + s).standard_normal((10, 10))
            mats.append(0.5 * (G + G.T))
        gaps, norms = [], []
        for A in mats:
            lam = scipy.linalg.eigh(A, eigvals_only=True, subset_by_index=[0, 0])[0]
            loss, gnorm, final = _solve(Rayleigh(A), "Sphere")
            gaps.append(abs(loss - lam))
            norms.append(gnorm)
            assert final.max_residual() < 1e-8
        elapsed = time.perf_counter() - start
        d["note"] = f"max |loss - lambda_min| {max(gaps):.1e}, max grad norm {max(norms):.1e}, {elapsed:.1f}s"
        assert max(gaps) < 1e-6 and max(norms) < 1e-5
        assert elapsed < 30


def test_07_procrustes():
    with criterion(7, "Procrustes on the Stiefel manifold") as d:
        gaps = []
        for s in range(10):
            Y = np.random.default_rng(200 + s).standard_normal((6, 3))
            U = scipy.linalg.polar(Y)[0]
            optimum = float(np.sum((U - Y) ** 2))
            loss, _, _ = _solve(Procrustes(Y), "Stiefel")
            gaps.append(abs(loss - optimum))
        d["note"] = f"max |loss - optimum| {max(gaps):.1e}"
        assert max(gaps) < 1e-6


def _random_partition(rng, items):
    items = list(items)
    rng.shuffle(items)
    k = int(rng.integers(1, len(items) + 1))
    cuts = sorted(rng.choice(np.arange(1, len(items)), size=k - 1, replace=False)) if k > 1 else []
    bounds = [0, *cuts, len(items)]
    return [items[a:b] for a, b in zip(bounds, bounds[1:])]


def test_08_ensemble_plans():
    with criterion(8, "ensemble plan correctness") as d:
        shape = LayerShape(1, 3, 3, 4, 6)
        pi = build_pi(shape, [[1, 2, 3], [4, 5, 6]], ["Sphere", "Stiefel"])
        assert pi.kind_counts() == {(Kind.SPHERE, 3): 4, (Kind.STIEFEL, 3): 4}
        po = build_po(shape, [[1, 2], [3, 4]], ["Sphere", "Stiefel"])
        assert po.kind_counts() == {(Kind.SPHERE, 2): 6, (Kind.STIEFEL, 2): 6}
        pio = build_pio_kss(shape, 10, ["Stiefel", "Sphere"])
        kinds = [g.manifold.kind for g in pio.groups]
        assert len(pio.groups) == 10 and kinds.count(Kind.STIEFEL) == kinds.count(Kind.SPHERE) == 5
        assert validate_plan(pio, shape).ok

        rng = np.random.default_rng(8)
        names = [k.value for k in Kind]
        for _ in range(1000):
            C, D = (int(x) for x in rng.integers(1, 9, 2))
            a = int(rng.integers(2, 4))
            s = LayerShape(1, a + int(rng.integers(0, 2)), a, C, D)
            pick = lambda n: [names[int(i)] for i in rng.integers(0, 4, n)]  # noqa: E731
            which = int(rng.integers(4))
            if which == 0:
                splits = _random_partition(rng, range(1, D + 1))
                plan = build_pi(s, splits, pick(len(splits)))
            elif which == 1:
                splits = _random_partition(rng, range(1, C + 1))
                plan = build_po(s, splits, pick(len(splits)))
            elif which == 2:
                groups = _random_partition(rng, s.coordinates())
                plan = build_pio(s, list(zip(groups, pick(len(groups)))))
            else:
                plan = build_whole(s, pick(1)[0])
            assert validate_plan(plan, s).ok
            assert sum(len(g.members) for g in plan.groups) == C * D
        d["note"] = "PI 4+4, PO 6+6, PIO 10 groups, 1000 random plans exact"


def _conv_run(dataset, plans_kinds, T=5000):
    obj = ConvNet(dataset, out_channels=4)
    s1, s2 = obj.layers
    if plans_kinds == "euclidean":
        plans = [build_whole(s1, "Euclidean"), build_whole(s2, "Euclidean")]
    else:
        plans = [build_pio_kss(s1, 4, ["Sphere", "Stiefel"]), build_whole(s2, "Euclidean")]
    cfg = OptimizerConfig(ScheduleConfig(0.5, 1e-3, 1.0))
    traj = train(obj, init_state([s1, s2], plans, cfg, seed=0), T)
    final = traj.state.kernels()
    return obj.accuracy(final), obj.loss(final), traj


def test_09_desk_scale_training():
    with criterion(9, "conv training, Euclidean vs PIO sphere+Stiefel") as d:
        ds = make_synthetic_dataset(4, 64, seed=0)
        acc_e, loss_e, _ = _conv_run(ds, "euclidean")
        acc_c, loss_c, traj = _conv_run(ds, "pio")
        worst = max(r.constraint_residual_max for r in traj.records)
        ranking = "constrained lower" if loss_c < loss_e else "euclidean lower"
        d["note"] = (f"accuracy euclidean {acc_e:.3f} / constrained {acc_c:.3f}, "
                     f"final loss {loss_e:.4f} / {loss_c:.4f} ({ranking}), max residual {worst:.1e}")
        assert acc_e > 0.9 and acc_c > 0.9
        assert worst < 1e-8


def test_10_determinism(tmp_path, monkeypatch):
    with criterion(10, "determinism and bitwise resume") as d:
        monkeypatch.chdir(tmp_path)
        cfg = {
            "objective": {"name": "conv", "out_channels": 4,
                          "dataset": {"classes": 4, "per_class": 16, "size": 8}},
            "layers": [{"strategy": "PIO", "kss": 4, "manifolds": ["Sphere", "Stiefel"]},
                       {"strategy": "Whole", "manifolds": ["Oblique"]}],
            "schedule": {"base_rate": 0.5, "decay": 1e-3},
            "batch_size": 16,
            "seed": 11,
        }
        (tmp_path / "c.json").write_text(json.dumps(cfg))
        run = lambda *a: cli_main([str(x) for x in a])  # noqa: E731
        assert run("run", "c.json", "--strict", "--iterations", 200, "--out-dir", "a") == 0
        assert run("run", "c.json", "--strict", "--iterations", 200, "--out-dir", "b") == 0
        assert run("run", "c.json", "--strict", "--iterations", 100, "--out-dir", "r") == 0
        assert run("resume", "r/checkpoint.pemc", "c.json", "--strict", "--iterations", 100,
                   "--out-dir", "r") == 0
        for name in ("trace.csv", "checkpoint.pemc"):
            a = (tmp_path / "a" / name).read_bytes()
            assert a == (tmp_path / "b" / name).read_bytes(), f"repeat run differs in {name}"
            assert a == (tmp_path / "r" / name).read_bytes(), f"resumed run differs in {name}"
        d["note"] = "repeat runs and resume(100)+100 vs run(200) byte-identical"
