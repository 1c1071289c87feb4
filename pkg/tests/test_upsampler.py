import time

import cv2
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from chronolapse.config import Solver, UpsampleConfig
from chronolapse.errors import NonconvergenceError, ShapeError
from chronolapse import upsampler as U

from oracles import oracle_energy, oracle_solve


@pytest.fixture(scope="module")
def random_pair():
    rng = np.random.default_rng(5)
    return rng.uniform(-1, 1, (8, 8, 3)), rng.uniform(-1, 1, (8, 8, 3))


@pytest.fixture(scope="module")
def oracle_fields(random_pair):
    return oracle_solve(*random_pair)


# -- weights ------------------------------------------------------------------


def test_neighbor_weight_examples():
    assert float(U.neighbor_weight([0.3, 0.1, -0.2], [0.3, 0.1, -0.2], 0.01)) == pytest.approx(100)
    assert float(U.neighbor_weight([0.99, 0, 0], [0, 0, 0], 0.01)) == pytest.approx(1.0)


@given(st.lists(st.floats(-1, 1), min_size=6, max_size=6))
def test_neighbor_weight_symmetric_positive(v):
    c1, c2 = v[:3], v[3:]
    w = float(U.neighbor_weight(c1, c2))
    assert w > 0 and w == float(U.neighbor_weight(c2, c1))


# -- solver against the oracle -----------------------------------------------


def test_package_energy_matches_oracle(random_pair):
    I, O = random_pair
    rng = np.random.default_rng(1)
    a, b = rng.normal(1, 0.3, I.shape), rng.normal(0, 0.3, I.shape)
    np.testing.assert_allclose(U.energy(I, O, a, b), oracle_energy(I, O, a, b, 1.0, 0.01, 1e-4), rtol=1e-12)


@pytest.mark.parametrize("solver", [Solver.CG, Solver.DENSE])
def test_solve_matches_dense_oracle(random_pair, oracle_fields, solver):
    I, O = random_pair
    a_ref, b_ref = oracle_fields
    f = U.solve_transform(I, O, UpsampleConfig(solver=solver, cg_tol=1e-10))
    ref = np.concatenate([a_ref.ravel(), b_ref.ravel()])
    got = np.concatenate([f.a.ravel(), f.b.ravel()])
    assert np.linalg.norm(got - ref) / np.linalg.norm(ref) < 1e-5


def test_solution_is_near_optimal(random_pair, oracle_fields):
    I, O = random_pair
    f = U.solve_transform(I, O)
    e = oracle_energy(I, O, f.a, f.b, 1.0, 0.01, 1e-4)
    e_ref = oracle_energy(I, O, *oracle_fields, 1.0, 0.01, 1e-4)
    e_id = oracle_energy(I, O, np.ones_like(I), np.zeros_like(I), 1.0, 0.01, 1e-4)
    assert np.all(e <= e_ref + 1e-8 * np.maximum(1, e_ref))
    assert np.all(e <= e_id)


def test_normal_equation_residual_below_tol():
    rng = np.random.default_rng(2)
    I, O = rng.uniform(-1, 1, (24, 20, 3)), rng.uniform(-1, 1, (24, 20, 3))
    cfg = UpsampleConfig()
    f = U.solve_transform(I, O, cfg)
    for ch, (A, rhs) in enumerate(U.build_system(I, O, cfg)):
        x = np.concatenate([f.a[..., ch].ravel(), f.b[..., ch].ravel()])
        assert np.linalg.norm(rhs - A @ x) / np.linalg.norm(rhs) <= cfg.cg_tol
    assert all(r <= cfg.cg_tol for r in f.residuals)


def test_identity_target_gives_identity_field():
    rng = np.random.default_rng(3)
    I = rng.uniform(-1, 1, (16, 16, 3))
    f = U.solve_transform(I, I)
    np.testing.assert_allclose(f.a, 1, atol=1e-6)
    np.testing.assert_allclose(f.b, 0, atol=1e-6)


def test_half_scaling_with_large_beta():
    yy, xx = np.mgrid[0:16, 0:16] / 15.0
    I = np.stack([2 * xx - 1, 2 * yy - 1, xx - yy], axis=2)
    f = U.solve_transform(I, 0.5 * I, UpsampleConfig(beta=100.0, solver=Solver.DENSE))
    np.testing.assert_allclose(f.a, 0.5, atol=1e-3)
    np.testing.assert_allclose(f.b, 0.0, atol=1e-3)


def test_channel_permutation_equivariance():
    rng = np.random.default_rng(6)
    I, O = rng.uniform(-1, 1, (10, 12, 3)), rng.uniform(-1, 1, (10, 12, 3))
    perm = [2, 0, 1]
    cfg = UpsampleConfig(solver=Solver.DENSE)
    f = U.solve_transform(I, O, cfg)
    g = U.solve_transform(I[..., perm], O[..., perm], cfg)
    np.testing.assert_allclose(g.a, f.a[..., perm], atol=1e-9)
    np.testing.assert_allclose(g.b, f.b[..., perm], atol=1e-9)


@settings(max_examples=15, deadline=None)
@given(st.lists(st.floats(-1, 1), min_size=3, max_size=3), st.lists(st.floats(-1, 1), min_size=3, max_size=3))
def test_uniform_input_gives_constant_field(color, target):
    I = np.broadcast_to(np.array(color), (8, 8, 3)).copy()
    O = np.broadcast_to(np.array(target), (8, 8, 3)).copy()
    f = U.solve_transform(I, O)
    assert np.ptp(f.a, axis=(0, 1)).max() < 1e-6
    assert np.ptp(f.b, axis=(0, 1)).max() < 1e-6


def test_uniform_input_matches_oracle_for_varying_target():
    I = np.full((3, 3, 3), 0.2)
    O = np.random.default_rng(7).uniform(-1, 1, (3, 3, 3))
    a_ref, b_ref = oracle_solve(I, O)
    f = U.solve_transform(I, O, UpsampleConfig(solver=Solver.DENSE))
    np.testing.assert_allclose(f.a, a_ref, atol=1e-6)
    np.testing.assert_allclose(f.b, b_ref, atol=1e-6)


def test_shape_mismatch():
    with pytest.raises(ShapeError):
        U.solve_transform(np.zeros((4, 4, 3)), np.zeros((4, 5, 3)))


def test_nonconvergence_raised_on_large_grid():
    rng = np.random.default_rng(0)
    I, O = rng.uniform(-1, 1, (80, 80, 3)), rng.uniform(-1, 1, (80, 80, 3))
    with pytest.raises(NonconvergenceError):
        U.solve_transform(I, O, UpsampleConfig(cg_max_iters=2))


def test_small_grid_falls_back_to_dense():
    rng = np.random.default_rng(0)
    I, O = rng.uniform(-1, 1, (10, 10, 3)), rng.uniform(-1, 1, (10, 10, 3))
    f = U.solve_transform(I, O, UpsampleConfig(cg_max_iters=2))
    ref = U.solve_transform(I, O, UpsampleConfig(solver=Solver.DENSE))
    np.testing.assert_allclose(f.a, ref.a, atol=1e-9)


# -- apply / end to end -------------------------------------------------------


def _field(a, b, shape):
    return U.TransformField(np.full(shape, a, float), np.full(shape, b, float))


def test_apply_identity_and_constant():
    I = np.random.default_rng(0).uniform(-1, 1, (20, 30, 3))
    np.testing.assert_allclose(U.apply_transform(I, _field(1, 0, (5, 6, 3))), I, atol=1e-12)
    np.testing.assert_allclose(U.apply_transform(I, _field(0, 0.5, (5, 6, 3))), 0.5, atol=1e-12)


def test_apply_same_grid_is_elementwise():
    rng = np.random.default_rng(1)
    I = rng.uniform(-1, 1, (6, 7, 3))
    f = U.TransformField(rng.uniform(0, 1, I.shape), rng.uniform(-0.3, 0.3, I.shape))
    np.testing.assert_allclose(U.apply_transform(I, f), np.clip(f.a * I + f.b, -1, 1), atol=1e-12)


def test_apply_clamps():
    I = np.ones((4, 4, 3))
    assert U.apply_transform(I, _field(3, 0, (2, 2, 3))).max() == 1.0


@given(st.floats(-2, 2), st.floats(-2, 2))
def test_apply_linear_before_clamp(s, t):
    rng = np.random.default_rng(2)
    I1, I2 = rng.uniform(-1, 1, (2, 12, 10, 3))
    f = U.TransformField(rng.uniform(0, 2, (3, 5, 3)), np.zeros((3, 5, 3)))
    lhs = U.apply_transform(s * I1 + t * I2, f, clamp=False)
    rhs = s * U.apply_transform(I1, f, clamp=False) + t * U.apply_transform(I2, f, clamp=False)
    np.testing.assert_allclose(lhs, rhs, atol=1e-9)


def test_guided_upsample_identity_chain():
    I = cv2.GaussianBlur(np.random.default_rng(3).uniform(-0.9, 0.9, (64, 64, 3)), (0, 0), 2)
    O = U.downsample_area(I, (16, 16))
    np.testing.assert_allclose(U.guided_upsample(I, O), I, atol=1e-5)


def _grad_mag(img):
    g = img.mean(axis=2)
    return np.hypot(cv2.Sobel(g, cv2.CV_64F, 1, 0), cv2.Sobel(g, cv2.CV_64F, 0, 1)).ravel()


def test_guided_upsample_preserves_edges():
    rng = np.random.default_rng(4)
    I = np.zeros((128, 128, 3))
    for _ in range(30):
        y, x = rng.integers(0, 120, 2)
        I[y:y + rng.integers(4, 30), x:x + rng.integers(4, 30)] = rng.uniform(-0.7, 0.5, 3)
    O = np.clip(U.downsample_area(I, (32, 32)) + 0.3, -1, 1)
    out = U.guided_upsample(I, O)
    naive = cv2.resize(O, (128, 128), interpolation=cv2.INTER_LINEAR)
    corr_out = np.corrcoef(_grad_mag(out), _grad_mag(I))[0, 1]
    corr_naive = np.corrcoef(_grad_mag(naive), _grad_mag(I))[0, 1]
    assert corr_out > corr_naive
    assert abs(out.mean() - I.mean() - 0.3) < 0.05


def test_guided_upsample_rejects_smaller_input():
    with pytest.raises(ShapeError):
        U.guided_upsample(np.zeros((8, 8, 3)), np.zeros((16, 16, 3)))


def test_upsample_512_budget():
    rng = np.random.default_rng(0)
    I = cv2.GaussianBlur(rng.uniform(-1, 1, (512, 512, 3)), (0, 0), 3)
    O = np.clip(U.downsample_area(I, (128, 128)) * 0.8 + 0.1, -1, 1)
    start = time.perf_counter()
    out = U.guided_upsample(I, O)
    assert time.perf_counter() - start <= 5.0
    assert out.shape == (512, 512, 3)
