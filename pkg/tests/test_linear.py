import numpy as np
import pytest
import scipy.sparse as sps

from asi.errors import ContractViolation, InvalidOperator, InvalidParameter
from asi.linear import (DropBlockOperator, Hyperplane, KaczmarzSweep, ScaledDropOperator, build_blocks,
                        build_operators, drop_apply, drop_componentwise_reference, drop_residual_update,
                        hyperplane_project, kaczmarz_residual, spectral_certificate)
from asi.operators import nonexpansive_probe
from asi.problems import RandomSystemSpec, make_random_system
from asi.sparse import SparseMatrix


def random_block(rng, M, N, density=0.2):
    a = sps.random(M, N, density=density, random_state=rng, data_rvs=rng.standard_normal).toarray()
    a[np.arange(M), rng.integers(0, N, M)] = 1.0 + rng.random(M)  # no zero rows
    return a


def dense_drop(a, b, x, lam=1.0, per_block=True):
    w = 1.0 / (a ** 2).sum(axis=1)
    s = (a != 0).sum(axis=0)
    d = np.where(s > 0, 1.0 / np.maximum(s, 1), 0.0)
    return x - lam * d * (a.T @ (w * (a @ x - b)))


def test_projection_examples():
    np.testing.assert_array_equal(hyperplane_project(Hyperplane.from_dense([1.0, 0.0], 2.0), np.zeros(2)), [2, 0])
    np.testing.assert_array_equal(hyperplane_project(Hyperplane.from_dense([3.0, 4.0], 0.0), np.array([3.0, 4.0])),
                                  [0, 0])


def test_projection_matches_dense_oracle(rng):
    a = np.zeros(100)
    idx = rng.choice(100, 12, replace=False)
    a[idx] = rng.standard_normal(12)
    b = 0.7
    x = rng.standard_normal(100)
    expected = x + (b - a @ x) / (a @ a) * a
    h = Hyperplane.from_dense(a, b)
    p = hyperplane_project(h, x)
    np.testing.assert_allclose(p, expected, rtol=0, atol=1e-12)
    assert abs(a @ p - b) <= 1e-10 * (1 + abs(b))
    np.testing.assert_allclose(hyperplane_project(h, p), p, atol=1e-12)


def test_kaczmarz_residual(rng):
    h = Hyperplane.from_dense([1.0, 0.0], 2.0)
    np.testing.assert_array_equal(kaczmarz_residual(h, np.zeros(2)), [-2.0, 0.0])
    np.testing.assert_array_equal(kaczmarz_residual(h, np.array([2.0, 5.0])), [0.0, 0.0])
    a = rng.standard_normal(20)
    a[rng.random(20) < 0.5] = 0.0
    a[0] = 1.0
    h = Hyperplane.from_dense(a, -0.4)
    x = rng.standard_normal(20)
    np.testing.assert_array_equal(kaczmarz_residual(h, x), x - hyperplane_project(h, x))
    idx, vals = h.residual_sparse(x)
    full = np.zeros(20)
    full[idx] = vals
    np.testing.assert_array_equal(full, kaczmarz_residual(h, x))
    assert set(idx) == set(np.flatnonzero(a))


def test_zero_row_and_dimension_errors():
    with pytest.raises(InvalidOperator):
        Hyperplane.from_dense([0.0, 0.0], 1.0)
    h = Hyperplane.from_dense([1.0, 1.0], 1.0)
    with pytest.raises(ContractViolation):
        hyperplane_project(h, np.zeros(3))


def test_half_residual_firmly_nonexpansive(rng):
    h = Hyperplane.from_dense(rng.standard_normal(8), 0.3)
    for _ in range(500):
        x, y = rng.standard_normal(8) * 3, rng.standard_normal(8) * 3
        u, v = 0.5 * h.residual(x), 0.5 * h.residual(y)
        assert np.dot(u - v, u - v) <= np.dot(x - y, u - v) + 1e-10


def test_drop_scalar_block():
    A = SparseMatrix.from_dense([[2.0]])
    U = DropBlockOperator(A, [4.0], [0])
    np.testing.assert_array_equal(drop_apply(U, np.zeros(1)), [2.0])
    np.testing.assert_array_equal(drop_residual_update(U, np.zeros(1), 1.0), [2.0])
    np.testing.assert_array_equal(drop_componentwise_reference(A, np.array([4.0]), np.zeros(1)), [2.0])
    cert = spectral_certificate(U)
    assert cert.converged and cert.estimate == pytest.approx(1.0, abs=1e-15)


def test_drop_apply_matches_dense_oracle(rng):
    a = random_block(rng, 50, 30)
    b = rng.standard_normal(50)
    U = DropBlockOperator(SparseMatrix.from_dense(a), b, np.arange(50))
    s = (a != 0).sum(axis=0)
    dh = np.where(s > 0, 1 / np.sqrt(np.maximum(s, 1)), 0.0)
    abar = a * dh[None, :]
    w = 1 / (a ** 2).sum(axis=1)
    y = rng.standard_normal(30)
    expected = y - abar.T @ (w * (abar @ y - b))
    np.testing.assert_allclose(drop_apply(U, y), expected, rtol=0, atol=1e-11)


def test_drop_fixed_point_in_scaled_space(rng):
    a = random_block(rng, 5, 12, 0.4)
    U = DropBlockOperator(SparseMatrix.from_dense(a), np.zeros(5), np.arange(5))
    # any y with Abar y = 0 is fixed; take it from the null space of Abar
    s = (a != 0).sum(axis=0)
    abar = a / np.sqrt(np.maximum(s, 1))[None, :]
    y = np.linalg.svd(abar)[2][-1]
    np.testing.assert_allclose(drop_apply(U, y), y, atol=1e-13)


@pytest.mark.parametrize("counts", ["block", "global"])
def test_drop_update_matches_dense(rng, counts):
    a = random_block(rng, 40, 25)
    b = rng.standard_normal(40)
    A = SparseMatrix.from_dense(a)
    rows = np.arange(10, 27)
    blk = DropBlockOperator(A, b, rows, column_counts=counts)
    x = rng.standard_normal(25)
    sub = a[rows]
    w = 1 / (sub ** 2).sum(axis=1)
    s = (sub != 0).sum(axis=0) if counts == "block" else (a != 0).sum(axis=0)
    d = np.where(s > 0, 1 / np.maximum(s, 1), 0.0)
    expected = x - 0.3 * d * (sub.T @ (w * (sub @ x - b[rows])))
    got = drop_residual_update(blk, x, 0.3)
    np.testing.assert_allclose(got, expected, rtol=1e-11, atol=1e-11 * np.abs(expected).max())


def test_drop_block_zero_column_left_alone(rng):
    a = np.array([[1.0, 2.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 3.0]])
    A = SparseMatrix.from_dense(a)
    blk = DropBlockOperator(A, np.ones(3), [0, 1])
    assert blk.empty_columns == 1 and blk.d[2] == 0.0
    x = np.array([0.3, -0.2, 7.0])
    assert drop_residual_update(blk, x, 0.5)[2] == 7.0
    assert not nonexpansive_probe(ScaledDropOperator(blk), trials=300).violated


def test_componentwise_reference_equals_single_block(rng):
    s = make_random_system(RandomSystemSpec(20, 10, 3, seed=8))
    x = rng.standard_normal(10)
    one = DropBlockOperator(s.A, s.b, np.arange(20))
    np.testing.assert_allclose(drop_componentwise_reference(s.A, s.b, x), drop_residual_update(one, x, 1.0),
                               rtol=0, atol=1e-12)
    np.testing.assert_allclose(drop_componentwise_reference(s.A, s.b, s.x_true), s.x_true, atol=1e-12)
    with pytest.raises(ContractViolation):
        drop_componentwise_reference(s.A, s.b, np.zeros(3))


def test_spectral_certificate_orthogonal_rows():
    a = np.zeros((4, 6))
    a[0, 0] = a[1, 1] = a[2, 2] = a[3, 3] = 1.0
    blk = DropBlockOperator(SparseMatrix.from_dense(a), np.zeros(4), np.arange(4))
    ev = np.linalg.eigvalsh(np.diag(blk.sqrt_d) @ a.T @ a @ np.diag(blk.sqrt_d)).max()
    cert = spectral_certificate(blk)
    assert cert.converged
    assert cert.estimate == pytest.approx(ev, abs=1e-8) and ev == pytest.approx(1.0)


def test_spectral_certificate_against_eigensolver(rng):
    for t in range(10):
        a = random_block(rng, 30, 20, 0.3)
        blk = DropBlockOperator(SparseMatrix.from_dense(a), np.zeros(30), np.arange(30))
        w = 1 / (a ** 2).sum(axis=1)
        s = (a != 0).sum(axis=0)
        d = np.where(s > 0, 1 / np.maximum(s, 1), 0.0)
        rho = np.abs(np.linalg.eigvals(np.diag(d) @ a.T @ np.diag(w) @ a)).max()
        cert = spectral_certificate(blk, seed=t)
        assert rho <= 1 + 1e-8
        assert cert.estimate <= 1 + 1e-8
        assert cert.estimate == pytest.approx(rho, abs=1e-8)


def test_spectral_certificate_unconverged_flag(rng):
    a = random_block(rng, 30, 20, 0.3)
    blk = DropBlockOperator(SparseMatrix.from_dense(a), np.zeros(30), np.arange(30))
    cert = spectral_certificate(blk, iterations=1)
    assert not cert.converged
    with pytest.raises(InvalidParameter):
        spectral_certificate(blk, iterations=0)


def test_build_blocks_examples():
    p = build_blocks(5, 2)
    assert [b.tolist() for b in p.blocks] == [[0, 1, 2], [3, 4]]
    assert [b.tolist() for b in build_blocks(4, 4).blocks] == [[0], [1], [2], [3]]
    p = build_blocks(6, 3, "overlapping", overlap=1)
    assert [b.tolist() for b in p.blocks] == [[0, 1, 2], [2, 3, 4], [4, 5, 0]]
    assert p.covers() and p.overlapping()
    assert [b.tolist() for b in build_blocks(7, 3, "strided").blocks] == [[0, 3, 6], [1, 4], [2, 5]]
    with pytest.raises(InvalidParameter):
        build_blocks(3, 4)
    with pytest.raises(InvalidParameter):
        build_blocks(3, 2, "user", blocks=[[0], [1]])


@pytest.mark.parametrize("M,r", [(7, 3), (100, 40), (41, 40), (8550, 40)])
def test_contiguous_sizes_differ_by_at_most_one(M, r):
    sizes = [b.size for b in build_blocks(M, r).blocks]
    assert max(sizes) - min(sizes) <= 1 and sum(sizes) == M


def test_fixed_point_correctness_all_operators():
    s = make_random_system(RandomSystemSpec(60, 20, 4, seed=1))
    tol = 1e-12 * np.linalg.norm(s.b)
    for fam, r in (("art", 60), ("art", 6), ("drop", 6)):
        for op in build_operators(s.A, s.b, build_blocks(60, r), fam):
            assert np.linalg.norm(op.residual(s.x_true)) <= max(tol, 1e-14)


def test_kaczmarz_sweep_equals_composed_projections(rng):
    s = make_random_system(RandomSystemSpec(12, 6, 3, seed=3))
    rows = [4, 5, 6, 7]
    sweep = KaczmarzSweep(s.A, s.b, rows)
    x = rng.standard_normal(6)
    y = x.copy()
    for i in rows:
        y = Hyperplane.from_row(s.A, s.b, i).apply(y)
    np.testing.assert_allclose(sweep.apply(x), y, rtol=0, atol=1e-13)
    assert not nonexpansive_probe(sweep, trials=300).violated


def test_art_singletons_are_hyperplanes():
    s = make_random_system(RandomSystemSpec(10, 5, 2, seed=0))
    ops = build_operators(s.A, s.b, build_blocks(10, 10), "art")
    assert all(isinstance(op, Hyperplane) for op in ops)
    with pytest.raises(InvalidParameter):
        build_operators(s.A, s.b, build_blocks(10, 10), "sirt")
