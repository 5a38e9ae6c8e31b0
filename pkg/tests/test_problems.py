import gzip

import numpy as np
import pytest

from fabsim.exceptions import ConfigError, DomainError, UnsupportedOperation
from fabsim.problems import (
    BilevelFromSingle,
    Dataset,
    NoiseStream,
    PenaltyConfig,
    QuadraticBilevelProblem,
    SmoothnessConstants,
    build_hpo_problem,
    build_hypercleaning_problem,
    build_least_squares_problem,
    build_nonconvex_problem,
    build_quadratic_problem,
    build_rl_problem,
    hypergradient,
    load_idx_dataset,
    local_penalty_gradients,
    penalty_gradients,
    penalty_lower_solution,
    read_idx,
    soba_directions,
)
from fabsim.problems.classification import corrupt_labels


def fd_grad(fun, x, h=1e-6):
    g = np.zeros_like(x)
    for j in range(x.size):
        e = np.zeros_like(x)
        e[j] = h
        g[j] = (fun(x + e) - fun(x - e)) / (2 * h)
    return g


def check_bilevel_grads(P, x, y, i=0, rtol=1e-5, atol=1e-6):
    gfx, gfy = P.grad_f_x(i, x, y), P.grad_f_y(i, x, y)
    ggx, ggy = P.grad_g_x(i, x, y), P.grad_g_y(i, x, y)
    assert gfx == pytest.approx(fd_grad(lambda u: P.f_value(i, u, y), x), rel=rtol, abs=atol)
    assert gfy == pytest.approx(fd_grad(lambda u: P.f_value(i, x, u), y), rel=rtol, abs=atol)
    assert ggx == pytest.approx(fd_grad(lambda u: P.g_value(i, u, y), x), rel=rtol, abs=atol)
    assert ggy == pytest.approx(fd_grad(lambda u: P.g_value(i, x, u), y), rel=rtol, abs=atol)


class TestQuadratic:
    @pytest.fixture
    def P(self):
        return build_quadratic_problem(4, 3, 2, seed=1)

    def test_shapes(self, P):
        assert (P.n, P.dx, P.dy) == (4, 3, 2)
        assert P.has_second_order

    @pytest.mark.parametrize("i", [0, 3])
    def test_grads(self, P, rng, i):
        check_bilevel_grads(P, rng.standard_normal(3), rng.standard_normal(2), i=i)

    def test_lower_solution(self, P, rng):
        x = rng.standard_normal(3)
        assert np.allclose(P.lower_grads(x, P.lower_solution(x))[1], 0, atol=1e-10)

    def test_optimal_x(self, P):
        assert np.allclose(hypergradient(P, P.optimal_x()), 0, atol=1e-9)

    def test_hypergradient_matches_fd(self, P, rng):
        x = rng.standard_normal(3)

        def reduced(u):
            return P.upper_value(u, P.lower_solution(u))

        assert hypergradient(P, x) == pytest.approx(fd_grad(reduced, x), rel=1e-5, abs=1e-7)

    def test_lower_strong_convexity(self, P):
        assert P.constants.mu >= 0.5

    def test_nonconvex_upper_keeps_mean(self):
        P = build_quadratic_problem(6, 2, 2, seed=0, heterogeneity=1.0, convex=False)
        assert np.linalg.eigvalsh(P.H.mean(axis=0))[0] > 0

    @pytest.mark.parametrize(
        "kwargs", [{"conditioning": 0}, {"dx": 0}, {"heterogeneity": 1.5}]
    )
    def test_invalid(self, kwargs):
        args = {"n": 2, "dx": 2, "dy": 2, **kwargs}
        with pytest.raises(ConfigError):
            build_quadratic_problem(**args)

    def test_shape_mismatch(self):
        with pytest.raises(DomainError):
            QuadraticBilevelProblem(
                np.zeros((1, 3, 3)),
                np.zeros((1, 2)),
                np.ones((1, 1, 1)),
                np.ones((1, 1, 1)),
                np.zeros((1, 1)),
            )


class TestPolicyEvaluation:
    @pytest.fixture
    def P(self):
        return build_rl_problem(n=3, S=8, d=3, seed=2)

    def test_shapes(self, P):
        assert (P.n, P.dx, P.dy) == (3, 3, 8)

    def test_grads(self, P, rng):
        check_bilevel_grads(P, rng.standard_normal(3), rng.standard_normal(8), i=1)

    def test_lower_solution(self, P, rng):
        x = rng.standard_normal(3)
        assert np.allclose(P.lower_grads(x, P.lower_solution(x))[1], 0, atol=1e-10)

    def test_reduced_objective(self, P, rng):
        x = rng.standard_normal(3)
        assert P.upper_value(x, P.lower_solution(x)) == pytest.approx(P.single_level_value(x))

    def test_optimal_x(self, P):
        assert np.allclose(hypergradient(P, P.optimal_x()), 0, atol=1e-9)

    def test_values_in_range(self, P):
        assert P.phi.min() <= P.psi.min() and P.psi.max() <= P.phi.max()
        assert P.rewards.min() >= 0 and P.rewards.max() <= 1

    def test_mean_fit_scales_upper_level(self, rng):
        total = build_rl_problem(n=3, S=8, d=3, seed=2)
        mean = build_rl_problem(n=3, S=8, d=3, seed=2, fit="mean")
        x, y = rng.standard_normal(3), rng.standard_normal(8)
        fit_total = total.upper_value(x, y) - total.tau / 2 * x @ x
        fit_mean = mean.upper_value(x, y) - mean.tau / 2 * x @ x
        assert fit_total == pytest.approx(8 * fit_mean)
        assert np.allclose(hypergradient(mean, mean.optimal_x()), 0, atol=1e-9)

    def test_rewards_per_state(self):
        assert build_rl_problem(n=4, S=6, d=2, seed=0).rewards.shape == (4, 6)

    @pytest.mark.parametrize(
        "kwargs", [{"S": 3, "d": 3}, {"gamma": 1.0}, {"tau": 0.0}, {"n": 0}, {"fit": "max"}]
    )
    def test_invalid(self, kwargs):
        with pytest.raises(ConfigError):
            build_rl_problem(**kwargs)


class TestPenalty:
    def test_toy_directions(self):
        P = QuadraticBilevelProblem.toy()
        y, z = np.ones(1), np.full(1, 3.0)
        dx, dy, dz = local_penalty_gradients(P, 0, np.zeros(1), y, z, 2.0)
        assert dx.tolist() == [4.0]
        assert dy.tolist() == [3.0]
        assert dz.tolist() == [6.0]

    def test_stacked_matches_local(self, rng):
        P = build_quadratic_problem(3, 2, 2, seed=0)
        X, Y, Z = (rng.standard_normal((3, 2)) for _ in range(3))
        DX, DY, DZ = penalty_gradients(P, X, Y, Z, 5.0)
        for i in range(3):
            dx, dy, dz = local_penalty_gradients(P, i, X[i], Y[i], Z[i], 5.0)
            assert np.allclose(DX[i], dx) and np.allclose(DY[i], dy) and np.allclose(DZ[i], dz)

    def test_dimension_mismatch(self):
        P = build_quadratic_problem(2, 2, 2, seed=0)
        with pytest.raises(DomainError):
            penalty_gradients(P, np.zeros((2, 3)), np.zeros((2, 2)), np.zeros((2, 2)), 1.0)

    def test_noise_reproducible(self):
        P = build_quadratic_problem(2, 2, 2, seed=0)
        Z = np.zeros((2, 2))
        noise = NoiseStream(seed=5, std=0.1)
        a = penalty_gradients(P, Z, Z, Z, 1.0, noise=noise, k=3)
        b = penalty_gradients(P, Z, Z, Z, 1.0, noise=noise, k=3)
        c = penalty_gradients(P, Z, Z, Z, 1.0, noise=noise, k=4)
        assert all(np.array_equal(u, v) for u, v in zip(a, b))
        assert not np.array_equal(a[0], c[0])

    def test_penalty_lower_solution(self, rng):
        P = build_rl_problem(n=2, S=6, d=2, seed=0)
        x, lam = rng.standard_normal(2), 7.0
        y = penalty_lower_solution(P, x, lam)
        grad = P.upper_grads(x, y)[1] + lam * P.lower_grads(x, y)[1]
        assert np.allclose(grad, 0, atol=1e-9)

    def test_penalty_lower_solution_iterative(self, rng):
        P = build_quadratic_problem(2, 2, 2, seed=0)
        P.quadratic_in_y = False
        x = rng.standard_normal(2)
        y = penalty_lower_solution(P, x, 10.0)
        grad = P.upper_grads(x, y)[1] + 10.0 * P.lower_grads(x, y)[1]
        assert np.allclose(grad, 0, atol=1e-8)

    def test_penalty_config(self):
        constants = SmoothnessConstants(mu=1.0, L_f1=2.0, L_g1=1.0)
        assert constants.penalty_threshold == 4.0
        with pytest.warns(UserWarning):
            PenaltyConfig(1.0, constants)
        with pytest.raises(ConfigError):
            PenaltyConfig(0.0)

    def test_soba_directions_at_optimum(self):
        P = build_quadratic_problem(1, 2, 2, seed=4)
        x = P.optimal_x()
        y = P.lower_solution(x)
        v = np.linalg.solve(P.hess_G_yy(x, y), P.upper_grads(x, y)[1])
        d_x, d_y, d_v = soba_directions(P, 0, x, y, v)
        assert np.allclose(d_x, 0, atol=1e-9)
        assert np.allclose(d_y, 0, atol=1e-9)
        assert np.allclose(d_v, 0, atol=1e-9)


class TestSingleLevel:
    def test_least_squares_optimum(self):
        P = build_least_squares_problem(n=3, dx=4, samples=10, seed=0)
        assert np.allclose(P.global_grad(P.optimal_x()), 0, atol=1e-10)

    def test_least_squares_grads(self, rng):
        P = build_least_squares_problem(n=2, dx=3, samples=5, seed=1)
        x = rng.standard_normal(3)
        expected = fd_grad(lambda u: P.value(1, u), x)
        assert P.grad(1, x) == pytest.approx(expected, rel=1e-5, abs=1e-6)

    def test_nonconvex_grads(self, rng):
        P = build_nonconvex_problem(n=2, dx=3, seed=0)
        x = rng.standard_normal(3)
        expected = fd_grad(lambda u: P.value(0, u), x)
        assert P.grad(0, x) == pytest.approx(expected, rel=1e-5, abs=1e-6)

    def test_nonconvex_has_no_optimum(self):
        with pytest.raises(UnsupportedOperation):
            build_nonconvex_problem(n=2).optimal_x()

    def test_lifted(self, rng):
        single = build_least_squares_problem(n=2, dx=3, seed=0)
        P = BilevelFromSingle(single, mu=2.0)
        X, Y = rng.standard_normal((2, 3)), rng.standard_normal((2, 1))
        DX, DY, DZ = penalty_gradients(P, X, Y, Y.copy(), 4.0)
        assert np.allclose(DX, single.grads(P.agents, X))
        assert np.allclose(DZ, 8.0 * Y)
        assert np.array_equal(P.optimal_x(), single.optimal_x())
        assert np.allclose(hypergradient(P, X[0]), single.global_grad(X[0]))

    def test_lifted_invalid_mu(self):
        with pytest.raises(ConfigError):
            BilevelFromSingle(build_nonconvex_problem(n=1), mu=0.0)


class TestClassification:
    @pytest.fixture
    def P(self):
        return build_hypercleaning_problem(
            n=2, samples_per_agent=20, dim=3, classes=3, seed=0, test_samples=30
        )

    def test_shapes(self, P):
        assert P.dx == 2 * 18
        assert P.dy == 4 * 3
        assert P.m_val == 2

    def test_grads(self, P, rng):
        x = rng.standard_normal(P.dx)
        y = rng.standard_normal(P.dy) * 0.3
        check_bilevel_grads(P, x, y, i=1, rtol=1e-4)

    def test_lower_depends_on_own_block(self, P, rng):
        x = rng.standard_normal(P.dx)
        gx = P.grad_g_x(0, x, rng.standard_normal(P.dy))
        assert np.count_nonzero(gx[18:]) == 0

    def test_evaluate(self, P):
        val_loss, acc = P.evaluate(np.zeros(P.dy))
        assert val_loss == pytest.approx(np.log(3))
        assert 0 <= acc <= 1

    def test_hpo_grads(self, rng):
        P = build_hpo_problem(
            n=2, samples_per_agent=10, dim=2, classes=2, seed=1, test_samples=5
        )
        assert P.dx == 1
        check_bilevel_grads(P, np.array([0.3]), rng.standard_normal(P.dy), rtol=1e-4)

    def test_hpo_penalty_positive_for_negative_x(self, rng):
        P = build_hpo_problem(
            n=2, samples_per_agent=10, dim=2, classes=2, seed=1, test_samples=5
        )
        y = rng.standard_normal(P.dy)
        x = np.array([-3.0])
        check_bilevel_grads(P, x, y, rtol=1e-4)
        gx, _ = P.grads_g(P.agents[:1], x[None], y[None])
        assert gx[0, 0] == pytest.approx(np.exp(-3.0) * (y @ y))
        low = P.values_g(P.agents[:1], np.array([[-60.0]]), y[None])
        assert P.values_g(P.agents[:1], x[None], y[None]) > low

    def test_single_level(self, P, rng):
        L = P.single_level(reg=0.1)
        w = rng.standard_normal(P.dy) * 0.3
        expected = fd_grad(lambda u: L.value(0, u), w)
        assert L.grad(0, w) == pytest.approx(expected, rel=1e-4, abs=1e-6)

    def test_corrupt_labels_always_flips(self):
        labels = np.arange(100) % 4
        flipped = corrupt_labels(labels, 1.0, 4, np.random.default_rng(0))
        assert (flipped != labels).all()
        assert flipped.max() < 4

    @pytest.mark.parametrize(
        "kwargs", [{"classes": 1}, {"corruption_rate": 1.0}, {"samples_per_agent": 5}]
    )
    def test_invalid(self, kwargs):
        with pytest.raises(ConfigError):
            build_hypercleaning_problem(n=2, **kwargs)

    def test_from_dataset(self, rng):
        data = Dataset(rng.standard_normal((60, 4)), np.arange(60) % 2)
        P = build_hypercleaning_problem(n=2, samples_per_agent=20, data=data, test_samples=10)
        assert P.classes == 2
        assert P.p == 5

    def test_dataset_too_small(self, rng):
        data = Dataset(rng.standard_normal((20, 4)), np.arange(20) % 2)
        with pytest.raises(ConfigError):
            build_hypercleaning_problem(n=2, samples_per_agent=20, data=data, test_samples=10)


def write_idx(path, arr, magic, compress=False):
    header = magic.to_bytes(4, "big") + b"".join(d.to_bytes(4, "big") for d in arr.shape)
    opener = gzip.open if compress else open
    with opener(path, "wb") as f:
        f.write(header + arr.astype(np.uint8).tobytes())


class TestIdx:
    def test_read(self, tmp_path):
        images = np.arange(2 * 3 * 3).reshape(2, 3, 3)
        write_idx(tmp_path / "img.idx", images, 0x803)
        assert np.array_equal(read_idx(tmp_path / "img.idx"), images)

    def test_gzip_dataset(self, tmp_path):
        write_idx(tmp_path / "img.gz", np.full((4, 2, 2), 255), 0x803, compress=True)
        write_idx(tmp_path / "lbl.gz", np.array([0, 1, 1, 0]), 0x801, compress=True)
        data = load_idx_dataset(tmp_path / "img.gz", tmp_path / "lbl.gz", limit=3)
        assert data.features.shape == (3, 4)
        assert data.features.max() == 1.0
        assert data.labels.tolist() == [0, 1, 1]

    def test_bad_magic(self, tmp_path):
        write_idx(tmp_path / "bad.idx", np.zeros(3), 0x901)
        with pytest.raises(DomainError):
            read_idx(tmp_path / "bad.idx")

    def test_truncated(self, tmp_path):
        (tmp_path / "t.idx").write_bytes((0x801).to_bytes(4, "big") + (5).to_bytes(4, "big"))
        with pytest.raises(DomainError):
            read_idx(tmp_path / "t.idx")
