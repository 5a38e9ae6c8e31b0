import numpy as np
import pytest

from fabsim.algorithms import StepSizes, fab, init_soba_state, init_state, pushpull_soba
from fabsim.diagnostics import (
    LyapunovWeights,
    MetricsRow,
    Transition,
    avg_dyn_residual,
    comm_cost_floats,
    dispersion,
    lyapunov_value,
    mean_over,
    metrics_for,
    min_over,
    tracking_dispersion,
)
from fabsim.digraph import Digraph, TopologySchedule
from fabsim.exceptions import ConfigError, DomainError
from fabsim.mixing import MixingSchedule, WeightVectors, advance_weights
from fabsim.problems import (
    BilevelFromSingle,
    build_hypercleaning_problem,
    build_least_squares_problem,
    build_quadratic_problem,
)


@pytest.fixture
def P():
    return build_quadratic_problem(4, 3, 2, seed=1)


class TestDispersion:
    def test_consensus_is_zero(self):
        pts = np.tile([1.0, -2.0], (3, 1))
        assert dispersion(pts, np.full(3, 1 / 3)) == 0.0

    def test_weighted(self):
        pts = np.array([[0.0], [4.0]])
        # mean 1, spread 0.75 * 1 + 0.25 * 9
        assert dispersion(pts, np.array([0.75, 0.25])) == pytest.approx(3.0)

    @pytest.mark.parametrize(
        "weights", [np.array([0.5, 0.5, 0.0, 0.0]), np.array([0.5, 0.6, -0.1]), np.ones(3)]
    )
    def test_invalid_weights(self, weights):
        with pytest.raises(DomainError):
            dispersion(np.zeros((3, 2)), weights)


class TestTrackingDispersion:
    def test_value(self):
        T = np.array([[1.0], [1.0]])
        # t_j / beta_j = 2 = sum_l t_l
        assert tracking_dispersion(T, np.array([0.5, 0.5])) == 0.0

    def test_nonzero(self):
        T = np.array([[1.0], [0.0]])
        assert tracking_dispersion(T, np.array([0.5, 0.5])) == pytest.approx(1.0)

    def test_zero_beta(self):
        with pytest.raises(DomainError):
            tracking_dispersion(np.ones((2, 1)), np.array([1.0, 0.0]))

    def test_length_mismatch(self):
        with pytest.raises(DomainError):
            tracking_dispersion(np.ones((3, 1)), np.array([0.5, 0.5]))


def test_avg_dyn_residual_vanishes(P):
    sched = MixingSchedule(TopologySchedule(4, seed=0))
    steps = StepSizes.uniform(0.05, penalty_scaled=True)
    wv = WeightVectors.uniform(4)
    st = init_state(P, 10.0)
    for k in range(40):
        pair = sched.pair_at(k)
        nxt = fab(st, P, pair, steps, 10.0)
        prev = Transition(st, steps.at(k, 10.0), wv.alpha)
        wv = advance_weights(wv, pair)
        assert avg_dyn_residual(prev, nxt, wv.alpha) < 1e-10
        st = nxt


def test_avg_dyn_residual_detects_wrong_step(P):
    sched = MixingSchedule(TopologySchedule(4, seed=0))
    steps = StepSizes.uniform(0.05)
    pair = sched.pair_at(0)
    st = init_state(P, 1.0)
    nxt = fab(st, P, pair, steps, 1.0)
    alpha = WeightVectors.uniform(4).alpha
    wv = advance_weights(WeightVectors.uniform(4), pair)
    assert avg_dyn_residual(Transition(st, (0.1, 0.1, 0.1), alpha), nxt, wv.alpha) > 1e-6


def test_avg_dyn_residual_detects_column_convention(P):
    sched = MixingSchedule(TopologySchedule(4, seed=0))
    steps = StepSizes.uniform(0.05, penalty_scaled=True)
    wv = WeightVectors.uniform(4)
    st = init_state(P, 10.0)
    for k in range(6):
        pair = sched.pair_at(k)
        nxt = fab(st, P, pair, steps, 10.0)
        prev = Transition(st, steps.at(k, 10.0), wv.alpha)
        wv = advance_weights(wv, pair)
        st = nxt
    # alpha advanced as A alpha instead of alpha^T A
    wrong = pair.A @ prev.alpha
    assert not np.allclose(wrong, wv.alpha)
    assert avg_dyn_residual(prev, st, wv.alpha) < 1e-10
    assert avg_dyn_residual(prev, st, wrong) > 1e-8


class TestMetricsFor:
    def test_bilevel(self, P):
        st = init_state(P, 10.0)
        row = metrics_for(st, P, WeightVectors.uniform(4), x_star=P.optimal_x())
        assert row.k == 0
        assert row.consensus_x == 0.0
        assert row.D_z == 0.0
        assert row.S_x is not None and row.S_x > 0
        assert row.V_S == pytest.approx(row.S_x + row.S_y + row.S_z)
        assert row.rel_err == pytest.approx(1.0)
        assert row.rel_err_hat == pytest.approx(1.0)
        assert row.hypergrad_norm_sq is not None
        assert row.grad_norm_sq_single is None
        assert row.avg_dyn_residual is None
        assert row.finite()

    def test_soba_third_column_is_v(self, P):
        st = init_soba_state(P)
        row = metrics_for(st, P, WeightVectors.uniform(4))
        assert row.consensus_z == 0.0
        assert row.S_z is not None
        assert row.rel_err is None

    def test_lifted_single_level(self):
        Q = build_least_squares_problem(n=4, dx=3, seed=0)
        lifted = BilevelFromSingle(Q)
        row = metrics_for(init_state(lifted, 1.0), lifted, WeightVectors.uniform(4))
        expected = float(np.sum(Q.global_grad(np.zeros(3)) ** 2))
        assert row.grad_norm_sq_single == pytest.approx(expected)

    def test_classification_scores(self):
        P = build_hypercleaning_problem(n=3, seed=0)
        row = metrics_for(init_state(P, 1.0), P, WeightVectors.uniform(3))
        assert row.val_loss is not None and row.val_loss > 0
        assert 0.0 <= row.test_acc <= 1.0

    def test_weight_mismatch(self, P):
        with pytest.raises(DomainError):
            metrics_for(init_state(P, 1.0), P, WeightVectors.uniform(3))

    def test_residual_after_step(self, P):
        sched = MixingSchedule(TopologySchedule(4, seed=0))
        pair = sched.pair_at(0)
        steps = StepSizes.uniform(0.02)
        st = init_soba_state(P)
        nxt = pushpull_soba(st, P, pair, steps)
        wv = advance_weights(WeightVectors.uniform(4), pair)
        prev = Transition(st, steps.at(0), WeightVectors.uniform(4).alpha)
        row = metrics_for(nxt, P, wv, prev=prev, comm_cost=8.0)
        assert row.avg_dyn_residual < 1e-10
        assert row.comm_cost_floats == 8.0


class TestLyapunov:
    def test_parts(self, P):
        st = init_state(P, 10.0)
        wv = WeightVectors.uniform(4)
        full = lyapunov_value(st, P, wv, 10.0)
        no_net = lyapunov_value(st, P, wv, 10.0, LyapunovWeights(C_b3=0.0, C_b4=0.0))
        # agents start in consensus, so only the tracking term separates the two
        V_S = sum(tracking_dispersion(getattr(st, f"t_{v}"), wv.beta) for v in "xyz")
        assert full - no_net == pytest.approx(V_S)

    def test_a_min_scaling(self, P):
        sched = MixingSchedule(TopologySchedule(4, seed=0))
        st = fab(init_state(P, 10.0), P, sched.pair_at(0), StepSizes.uniform(0.05), 10.0)
        wv = WeightVectors.uniform(4)
        only_d = LyapunovWeights(C_b1=0.0, C_b2=0.0, C_b3=1.0, C_b4=0.0)
        base = lyapunov_value(st, P, wv, 10.0, LyapunovWeights(0.0, 0.0, 0.0, 0.0))
        by_alpha = lyapunov_value(st, P, wv, 10.0, only_d) - base
        by_a_min = lyapunov_value(st, P, wv, 10.0, only_d, a_min=0.5) - base
        # n / alpha_min is 16 with uniform alpha and 4 / 0.5^4 = 64 with a_min
        assert by_a_min == pytest.approx(4 * by_alpha)

    def test_negative_weight(self):
        with pytest.raises(ConfigError):
            LyapunovWeights(C_b2=-1.0)


class TestCommCost:
    def test_per_algorithm(self):
        ring = Digraph(3, {(0, 1), (1, 2), (2, 0)})
        assert comm_cost_floats("pushsum_fab", ring, 5, 20) == 3 * 91
        assert comm_cost_floats("pushpull", ring, 5, 20) == 30
        assert comm_cost_floats("push_sgd", ring, 5, 20) == 18
        assert comm_cost_floats("centralized_f2sa", ring, 5, 20) == 0

    def test_unknown(self):
        with pytest.raises(ConfigError):
            comm_cost_floats("gossip", Digraph(1, set()), 1, 1)


def test_min_over():
    rows = [MetricsRow(k=0), MetricsRow(k=1, rel_err=0.4), MetricsRow(k=2, rel_err=0.2)]
    assert min_over(rows, "rel_err") == 0.2
    assert min_over(rows, "V_D") is None


def test_min_over_skips_initial_row():
    rows = [MetricsRow(k=k, consensus_x=c) for k, c in [(0, 0.0), (5, 0.3), (10, 0.1)]]
    assert min_over(rows, "consensus_x") == 0.1
    assert min_over(rows, "consensus_x", since=0) == 0.0
    assert min_over(rows[:1], "consensus_x") is None


def test_mean_over():
    rows = [MetricsRow(k=k, rel_err=e) for k, e in [(0, 1.0), (10, 0.4), (20, 0.2)]]
    assert mean_over(rows, "rel_err") == pytest.approx(0.3)
    assert mean_over(rows, "rel_err", since=20) == pytest.approx(0.2)
    assert mean_over(rows, "V_D") is None
