import numpy as np
import pytest

from fabsim.algorithms import (
    StepSizes,
    SwarmState,
    centralized_f2sa,
    fab,
    init_centralized_state,
    init_single_state,
    init_soba_state,
    init_state,
    push_sgd,
    pushpull_single,
    pushpull_soba,
    pushsum_fab,
    static_fab,
    theory_regime,
    warm_start,
)
from fabsim.digraph import TopologySchedule
from fabsim.exceptions import ConfigError, NumericalDivergence
from fabsim.mixing import MixingPair, MixingSchedule, restrict_pair
from fabsim.problems import build_least_squares_problem, build_quadratic_problem


@pytest.fixture
def P():
    return build_quadratic_problem(5, 3, 2, seed=0)


@pytest.fixture
def schedule():
    return MixingSchedule(TopologySchedule(5, seed=4))


def run(step, st, schedule, iterations, *args):
    for _ in range(iterations):
        st = step(st, args[0], schedule.pair_at(st.k), *args[1:])
    return st


class TestStepSizes:
    def test_constant(self):
        assert StepSizes(0.1, 0.2, 0.3).at(100) == (0.1, 0.2, 0.3)

    def test_decay(self):
        assert StepSizes.uniform(0.2, decay=0.5).at(2) == pytest.approx((0.1, 0.1, 0.1))

    def test_penalty_scaled(self):
        etas = StepSizes.uniform(0.1, penalty_scaled=True).at(0, lam=20.0)
        assert etas == pytest.approx((0.005, 0.005, 0.005))

    @pytest.mark.parametrize("kwargs", [{"eta_x": 0.0}, {"eta_z": -1.0}, {"decay": -0.1}])
    def test_invalid(self, kwargs):
        args = {"eta_x": 0.1, "eta_y": 0.1, "eta_z": 0.1, **kwargs}
        with pytest.raises(ConfigError):
            StepSizes(**args)


def test_theory_regime():
    eta, lam = theory_regime(8000, 0.5, 2.0)
    assert eta == pytest.approx(0.025)
    assert lam == pytest.approx(40.0)
    with pytest.raises(ConfigError):
        theory_regime(0, 1.0, 1.0)


def test_state_snapshot(tmp_path, P):
    st = init_state(P, 2.0, push_sum=True)
    np.savez(tmp_path / "st.npz", **st.to_dict())
    loaded = SwarmState.from_npz(tmp_path / "st.npz")
    assert loaded.k == st.k
    assert loaded.tracks == st.tracks
    assert np.array_equal(loaded.w, st.w)
    assert np.array_equal(loaded.t_y, st.t_y)
    assert loaded.v is None


class TestFab:
    def test_tracking_conservation(self, P, schedule):
        st = init_state(P, 10.0)
        steps = StepSizes.uniform(0.05, penalty_scaled=True)
        for k in range(60):
            st = fab(st, P, schedule.pair_at(k), steps, 10.0)
            for name in ("x", "y", "z"):
                t, d = getattr(st, f"t_{name}"), getattr(st, f"d_{name}")
                assert np.abs(t.sum(axis=0) - d.sum(axis=0)).max() <= 1e-8
        assert st.k == 60

    def test_does_not_mutate(self, P, schedule):
        st = init_state(P, 10.0)
        before = {name: arr.copy() for name, arr in st.arrays().items()}
        fab(st, P, schedule.pair_at(0), StepSizes.uniform(0.01), 10.0)
        assert all(np.array_equal(before[name], arr) for name, arr in st.arrays().items())
        assert st.k == 0

    def test_consensus_contracts(self, P):
        sched = MixingSchedule(TopologySchedule(5, seed=0))
        steps = StepSizes.uniform(0.02, penalty_scaled=True)
        early = run(fab, init_state(P, 5.0), sched, 5, P, steps, 5.0)
        late = run(fab, early, sched, 300, P, steps, 5.0)

        def spread(st):
            return np.abs(st.x - st.x.mean(axis=0)).max()

        assert spread(late) < spread(early)

    def test_divergence(self, P, schedule):
        st = init_state(P, 10.0)
        with pytest.raises(NumericalDivergence) as info:
            for k in range(500):
                st = fab(st, P, schedule.pair_at(k), StepSizes.uniform(1e6), 10.0)
        assert info.value.iteration >= 1

    def test_warm_start(self, P):
        st = init_state(P, 10.0, warm_start_steps=200)
        cold = init_state(P, 10.0)
        warm_grad = np.linalg.norm(P.grads_g(P.agents, st.x, st.y)[1])
        cold_grad = np.linalg.norm(P.grads_g(P.agents, cold.x, cold.y)[1])
        assert warm_grad < 1e-2 * cold_grad
        assert np.array_equal(st.y, st.z)

    def test_warm_start_helper(self, P):
        X, Y = np.zeros((5, 3)), np.zeros((5, 2))
        assert np.array_equal(warm_start(P, X, Y, 0, 0.1), Y)


def test_static_fab_matches_fab_on_frozen_graph(P):
    topo = TopologySchedule(5, seed=1)
    sched = MixingSchedule(topo)
    graph, pair = sched.at(0)
    steps = StepSizes.uniform(0.05, penalty_scaled=True)
    a = b = init_state(P, 10.0)
    for _ in range(5):
        a = fab(a, P, pair, steps, 10.0)
        b = static_fab(b, P, pair, graph, steps, 10.0)
    assert np.array_equal(a.x, b.x)
    assert np.array_equal(a.t_z, b.t_z)


def test_static_fab_keeps_weight_of_missing_links(P):
    sched = MixingSchedule(TopologySchedule(5, seed=1))
    frozen = sched.pair_at(0)
    ring = sched.graph_at(12)
    st = init_state(P, 10.0)
    nxt = static_fab(st, P, frozen, ring, StepSizes.uniform(0.01), 10.0, repair=True)
    assert nxt.k == 1
    expected = fab(st, P, restrict_pair(frozen, ring), StepSizes.uniform(0.01), 10.0)
    assert np.array_equal(nxt.x, expected.x)
    assert np.array_equal(nxt.t_y, expected.t_y)


def test_static_fab_conserves_tracking_mass(P):
    sched = MixingSchedule(TopologySchedule(5, seed=1))
    frozen = sched.pair_at(0)
    steps = StepSizes.uniform(0.05, penalty_scaled=True)
    st = init_state(P, 10.0)
    for k in range(90):
        st = static_fab(st, P, frozen, sched.graph_at(k), steps, 10.0, repair=True)
        for name in ("x", "y", "z"):
            t, d = getattr(st, f"t_{name}"), getattr(st, f"d_{name}")
            assert np.abs(t.sum(axis=0) - d.sum(axis=0)).max() <= 1e-8
    assert not np.allclose(st.x, 0.0)


def test_static_fab_drops_messages_of_missing_links(P):
    sched = MixingSchedule(TopologySchedule(5, seed=1))
    frozen = sched.pair_at(0)
    ring = sched.graph_at(12)
    st = init_state(P, 10.0)
    steps = StepSizes.uniform(0.01)
    nxt = static_fab(st, P, frozen, ring, steps, 10.0)
    lossy = restrict_pair(frozen, ring, keep_weight=False)
    assert np.array_equal(nxt.x, fab(st, P, lossy, steps, 10.0).x)
    # the pushed tracker mass shrinks with the lost column weight
    gap = np.abs(nxt.t_x.sum(axis=0) - nxt.d_x.sum(axis=0)).max()
    assert gap > 1e-8


class TestPushSum:
    def test_weights_conserved(self, P, schedule):
        st = init_state(P, 10.0, push_sum=True)
        steps = StepSizes.uniform(0.05, penalty_scaled=True)
        st = run(pushsum_fab, st, schedule, 40, P, steps, 10.0)
        assert st.w.sum() == pytest.approx(5.0)
        assert (st.w > 0).all()
        assert np.allclose(st.t_x.sum(axis=0), st.d_x.sum(axis=0), rtol=1e-8, atol=1e-10)

    def test_weight_floor(self, P):
        st = init_state(P, 10.0, push_sum=True)
        B = np.zeros((5, 5))
        B[0, :] = 1.0
        pair = MixingPair.from_matrices(np.eye(5), B)
        with pytest.raises(NumericalDivergence) as info:
            pushsum_fab(st, P, pair, StepSizes.uniform(0.01), 10.0)
        assert info.value.variable == "w"

    def test_push_sgd_single_agent_is_gradient_descent(self):
        Q = build_least_squares_problem(n=1, dx=3, seed=0)
        st = init_single_state(Q, push_sum=True)
        one = MixingPair.from_matrices(np.eye(1), np.eye(1))
        x = np.zeros(3)
        for _ in range(10):
            st = push_sgd(st, Q, one, StepSizes.uniform(0.1))
            x = x - 0.1 * Q.grad(0, x)
        assert np.allclose(st.points("x")[0], x)
        assert st.tracks == ()


def test_pushpull_single_converges():
    Q = build_least_squares_problem(n=5, dx=3, seed=2)
    sched = MixingSchedule(TopologySchedule(5, seed=0))
    st = init_single_state(Q)
    st = run(pushpull_single, st, sched, 1500, Q, StepSizes.uniform(0.05))
    assert np.allclose(st.x, Q.optimal_x(), atol=1e-4)


def test_soba_tracks_v(P, schedule):
    st = init_soba_state(P)
    assert st.tracks == ("x", "y", "v")
    st = run(pushpull_soba, st, schedule, 30, P, StepSizes.uniform(0.02))
    assert np.allclose(st.t_v.sum(axis=0), st.d_v.sum(axis=0), rtol=1e-8, atol=1e-10)
    assert st.z.shape == (5, 0)


def test_centralized_matches_single_agent_fab():
    P = build_quadratic_problem(1, 3, 3, seed=0)
    one = MixingPair.from_matrices(np.eye(1), np.eye(1))
    steps = StepSizes.uniform(0.05, penalty_scaled=True)
    a, b = init_state(P, 10.0), init_centralized_state(P, 10.0)
    for _ in range(200):
        a = fab(a, P, one, steps, 10.0)
        b = centralized_f2sa(b, P, steps, 10.0)
    assert np.array_equal(a.x, b.x)
    assert np.array_equal(a.z, b.z)
