import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from neurovvo.embed import (OutOfDistributionWarning, build_neural_vvo, encode_relu, input_box, input_model,
                            preactivations, propagate_bounds, solve_neural, tap_groups, verify_encoding)
from neurovvo.milp import MilpModel, solve
from neurovvo.surrogate import MlpStack, ShapeError, encoder_forward, main_forward
from neurovvo.vvo import first_stage_violations, flat_size, evaluate_plan, verify_solution

from helpers import jittered_weights, toy_scenarios


def random_net(sizes, seed, scale=1.0):
    g = np.random.default_rng(seed)
    return MlpStack([(g.normal(0, scale, (o, i)), g.normal(0, 0.5, o)) for i, o in zip(sizes[:-1], sizes[1:])])


def fixed_input_solve(net, u, lo, hi):
    model, emb = input_model(net, lo, hi)
    res = solve(model.fixed_copy({v.index: float(x) for v, x in zip(emb.inputs, u)}))
    assert res.status == "optimal"
    return res, emb


class TestPropagateBounds:
    def test_single_neuron(self):
        b = propagate_bounds(MlpStack([(np.array([[1.0]]), np.array([0.0]))]), [0.0], [1.0])
        assert b.lo[0][0] == 0.0 and b.hi[0][0] == 1.0

    def test_difference_of_inputs(self):
        b = propagate_bounds(MlpStack([(np.array([[1.0, -1.0]]), np.array([0.0]))]), [0.0, 0.0], [1.0, 1.0])
        assert b.lo[0][0] == -1.0 and b.hi[0][0] == 1.0

    def test_hidden_clamp_feeds_next_layer(self):
        net = MlpStack([(np.array([[1.0]]), np.array([-2.0])), (np.array([[3.0]]), np.array([1.0]))])
        b = propagate_bounds(net, [0.0], [5.0])
        assert (b.lo[0][0], b.hi[0][0]) == (-2.0, 3.0)
        assert (b.lo[1][0], b.hi[1][0]) == (1.0, 10.0)

    def test_monte_carlo_containment(self):
        net = random_net([7, 12, 8, 1], seed=3)
        lo = np.array([-1.0, 0, 0, -2, 0.5, 0, -0.3])
        hi = np.array([1.0, 1, 1, 0, 2.0, 1, 0.3])
        b = propagate_bounds(net, lo, hi)
        u = np.random.default_rng(0).uniform(lo, hi, size=(100_000, 7))
        pre = preactivations(net, u)
        assert all(p.shape == (100_000, len(l)) for p, l in zip(pre, b.lo))
        assert b.contains(pre)

    def test_one_hot_groups_sound_and_tighter(self):
        net = random_net([5, 6, 1], seed=8)
        lo, hi = np.zeros(5), np.ones(5)
        groups = [[1, 2, 3]]
        loose = propagate_bounds(net, lo, hi)
        tight = propagate_bounds(net, lo, hi, groups)
        for a, b in zip(tight.lo, loose.lo):
            assert np.all(a >= b - 1e-12)
        for a, b in zip(tight.hi, loose.hi):
            assert np.all(a <= b + 1e-12)
        g = np.random.default_rng(1)
        u = (g.random((2000, 5)) < 0.5).astype(float)
        u[:, 1:4] = np.eye(3)[g.integers(3, size=2000)]
        # vertex samples reach the bounds exactly, up to summation order
        assert tight.contains(preactivations(net, u), tol=1e-9)

    def test_overlapping_groups_rejected(self):
        with pytest.raises(ValueError, match="overlap"):
            propagate_bounds(random_net([4, 2, 1], 0), np.zeros(4), np.ones(4), [[0, 1], [1, 2]])

    def test_box_shape_and_order(self):
        net = random_net([3, 2, 1], 0)
        with pytest.raises(ShapeError):
            propagate_bounds(net, np.zeros(2), np.ones(2))
        with pytest.raises(ValueError):
            propagate_bounds(net, np.ones(3), np.zeros(3))

    @settings(max_examples=40, deadline=None)
    @given(seed=st.integers(0, 10_000), shrink=st.floats(0.0, 1.0))
    def test_shrinking_box_never_widens(self, seed, shrink):
        net = random_net([4, 5, 3, 1], seed)
        g = np.random.default_rng(seed)
        lo = g.uniform(-2, 0, 4)
        hi = lo + g.uniform(0.1, 3, 4)
        mid = 0.5 * (lo + hi)
        ilo, ihi = lo + shrink * (mid - lo) * g.random(4), hi - shrink * (hi - mid) * g.random(4)
        outer, inner = propagate_bounds(net, lo, hi), propagate_bounds(net, ilo, ihi)
        for a, b in zip(inner.lo, outer.lo):
            assert np.all(a >= b - 1e-9)
        for a, b in zip(inner.hi, outer.hi):
            assert np.all(a <= b + 1e-9)


class TestEncodeRelu:
    def one_neuron(self):
        return MlpStack([(np.array([[1.0]]), np.array([0.0])), (np.array([[1.0]]), np.array([0.0]))])

    def test_positive_preactivation(self):
        res, emb = fixed_input_solve(self.one_neuron(), [2.0], [-3.0], [3.0])
        key = (0, 0)
        assert res.values[emb.h_pos[key].index] == pytest.approx(2.0, abs=1e-9)
        assert res.values[emb.h_neg[key].index] == pytest.approx(0.0, abs=1e-9)
        assert res.values[emb.mu[key].index] == pytest.approx(1.0)
        assert res.values[emb.psi.index] == pytest.approx(2.0, abs=1e-9)

    def test_negative_preactivation(self):
        res, emb = fixed_input_solve(self.one_neuron(), [-1.0], [-3.0], [3.0])
        key = (0, 0)
        assert res.values[emb.h_pos[key].index] == pytest.approx(0.0, abs=1e-9)
        assert res.values[emb.h_neg[key].index] == pytest.approx(1.0, abs=1e-9)
        assert res.values[emb.mu[key].index] == pytest.approx(0.0)
        assert res.values[emb.psi.index] == pytest.approx(0.0, abs=1e-9)

    @pytest.mark.parametrize("u", [-2.5, -0.3, 0.0, 0.7, 1.9])
    def test_identity_network(self, u):
        # relu(u) - relu(-u) = u
        net = MlpStack([(np.array([[1.0], [-1.0]]), np.zeros(2)), (np.array([[1.0, -1.0]]), np.zeros(1))])
        res, emb = fixed_input_solve(net, [u], [-3.0], [3.0])
        assert res.values[emb.psi.index] == pytest.approx(u, abs=1e-9)

    def test_stable_neurons_have_no_binary(self):
        net = MlpStack([(np.array([[1.0], [-1.0], [1.0]]), np.array([1.0, -0.5, 0.0])),
                        (np.ones((1, 3)), np.zeros(1))])
        model, emb = input_model(net, [0.0], [1.0])
        # [1, 2] active, [-1.5, -0.5] inactive, [0, 1] has lo = 0 so it is active too
        assert emb.counts == {"active": 2, "inactive": 1, "unstable": 0, "constant": 0}
        assert model.n_integer() == 0

    def test_degenerate_interval_becomes_constant(self):
        net = MlpStack([(np.array([[0.0]]), np.array([1.5])), (np.array([[2.0]]), np.array([0.0]))])
        model, emb = input_model(net, [0.0], [1.0])
        assert emb.counts["constant"] == 1
        res = solve(model)
        assert res.values[emb.psi.index] == pytest.approx(3.0)

    def test_constant_inputs_fold_into_bias(self):
        net = random_net([3, 4, 1], seed=2)
        model = MilpModel("fold")
        x = model.add_var("x", "continuous", 0.0, 1.0)
        b = propagate_bounds(net, [0.0, 0.3, -0.2], [1.0, 0.3, -0.2])
        emb = encode_relu(model, net, b, [x.expr(), 0.3, -0.2])
        # only x, psi and neuron variables: the constants add no columns
        assert model.n_vars == 2 + sum(len(d) for d in (emb.h_pos, emb.h_neg, emb.mu))
        res = solve(model.fixed_copy({x.index: 0.6}))
        assert res.values[emb.psi.index] == pytest.approx(main_forward(net, [0.6, 0.3, -0.2], []), abs=1e-7)

    def test_input_count_checked(self):
        net = random_net([3, 2, 1], 0)
        with pytest.raises(ShapeError):
            encode_relu(MilpModel("m"), net, propagate_bounds(net, np.zeros(3), np.ones(3)), [0.0, 1.0])


class TestVerifyEncoding:
    def test_random_net(self):
        net = random_net([6, 10, 6, 1], seed=5)
        lo, hi = -np.ones(6), np.ones(6)
        model, emb = input_model(net, lo, hi)
        assert verify_encoding(model, emb, net, trials=30, seed=1) <= 1e-6

    def test_binary_inputs_at_vertices(self):
        net = random_net([5, 8, 1], seed=6)
        model, emb = input_model(net, np.zeros(5), np.ones(5), integer=range(5))
        assert verify_encoding(model, emb, net, trials=20, seed=2, vertices=True) <= 1e-6

    def test_zero_weights_give_bias_chain(self):
        net = MlpStack([(np.zeros((3, 2)), np.array([0.5, -1.0, 2.0])),
                        (np.zeros((2, 3)), np.array([0.25, -4.0])),
                        (np.array([[2.0, 3.0]]), np.array([0.1]))])
        model, emb = input_model(net, np.zeros(2), np.ones(2))
        assert verify_encoding(model, emb, net, trials=5) <= 1e-9
        assert solve(model).values[emb.psi.index] == pytest.approx(2.0 * 0.25 + 0.1)


@pytest.fixture(scope="module")
def toy4_neural(toy4):
    T = 2
    w = jittered_weights(toy4, T, flat_size(toy4, T), seed=21)
    return toy4, w


class TestBuildNeural:
    def test_size_independent_of_scenario_count(self, toy4_neural):
        f, w = toy4_neural
        sizes = set()
        for n in (10, 1000):
            m = build_neural_vvo(f, toy_scenarios(f, n, seed=n), w)
            sizes.add((m.n_vars, m.n_constraints, m.n_integer()))
        assert len(sizes) == 1

    def test_embedding_enters_as_constants(self, toy4_neural):
        f, w = toy4_neural
        sc = toy_scenarios(f, 5, seed=1)
        zeta = encoder_forward(w, f, sc)
        m1 = build_neural_vvo(f, sc, w, zeta)
        m2 = build_neural_vvo(f, sc, w, zeta + 0.01)
        assert (m1.n_vars, m1.n_constraints) == (m2.n_vars, m2.n_constraints)
        assert not any("zeta" in v.name for v in m1.variables)

    def test_objective_prices_psi_in_dollars(self, toy4_neural):
        f, w = toy4_neural
        w = w.copy()
        w.j_min, w.j_max = 10.0, 110.0
        m = build_neural_vvo(f, toy_scenarios(f, 3, seed=2), w)
        psi = m.meta["net"].psi
        assert m.objective.terms[psi.index] == pytest.approx(100.0)
        assert m.objective.const == pytest.approx(10.0)

    def test_dimension_mismatch(self, toy4_neural, toy8):
        f, w = toy4_neural
        with pytest.raises(Exception):
            build_neural_vvo(toy8, toy_scenarios(toy8, 3, seed=2), w)
        with pytest.raises(ShapeError):
            build_neural_vvo(f, toy_scenarios(f, 3, seed=2, load=(1.0, 0.8, 0.9), pv=(0.5, 1.0, 0.7)), w)

    def test_out_of_range_embedding_warns_and_widens(self, toy4_neural):
        f, w = toy4_neural
        sc = toy_scenarios(f, 4, seed=3)
        zeta = encoder_forward(w, f, sc)
        w = w.copy()
        w.zeta_lo, w.zeta_hi = zeta - 1.0, zeta + 1.0
        with warnings.catch_warnings():
            warnings.simplefilter("error")
            assert not build_neural_vvo(f, sc, w, zeta).meta["out_of_box"]
        with pytest.warns(OutOfDistributionWarning):
            m = build_neural_vvo(f, sc, w, zeta + 5.0)
        assert m.meta["out_of_box"]

    def test_tap_groups_cover_one_hot_blocks(self, toy4):
        groups = tap_groups(toy4, 3)
        k = len(toy4.switchable_branches) * 3
        assert groups[0][0] == k
        assert sum(len(g) for g in groups) == flat_size(toy4, 3) - k

    def test_input_box(self, toy4_neural):
        f, w = toy4_neural
        zeta = np.arange(w.zeta_dim, dtype=float)
        lo, hi = input_box(w, zeta)
        assert np.all(lo[:w.x_dim] == 0) and np.all(hi[:w.x_dim] == 1)
        assert np.array_equal(lo[w.x_dim:], zeta) and np.array_equal(hi[w.x_dim:], zeta)


class TestSolveNeural:
    def test_plan_is_feasible_and_priced_by_recourse(self, toy4_neural):
        f, w = toy4_neural
        sc = toy_scenarios(f, 3, seed=9)
        sol = solve_neural(f, sc, w)
        assert sol.status == "optimal"
        assert first_stage_violations(f, sol.decision) == []
        assert verify_solution(f, sol, sc).ok
        ev = evaluate_plan(f, sc, sol.decision)
        assert sol.objective == pytest.approx(ev.total, rel=1e-9, abs=1e-6)
        pred = sol.extra["predicted"]
        assert pred["curtailment"] == pytest.approx(w.rescale(pred["psi"]))

    def test_surrogate_optimum_matches_enumeration(self, toy4_neural):
        from helpers import all_first_stage
        f, w = toy4_neural
        sc = toy_scenarios(f, 3, seed=4)
        zeta = encoder_forward(w, f, sc)
        best = min(sum(x.cost_breakdown(f)) + float(w.rescale(main_forward(w, x.to_flat(f), zeta)))
                   for x in all_first_stage(f, 2))
        sol = solve_neural(f, sc, w, mip_gap=0.0, evaluate=False)
        assert sol.objective == pytest.approx(best, rel=1e-6, abs=1e-6)
