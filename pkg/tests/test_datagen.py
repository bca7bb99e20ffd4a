import copy
import json

import numpy as np
import pytest

from neurovvo import datagen
from neurovvo.datagen import (DatagenConfig, DatagenError, generate_dataset, label_sample, load_dataset,
                              make_instance, perturb_first_stage, select_kernel_scenarios, solve_kernel)
from neurovvo.feeder import bundled_path, parse_feeder
from neurovvo.scenario import base_scenario, sample_scenarios
from neurovvo.vvo import (FirstStageDecision, evaluate_plan, first_stage_violations, flat_size,
                          solve_exact)

from helpers import toy_scenarios

SHORT = (np.array([1.0, 0.8]), np.array([0.6, 1.3]))


def l1(feeder, a, b):
    return float(np.abs(a.to_flat(feeder) - b.to_flat(feeder)).sum())


def quiet(feeder, horizon=2, n=1):
    return sample_scenarios(base_scenario(feeder, np.full(horizon, 0.5), np.zeros(horizon)), n, 0, 0.0)


class TestInstances:
    def test_deterministic(self, toy4):
        a = make_instance(toy4, 5, 4, profile=SHORT)
        b = make_instance(toy4, 5, 4, profile=SHORT)
        assert all(x.equals(y) for x, y in zip(a, b))

    def test_multipliers_within_range(self, toy4):
        sc = make_instance(toy4, 3, 1, perturbation=0.0, load_range=(1.2, 1.2), pv_range=(0.5, 0.5),
                           profile=SHORT)
        nominal = base_scenario(toy4, SHORT[0] * 1.2, SHORT[1] * 0.5)
        assert np.allclose(sc[0].stacked(), nominal.stacked())

    def test_kernel_quantiles(self, toy4):
        sc = toy_scenarios(toy4, 7, seed=2)
        picked = select_kernel_scenarios(sc)
        loads = sorted(s.net_load() for s in sc)
        assert [s.net_load() for s in picked] == [loads[0], loads[3], loads[-1]]


class TestKernel:
    def test_quiet_scenario_keeps_default_plan(self, toy4):
        [x] = solve_kernel(toy4, quiet(toy4))
        assert sum(x.cost_breakdown(toy4)) == 0.0
        assert x == FirstStageDecision.default(toy4, 2)

    def test_one_kernel_per_scenario(self, toy8):
        sc = toy_scenarios(toy8, 2, seed=3)
        kernels = solve_kernel(toy8, sc)
        assert len(kernels) == 2
        for x in kernels:
            assert first_stage_violations(toy8, x) == []

    def test_failed_kernel_skipped(self, toy4, monkeypatch):
        from neurovvo.milp import SolveResult
        monkeypatch.setattr(datagen, "solve", lambda *a, **k: SolveResult("infeasible"))
        assert solve_kernel(toy4, toy_scenarios(toy4, 2, seed=1)) == []


class TestPerturb:
    def test_small_ball_returns_kernel(self, toy4):
        x = FirstStageDecision.default(toy4, 1)
        # 5 entries, radius 0.5: only the centre is an integer point
        assert flat_size(toy4, 1) * 0.1 < 1
        for seed in range(5):
            assert perturb_first_stage(toy4, x, seed, eta=0.1) == x

    @pytest.mark.parametrize("name,horizon", [("toy8", 1), ("desk7", 4)])
    def test_distance_within_radius(self, request, name, horizon):
        f = request.getfixturevalue(name)
        x = FirstStageDecision.default(f, horizon)
        radius = 0.2 * flat_size(f, horizon)
        for seed in range(10):
            y = perturb_first_stage(f, x, seed, eta=0.2)
            assert l1(f, x, y) <= radius + 1e-9
            assert first_stage_violations(f, y) == []

    def test_diversity(self, toy8):
        x = FirstStageDecision.default(toy8, 2)
        seen = {tuple(perturb_first_stage(toy8, x, s).to_flat(toy8)) for s in range(100)}
        assert len(seen) >= 2

    def test_eta_range(self, toy4):
        with pytest.raises(ValueError):
            perturb_first_stage(toy4, FirstStageDecision.default(toy4, 1), 0, eta=0.0)
        with pytest.raises(ValueError):
            DatagenConfig(eta=1.0)


class TestLabel:
    def test_quiet_set_has_zero_label(self, toy4):
        assert label_sample(toy4, quiet(toy4, n=3), FirstStageDecision.default(toy4, 2)) == 0.0

    def test_matches_plan_evaluation(self, toy8):
        sc = toy_scenarios(toy8, 4, seed=5, pv=(1.4, 1.5))
        x = perturb_first_stage(toy8, FirstStageDecision.default(toy8, 2), 7)
        ev = evaluate_plan(toy8, sc, x)
        assert label_sample(toy8, sc, x) == pytest.approx(ev.expected_recourse, abs=1e-6)
        assert label_sample(toy8, sc, x) > 0

    def test_doubling_curtailment_weight(self, toy4):
        doc = json.loads(bundled_path("toy4.json").read_text())
        doc2 = copy.deepcopy(doc)
        doc2["limits"]["costs"] = {"der": 2 * toy4.limits.w_der}
        sc = toy_scenarios(toy4, 3, 9, pv=(1.4, 1.4))
        x = FirstStageDecision.default(toy4, 2)
        a = label_sample(toy4, sc, x)
        assert a > 0
        assert label_sample(parse_feeder(doc2), sc, x) == pytest.approx(2 * a, rel=1e-6)

    def test_infeasible_recourse_raises(self, toy4, monkeypatch):
        class Bad:
            feasible = False

            def failures(self):
                return {1: "infeasible"}
        monkeypatch.setattr(datagen, "evaluate_plan", lambda *a, **k: Bad())
        with pytest.raises(DatagenError, match="infeasible"):
            label_sample(toy4, quiet(toy4), FirstStageDecision.default(toy4, 2))


def config(**kw):
    base = dict(n_samples=6, scenarios_per_instance=3, seed=4, workers=1)
    base.update(kw)
    return DatagenConfig(**base)


class TestGenerate:
    def test_dataset_roundtrip(self, toy8, tmp_path):
        man = generate_dataset(toy8, config(n_samples=10), tmp_path, profile=SHORT)
        assert man["n_samples"] == 10 and man["discarded"] == []
        ds = load_dataset(tmp_path)
        assert len(ds.samples) == 10
        labels = [json.loads((tmp_path / rel).read_text())["label"] for rel in man["samples"]]
        assert ds.labels().tolist() == labels
        for s in ds.samples:
            x = FirstStageDecision.from_json(s["decision"])
            assert first_stage_violations(toy8, x) == []
            assert np.array_equal(x.to_flat(toy8), s["x_flat"])
            assert s["label"] >= 0 and s["provenance"] == "accelerated"
            assert len(ds.scenarios(s)) == 3
        assert set(man["seeds"]) == {str(s["index"]) for s in ds.samples}

    def test_labels_reproduce_from_seed(self, toy8, tmp_path):
        man = generate_dataset(toy8, config(n_samples=3), tmp_path, profile=SHORT)
        ds = load_dataset(tmp_path)
        for s in ds.samples:
            x = FirstStageDecision.from_json(s["decision"])
            assert label_sample(toy8, ds.scenarios(s), x) == pytest.approx(s["label"], abs=1e-9)
        assert man["config"]["seed"] == 4

    def test_exact_mode(self, toy4, tmp_path):
        generate_dataset(toy4, config(n_samples=2, mode="exact"), tmp_path, profile=SHORT)
        for s in load_dataset(tmp_path).samples:
            assert s["provenance"] == "exact" and s["kernel"] is None

    def test_failures_replaced_then_abort(self, toy4, tmp_path, monkeypatch):
        real = datagen._one_sample

        def flaky(feeder, cfg, index, profile):
            if index in fail:
                return index, None, None, "forced"
            return real(feeder, cfg, index, profile)
        monkeypatch.setattr(datagen, "_one_sample", flaky)
        fail = {1}
        man = generate_dataset(toy4, config(n_samples=10), tmp_path / "a", profile=SHORT)
        assert man["n_samples"] == 10
        assert man["discarded"] == [{"index": 1, "reason": "forced"}]
        assert "samples/sample_00010.json" in man["samples"]
        fail = {0, 2}
        with pytest.raises(DatagenError, match="limit 1"):
            generate_dataset(toy4, config(n_samples=10), tmp_path / "b", profile=SHORT)

    def test_not_a_dataset(self, tmp_path):
        (tmp_path / "manifest.json").write_text("{}")
        with pytest.raises(DatagenError):
            load_dataset(tmp_path)

    def test_bad_mode(self):
        with pytest.raises(ValueError):
            DatagenConfig(mode="fast")


@pytest.mark.slow
def test_accelerated_labels_bound_the_optimum(toy8):
    """label(x) + c(x) is the true cost of a feasible plan, so it cannot beat the extensive optimum."""
    cfg = config()
    for k in range(8):
        idx, sc, sample, reason = datagen._one_sample(toy8, cfg, k, SHORT)
        assert reason is None
        exact = solve_exact(toy8, sc, mip_gap=0.0)
        assert sample.label + sample.first_stage_cost >= exact.objective - 1e-6 * max(1.0, exact.objective)
