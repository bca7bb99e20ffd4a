import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from neurovvo.milp import (CommandBackend, MilpModel, ModelError, add_octagon, check_assignment, export_mps,
                           incumbent_trace, solve)
from neurovvo.milp.solvers import default_cbc_command

needs_cbc = pytest.mark.skipif(default_cbc_command() is None, reason="cbc executable not available")
COS8 = math.cos(math.pi / 8)


def octagon_model(s=1.0):
    m = MilpModel("oct")
    p = m.add_var("p", lo=-10, hi=10)
    q = m.add_var("q", lo=-10, hi=10)
    add_octagon(m, p, q, s, "oct")
    return m, p, q


class TestModel:
    def test_binary_bounds_clipped(self):
        m = MilpModel()
        v = m.add_var("b", "binary", lo=-3, hi=7)
        assert (v.lo, v.hi) == (0.0, 1.0)

    def test_rejects_inverted_bounds(self):
        with pytest.raises(ModelError):
            MilpModel().add_var("x", lo=2, hi=1)

    def test_duplicate_terms_merged(self):
        m = MilpModel()
        x = m.add_var("x")
        con = m.add_le(x + 2 * x + 3, 9)
        assert con.indices == (0,) and con.coefs == (3.0,) and con.rhs == 6.0

    def test_unregistered_variable(self):
        m = MilpModel()
        other = MilpModel()
        other.add_var("a")
        y = other.add_var("b")
        with pytest.raises(ModelError, match="unregistered"):
            m.add_le(y, 1)

    def test_nonlinear_rejected(self):
        m = MilpModel()
        x = m.add_var("x")
        with pytest.raises(TypeError):
            x.expr() * x


class TestOctagon:
    def test_circle_points_feasible(self):
        m, p, q = octagon_model(2.0)
        for th in np.linspace(0, 2 * np.pi, 721):
            assert check_assignment(m, {"p": 2 * np.cos(th), "q": 2 * np.sin(th)}, tol=1e-12) == []

    def test_corner_infeasible(self):
        m, _, _ = octagon_model(1.0)
        v = check_assignment(m, {"p": 1.0, "q": 1.0})
        assert [x.name for x in v] == ["oct:sum+"]
        assert v[0].slack == pytest.approx(2 - math.sqrt(2))

    def test_thermal_off_forces_zero(self):
        m = MilpModel()
        p = m.add_var("p", lo=-5, hi=5)
        q = m.add_var("q", lo=-5, hi=5)
        a = m.add_var("a", "binary", lo=0, hi=0)
        add_octagon(m, p, q, a * 3.0, "th")
        for obj in (p, -p, q, -q):
            m.set_objective(obj)
            assert solve(m).objective == pytest.approx(0.0, abs=1e-9)

    def test_nonlinear_bound_rejected(self):
        m = MilpModel()
        with pytest.raises(TypeError):
            add_octagon(m, m.add_var("p"), m.add_var("q"), "s", "x")

    @settings(max_examples=200, deadline=None)
    @given(st.floats(-3, 3), st.floats(-3, 3), st.floats(0.1, 2.0))
    def test_inscribed_and_circumscribed(self, p, q, s):
        m, _, _ = octagon_model(s)
        feasible = not check_assignment(m, {"p": p, "q": q}, tol=0.0)
        if p * p + q * q <= s * s * (1 - 1e-12):
            assert feasible
        if feasible:
            assert p * p + q * q <= (s / COS8) ** 2 * (1 + 1e-12)


class TestMps:
    def test_empty_model(self):
        text = export_mps(MilpModel("empty"))
        assert text.splitlines() == ["NAME empty FREE", "ROWS", " N  OBJ", "COLUMNS", "RHS", "BOUNDS", "ENDATA"]

    def test_lower_bound_visible(self):
        m = MilpModel("lb")
        x = m.add_var("x", lo=3.0)
        m.set_objective(x)
        assert " LO BND x 3.0" in export_mps(m).splitlines()

    def test_objective_constant_and_integrality(self):
        m = MilpModel("k")
        y = m.add_var("y", "integer", lo=-2, hi=5)
        b = m.add_var("b", "binary")
        m.set_objective(y + b + 4.5)
        m.add_ge(y + b, 1, "r")
        lines = export_mps(m).splitlines()
        assert "    RHS OBJ -4.5" in lines
        assert any("'INTORG'" in ln for ln in lines)
        assert " LO BND y -2.0" in lines and " UP BND y 5.0" in lines and " BV BND b" in lines

    def test_name_collision(self):
        m = MilpModel()
        m.add_var("a b")
        m.add_var("a_b")
        with pytest.raises(ModelError, match="collision"):
            export_mps(m)

    def test_deterministic(self, toy4):
        from neurovvo.scenario import base_scenario
        from neurovvo.vvo import build_deterministic
        sc = base_scenario(toy4, [1.0, 0.8], [0.5, 0.9])
        assert export_mps(build_deterministic(toy4, sc)) == export_mps(build_deterministic(toy4, sc))


class TestSolve:
    def test_lower_bound(self):
        m = MilpModel()
        x = m.add_var("x", lo=-math.inf)
        m.add_ge(x, 3)
        m.set_objective(x)
        r = solve(m)
        assert r.status == "optimal" and r.objective == pytest.approx(3.0)

    def test_binary(self):
        m = MilpModel()
        x = m.add_var("x", "binary")
        m.set_objective(-x)
        r = solve(m)
        assert r["x"] == 1.0 and r.objective == -1.0

    def test_infeasible(self):
        m = MilpModel()
        x = m.add_var("x", lo=-math.inf)
        m.add_ge(x, 1)
        m.add_le(x, 0)
        r = solve(m)
        assert r.status == "infeasible" and r.assignment is None

    def test_point_violating_one_row(self):
        m = MilpModel()
        x = m.add_var("x", lo=-math.inf)
        y = m.add_var("y", lo=-math.inf)
        m.add_le(x + y, 1, "cap")
        m.add_ge(x, -5, "floor")
        assert check_assignment(m, {"x": 0.5, "y": 0.5}) == []
        v = check_assignment(m, {"x": 1.0, "y": 0.5})
        assert len(v) == 1 and v[0].name == "cap" and v[0].slack == pytest.approx(0.5)

    def test_trace_monotone(self):
        log = "\n".join([
            " B       0       0         0   0.00%   -inf            12.5              Large        0      0      0         0     0.1s",
            " H       0       0         0   0.00%   -inf            10                Large        0      0      0         0     0.2s",
            " T       3       0         1   10.0%   1               11                90.91%       0      0      0        12     0.3s",
            " T       4       0         1   10.0%   1               7                 90.91%       0      0      0        12     0.4s",
        ])
        trace = incumbent_trace(log, "highs")
        assert [v for _, v in trace] == [12.5, 10.0, 7.0]


@needs_cbc
class TestCommandBackend:
    def test_small_models(self):
        m = MilpModel()
        x = m.add_var("x", lo=-math.inf)
        m.add_ge(x, 3)
        m.set_objective(x)
        assert solve(m, CommandBackend()).objective == pytest.approx(3.0)
        m2 = MilpModel()
        m2.set_objective(-m2.add_var("x", "binary"))
        assert solve(m2, CommandBackend()).objective == -1.0

    def test_infeasible(self):
        m = MilpModel()
        x = m.add_var("x", lo=-math.inf)
        m.add_ge(x, 1)
        m.add_le(x, 0)
        assert solve(m, CommandBackend()).status == "infeasible"

    def test_vvo_model_roundtrip(self, toy4):
        from neurovvo.scenario import base_scenario
        from neurovvo.vvo import build_deterministic
        model = build_deterministic(toy4, base_scenario(toy4, [1.0, 0.8], [0.5, 1.2]))
        ext = solve(model, CommandBackend())
        assert ext.status == "optimal"
        assert check_assignment(model, ext.values, tol=1e-6) == []
        assert ext.objective == pytest.approx(model.objective_value(ext.assignment), abs=1e-6)
        assert ext.objective == pytest.approx(solve(model).objective, abs=1e-4)
