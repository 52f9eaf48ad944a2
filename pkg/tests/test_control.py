import numpy as np
import pytest

from reentrain.control import (ControlProblem, make_problem, solve_bvp,
                               continuation_sweep)

from conftest import HOPF_OMEGA

T_NAT = 2.0 * np.pi / HOPF_OMEGA


@pytest.fixture(scope="module")
def shift_problem(hopf_family):
    # free-running phase advance of half an hour over three natural cycles
    return make_problem("phase-only", hopf_family, 0.5, T_f=3.0 * T_NAT)


@pytest.fixture(scope="module")
def shift_solution(shift_problem):
    sol = solve_bvp(shift_problem)
    assert sol.converged
    return sol


class TestProblemSetup:

    def test_rejects_unknown_formulation(self, hopf_family):
        with pytest.raises(ValueError):
            make_problem("optimal", hopf_family, 1.0, T_f=10.0)

    def test_target_carries_winding_and_shift(self, hopf_family):
        T_f = 3.0 * T_NAT
        prob = make_problem("phase-only", hopf_family, 0.5, T_f=T_f)
        om = hopf_family.omega(0.0)
        expect = om * T_f + 0.5 * om
        assert prob.theta_target == pytest.approx(expect, rel=1e-12)

    def test_theta_wrap_shifts_target(self, hopf_family):
        a = make_problem("phase-only", hopf_family, 0.5, T_f=10.0)
        b = make_problem("phase-only", hopf_family, 0.5, T_f=10.0,
                         theta_wrap=-2.0 * np.pi)
        assert b.theta_target == pytest.approx(a.theta_target - 2.0 * np.pi)

    def test_du_bounds_follow_nominal_drive(self, hopf_family):
        nom = lambda t: 0.01
        prob = make_problem("phase-only", hopf_family, 0.0, T_f=10.0,
                            u_nom=nom, L_min=0.0, L_max=0.03)
        lo, hi = prob.du_bounds(3.0)
        assert lo == pytest.approx(-0.01)
        assert hi == pytest.approx(0.02)


class TestSolveBvp:

    def test_boundary_residual(self, shift_problem, shift_solution):
        assert shift_solution.residual < 1e-8
        assert shift_solution.states[-1, 0] == pytest.approx(
            shift_problem.theta_target, abs=1e-7)

    def test_control_law_consistency(self, shift_problem, shift_solution):
        sol = shift_solution
        for k in range(0, len(sol.t), max(1, len(sol.t) // 16)):
            y = np.concatenate([sol.states[k], sol.costates[k]])
            assert abs(sol.du[k] - shift_problem.control_law(y, sol.t[k])) < 1e-10

    def test_hamiltonian_is_conserved(self, shift_problem, shift_solution):
        sol = shift_solution
        hs = [shift_problem.hamiltonian(sol.t[k],
                                        np.concatenate([sol.states[k],
                                                        sol.costates[k]]))
              for k in range(0, len(sol.t), max(1, len(sol.t) // 32))]
        assert np.max(np.abs(np.array(hs) - hs[0])) < 1e-5

    def test_cost_is_positive_and_finite(self, shift_solution):
        assert np.isfinite(shift_solution.cost)
        assert shift_solution.cost > 0.0

    def test_zero_shift_costs_nothing(self, hopf_family):
        sol = solve_bvp(make_problem("phase-only", hopf_family, 0.0,
                                     T_f=2.0 * T_NAT))
        assert sol.converged
        assert sol.cost < 1e-12
        assert np.max(np.abs(sol.du)) < 1e-6

    def test_adaptive_formulation_converges(self, hopf_family):
        sol = solve_bvp(make_problem("adaptive", hopf_family, 0.3,
                                     T_f=3.0 * T_NAT))
        assert sol.converged
        assert sol.residual < 1e-8


class TestContinuation:

    def test_sweep_warm_starts_both_branches(self, hopf_family):
        def make(dt):
            return make_problem("phase-only", hopf_family, dt, T_f=3.0 * T_NAT)

        out = continuation_sweep(make, (-0.4, -0.2, 0.2, 0.4))
        assert set(out) == {-0.4, -0.2, 0.2, 0.4}
        for dt, sol in out.items():
            assert sol.converged, dt
        # symmetric shifts should cost about the same
        assert out[0.4].cost == pytest.approx(out[-0.4].cost, rel=0.3)
