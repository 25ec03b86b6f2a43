"""Problem definitions: rod analytics, objectives, constraints, builders."""

import numpy as np
import pytest

from thermoreg.problems import (
    DiodeObjective,
    OptimizeConfig,
    Rod1DParams,
    SwitchObjective,
    TriodeObjective,
    build_diode_problem,
    build_rod_problem,
    build_switch_problem,
    build_triode_problem,
    contact_resistance,
    optimize,
    solve_case,
    solve_rod_1d,
    volume_constraint,
)
from thermoreg.regularize import ProjectionParams, heaviside


def series_flux(delta_kappa, L_solid=0.04, L_void=0.02, kappa=10.0,
                h=1000.0, dtheta=180.0):
    return -dtheta / (L_solid / kappa + L_void / (delta_kappa * kappa) + 1.0 / h)


class TestRod1D:
    def test_no_contact_resistance(self):
        sol = solve_rod_1d(Rod1DParams(L_c=0.03, kappa=10.0, h=1000.0,
                                       theta_inf=20.0, theta_bar=200.0))
        assert np.isclose(sol.A, -45000.0, rtol=1e-12)
        assert np.isclose(sol.temperature(0.0), 65.0, rtol=1e-12)
        assert np.isclose(sol.temperature(0.03), 200.0, rtol=1e-12)
        assert sol.jump == 0.0

    def test_with_contact_resistance(self):
        sol = solve_rod_1d(Rod1DParams(L_c=0.03, kappa=10.0, h=1000.0,
                                       theta_inf=20.0, theta_bar=200.0,
                                       R_th=0.1))
        assert np.isclose(sol.A, -180.0 / 0.104, rtol=1e-12)
        assert np.isclose(sol.A, -1730.769, rtol=1e-4)
        assert np.isclose(sol.jump, 173.0769, rtol=1e-4)
        x = 0.015
        below = sol.temperature(x - 1e-9)
        above = sol.temperature(x + 1e-9)
        assert np.isclose(above - below, sol.jump, atol=1e-5)

    def test_high_h_limit_is_pure_conduction(self):
        sol = solve_rod_1d(Rod1DParams(L_c=0.03, kappa=10.0, h=1e12,
                                       theta_inf=20.0, theta_bar=200.0))
        assert np.isclose(sol.A, 10.0 * (20.0 - 200.0) / 0.03, rtol=1e-6)

    def test_continuity_at_ends_and_linearity(self):
        p = Rod1DParams(L_c=0.05, kappa=7.0, h=300.0, theta_inf=15.0,
                        theta_bar=120.0, R_th=0.02)
        sol = solve_rod_1d(p)
        X = np.linspace(0, 0.025, 7)
        th = sol.temperature(X)
        assert np.allclose(np.diff(th, 2), 0.0, atol=1e-9)
        assert np.isclose(sol.temperature(p.L_c), p.theta_bar)

    def test_invalid_raises(self):
        with pytest.raises(ValueError):
            solve_rod_1d(Rod1DParams(L_c=-1, kappa=10, h=100,
                                     theta_inf=20, theta_bar=200))

    def test_contact_resistance_values(self):
        assert np.isclose(contact_resistance(1e-3, 1e-3, 10.0), 0.1)
        assert np.isclose(contact_resistance(1e-3, 1e-4, 10.0), 1.0)
        assert np.isclose(contact_resistance(1e-3, 1.0, 10.0), 1e-4)
        with pytest.raises(ValueError):
            contact_resistance(-1.0, 1e-3, 10.0)


class TestRodFEM:
    @pytest.mark.parametrize("dk", [1e-2, 1e-4])
    def test_premature_flux_matches_series_formula(self, dk):
        # at zero displacement the exact solution is piecewise linear and
        # representable, so the match is to rounding precision
        p = build_rod_problem(nx=24, ny=4, delta_kappa=dk, u_bar=-0.001)
        zb = p.density_at_qp()

        rows = {}

        def rec(t, s):
            if abs(t - p.t_thermal) < 1e-12:
                rows["flux"] = p.assembler.reaction_flux(s, "right")

        state, res = solve_case(p.assembler, zb, dt_init=0.05,
                                stops=[p.t_thermal], on_step=rec)
        assert res.converged
        _, avg = rows["flux"]
        assert np.isclose(avg, series_flux(dk), rtol=1e-10)

    def test_zero_average_transverse_motion(self):
        p = build_rod_problem(nx=12, ny=4, delta_kappa=1e-3, u_bar=-0.012)
        zb = p.density_at_qp()
        state, res = solve_case(p.assembler, zb, dt_init=0.1)
        assert res.converged
        nodes = p.assembler.scalars[0].nodes
        w = p.assembler.scalars[0].weights
        uy = state.u()[nodes, 1]
        assert abs(w @ uy) <= 1e-10

    def test_contact_closure_boosts_flux(self):
        p = build_rod_problem(nx=24, ny=4, delta_kappa=1e-3, u_bar=-0.025)
        zb = p.density_at_qp()
        flux = {}

        def rec(t, s):
            flux[round(t, 6)] = p.assembler.reaction_flux(s, "right")[1]

        state, res = solve_case(p.assembler, zb, dt_init=0.05,
                                stops=[p.t_thermal], on_step=rec)
        assert res.converged
        premature = flux[round(p.t_thermal, 6)]
        final = flux[1.0]
        assert abs(premature) < 100.0
        assert abs(final) > 10.0 * abs(premature)

    def test_diffuse_interface_reduces_flux(self):
        sharp = build_rod_problem(nx=24, ny=4, delta_kappa=1e-3,
                                  u_bar=-0.001)
        diffuse = build_rod_problem(nx=24, ny=4, delta_kappa=1e-3,
                                    u_bar=-0.001, mode="diffuse")
        vals = {}
        for label, p in [("sharp", sharp), ("diffuse", diffuse)]:
            def rec(t, s, label=label, p=p):
                if abs(t - p.t_thermal) < 1e-12:
                    vals[label] = abs(p.assembler.reaction_flux(s, "right")[1])
            _, res = solve_case(p.assembler, p.density_at_qp(),
                                dt_init=0.05, stops=[p.t_thermal],
                                on_step=rec)
            assert res.converged
        assert vals["diffuse"] <= vals["sharp"]

    def test_invalid_mode(self):
        with pytest.raises(ValueError):
            build_rod_problem(nx=6, ny=2, mode="wavy")


def _uniform_multiplier_state(assembler, tag, value):
    # multiplier dofs store the physical flux density divided by the
    # group scale
    state = assembler.reference_state()
    g = assembler.group("temp", tag)
    state.a[g.rhs_dofs] = value / g.scale
    return state


class TestObjectives:
    @pytest.fixture(scope="class")
    def switch_problem(self):
        return build_switch_problem(nx=12, ny=6)

    def test_switch_hand_integral(self, switch_problem):
        p = switch_problem
        obj = p.objective
        s = p.mesh.tag_length("anode")
        q0 = 1234.5
        st1 = _uniform_multiplier_state(p.assemblers[0], "anode", 0.0)
        st2 = _uniform_multiplier_state(p.assemblers[1], "anode", -q0)
        C = obj.value(p.assemblers, [st1, st2])
        assert np.isclose(C, -obj.w2 * q0 * s, rtol=1e-12)
        # both zero -> zero
        st0 = p.assemblers[0].reference_state()
        assert obj.value(p.assemblers, [st0, st0]) == 0.0
        assert (obj.w1, obj.w2) == (2e3, 1e3)

    def test_diode_hand_integral(self):
        p = build_diode_problem(nx=12, ny=6)
        obj = p.objective
        s = p.mesh.tag_length("anode")
        q0 = 55.0
        st1 = _uniform_multiplier_state(p.assemblers[0], "anode", -q0)
        st2 = _uniform_multiplier_state(p.assemblers[1], "anode", 0.0)
        C = obj.value(p.assemblers, [st1, st2])
        assert np.isclose(C, -obj.w1 * q0 * s, rtol=1e-12)
        # leakage in reverse adds a positive penalty
        st2b = _uniform_multiplier_state(p.assemblers[1], "anode", +q0 / 2)
        assert obj.value(p.assemblers, [st1, st2b]) > C

    def test_triode_gate_quadratic(self):
        p = build_triode_problem(nx=16, ny=8)
        obj = p.objective
        c = 7.0
        st1 = _uniform_multiplier_state(p.assemblers[0], "gate", c)
        st2 = _uniform_multiplier_state(p.assemblers[1], "gate", c)
        C = obj.value(p.assemblers, [st1, st2])
        assert np.isclose(C, 2.0 * obj.w2 * c ** 2, rtol=1e-12)
        # design 2 drops the gate term
        obj2 = TriodeObjective("anode", "gate", w1=1e3, w2=0.0)
        assert obj2.value(p.assemblers, [st1, st2]) == 0.0

    @pytest.mark.parametrize("kind", ["switch", "diode", "triode"])
    def test_state_partials_match_fd(self, kind):
        if kind == "switch":
            p = build_switch_problem(nx=8, ny=4)
        elif kind == "diode":
            p = build_diode_problem(nx=8, ny=4)
        else:
            p = build_triode_problem(nx=8, ny=4)
        rng = np.random.default_rng(1)
        states = []
        for asm in p.assemblers:
            st = asm.reference_state()
            st.a += rng.standard_normal(asm.n_total)
            states.append(st)
        C0 = p.objective.value(p.assemblers, states)
        for case in range(2):
            asm = p.assemblers[case]
            partial = p.objective.state_partial(case, asm, states[case])
            idx = rng.choice(asm.n_total, size=20, replace=False)
            h = 1e-6
            for d in idx:
                ap = states[case].a[d]
                states[case].a[d] = ap + h
                Cp = p.objective.value(p.assemblers, states)
                states[case].a[d] = ap - h
                Cm = p.objective.value(p.assemblers, states)
                states[case].a[d] = ap
                fd = (Cp - Cm) / (2 * h)
                assert np.isclose(partial[d], fd, rtol=5e-6, atol=1e-6)


class TestVolumeConstraint:
    def test_endpoint_values(self):
        p = build_switch_problem(nx=10, ny=5)
        asm = p.assemblers[0]
        area = p.domain_area
        v_star = 0.4 * area
        n = asm.Q1.n_nodes
        g0, _ = volume_constraint(asm, np.zeros(n), 4.0, 0.4, v_star)
        g1, _ = volume_constraint(asm, np.ones(n), 4.0, 0.4, v_star)
        assert np.isclose(g0, -v_star, rtol=1e-12)
        assert np.isclose(g1, area - v_star, rtol=1e-10)
        assert np.isclose(g1, 0.6 * area, rtol=1e-10)

    def test_threshold_field_matches_scalar_formula(self):
        p = build_switch_problem(nx=10, ny=5)
        asm = p.assemblers[0]
        area = p.domain_area
        beta = 3.0
        H, _ = heaviside(np.array([0.4]), beta, 0.4)
        g, _ = volume_constraint(asm, np.full(asm.Q1.n_nodes, 0.4),
                                 beta, 0.4, 0.0)
        assert np.isclose(g, H[0] * area, rtol=1e-10)

    def test_gradient_matches_fd(self):
        p = build_switch_problem(nx=6, ny=3)
        asm = p.assemblers[0]
        rng = np.random.default_rng(2)
        zeta = rng.uniform(0.1, 0.9, asm.Q1.n_nodes)
        g, dg = volume_constraint(asm, zeta, 5.0, 0.4, 0.123)
        h = 1e-7
        for n in rng.choice(asm.Q1.n_nodes, size=8, replace=False):
            zp, zm = zeta.copy(), zeta.copy()
            zp[n] += h
            zm[n] -= h
            gp, _ = volume_constraint(asm, zp, 5.0, 0.4, 0.123)
            gm, _ = volume_constraint(asm, zm, 5.0, 0.4, 0.123)
            assert np.isclose(dg[n], (gp - gm) / (2 * h), rtol=1e-6)


class TestBuilders:
    def test_switch_layout(self):
        p = build_switch_problem(nx=40, ny=20)
        assert p.name == "switch"
        assert len(p.assemblers) == 2
        assert p.cases[0].temps == {"anode": 200.0, "cathode": 0.0}
        assert p.cases[1].temps == {"anode": 400.0, "cathode": 0.0}
        assert p.frozen.sum() > 0
        assert np.all(p.z0[p.frozen] == 1.0)
        assert np.any(p.z0 < 1e-3)  # seeded gap
        # initial design is volume-feasible at the opening sharpness
        zeta = p.design_filter.apply(p.z0)
        g, _ = volume_constraint(p.assemblers[0], zeta, 2.0, 0.4,
                                 0.4 * p.domain_area)
        assert g <= 0.0

    def test_diode_defaults(self):
        p = build_diode_problem(nx=16, ny=8)
        assert p.ersatz.delta_kappa == 1e-3
        assert p.cases[1].temps == {"anode": 0.0, "cathode": 400.0}
        assert isinstance(p.objective, DiodeObjective)

    def test_triode_layout(self):
        # nx must resolve the gate ends at x = 0.035 and 0.045 exactly
        p = build_triode_problem(nx=80, ny=40)
        assert p.mesh.width == 0.080
        assert np.isclose(p.mesh.tag_length("gate"), 0.010)
        assert p.projection.beta_max == 8.0
        assert p.cases[0].temps["gate"] == 50.0
        assert p.cases[1].temps["gate"] == 100.0
        # gate pad frozen solid
        assert np.all(p.z0[p.frozen] == 1.0)

    def test_switch_objective_defaults(self):
        p = build_switch_problem(nx=8, ny=4)
        assert isinstance(p.objective, SwitchObjective)
        assert p.volume_fraction == 0.4
        assert p.projection.beta_max == 16.0


@pytest.mark.slow
def test_optimize_smoke():
    p = build_switch_problem(nx=16, ny=8,
                             projection=ProjectionParams(start_iter=2,
                                                         period=2,
                                                         beta_max=4.0))
    rows = []
    res = optimize(p, OptimizeConfig(max_iter=3, dt_init=0.25,
                                     log=rows.append))
    assert len(res.history) == 3
    assert len(rows) == 3
    assert np.isfinite(res.objective)
    assert np.all(res.z >= 0.0) and np.all(res.z <= 1.0)
    assert np.all(res.z[p.frozen] == 1.0)
    assert res.history[0]["beta"] == 2.0
    assert {"iteration", "objective", "constraint", "beta",
            "max_change"} <= set(res.history[0])
