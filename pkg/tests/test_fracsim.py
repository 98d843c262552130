import math
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.optimize import brentq, fsolve

from conftest import BASE_CASE
from stimfolio.designs import NONUNIFORM, UNIFORM, Design
from stimfolio.formation import FormationParams, FormationRealization, UncertaintySpec, sample_realizations
from stimfolio.fracsim import (
    ClusterState,
    SimConfig,
    equilibrium_radius,
    interaction_stress,
    net_pressure_at_toughness,
    partition_flow,
    simulate,
    write_trace_csv,
)

# frozen from the first verified run of the default base case
BASE_ETA = 0.00046024292510123377
BASE_EV = 5.1441149606863546e-08


class TestPartitionFlow:
    def test_equal_entries_split_exactly(self):
        for n in (1, 2, 3, 5, 7):
            p_w, q = partition_flow([3e7] * n, 1e9, 0.2)
            assert np.all(q == 0.2 / n)
            assert p_w == pytest.approx(3e7 + 1e9 * (0.2 / n) ** 2, rel=1e-12)

    def test_large_perf_factor_evens_out_rates(self):
        p = 3e7 + np.linspace(0.0, 1e6, 5)
        _, q = partition_flow(p, 1e12, 0.2)
        assert np.max(np.abs(q - 0.04)) / 0.04 < 0.01

    def test_two_cluster_bisection_oracle(self):
        kappa, q_tot = 1.06e10, 0.2
        p = np.array([3.0e7, 3.1e7])

        def excess(pw):
            return np.sqrt(np.maximum(pw - p, 0.0) / kappa).sum() - q_tot

        pw_ref = brentq(excess, p.min(), p.max() + kappa * q_tot**2, xtol=1e-6, rtol=1e-15, maxiter=500)
        q_ref = np.sqrt(np.maximum(pw_ref - p, 0.0) / kappa)
        p_w, q = partition_flow(p, kappa, q_tot)
        assert p_w == pytest.approx(pw_ref, rel=1e-8)
        assert q == pytest.approx(q_ref, rel=1e-8)

    def test_zero_perf_factor_sends_flow_to_lowest_entries(self):
        p_w, q = partition_flow([3e7, 2.9e7, 3.2e7, 2.9e7], 0.0, 0.2)
        assert p_w == 2.9e7
        assert q.tolist() == [0.0, 0.1, 0.0, 0.1]

    def test_resistance_adds_linear_drop(self):
        c = np.array([1e8, 3e8])
        p_w, q = partition_flow([3e7, 3e7], 1e9, 0.1, resistances=c)
        assert q.sum() == pytest.approx(0.1, rel=1e-12)
        loss = 1e9 * q**2 + c * q
        assert loss[0] == pytest.approx(loss[1], rel=1e-10)
        assert p_w == pytest.approx(3e7 + loss[0], rel=1e-12)

    def test_rejects_bad_inputs(self):
        with pytest.raises(ValueError):
            partition_flow([3e7, float("nan")], 1e9, 0.2)
        with pytest.raises(ValueError):
            partition_flow([3e7], -1.0, 0.2)
        with pytest.raises(ValueError):
            partition_flow([3e7], 1e9, 0.0)
        with pytest.raises(ValueError):
            partition_flow([], 1e9, 0.2)

    def test_residual_on_random_instances(self):
        rng = np.random.default_rng(0)
        for _ in range(10_000):
            n = int(rng.integers(1, 9))
            p = 3e7 + rng.uniform(-5e6, 5e6, n)
            kappa = 10.0 ** rng.uniform(3, 12)
            q_tot = rng.uniform(0.05, 0.3)
            p_w, q = partition_flow(p, kappa, q_tot)
            assert abs(q.sum() - q_tot) <= 1e-10 * q_tot
            assert np.all(q >= 0)
            assert p_w >= p.min()

    @settings(max_examples=200, deadline=None)
    @given(
        p=st.lists(st.floats(1e6, 1e8), min_size=1, max_size=8),
        log_kappa=st.floats(0.0, 13.0),
        q_tot=st.floats(1e-3, 1.0),
    )
    def test_partition_property(self, p, log_kappa, q_tot):
        kappa = 10.0**log_kappa
        p = np.array(p)
        p_w, q = partition_flow(p, kappa, q_tot)
        assert abs(q.sum() - q_tot) <= 1e-10 * q_tot
        # compare in pressure space; p_w - p_i loses digits to cancellation when kappa*Q^2 is tiny
        slack = 1e-9 * kappa * q_tot**2 + 8 * np.spacing(p_w)
        flowing = q > 0
        assert np.all(np.abs(kappa * q[flowing] ** 2 - (p_w - p[flowing])) <= slack)
        assert np.all(p[~flowing] >= p_w - slack)


class TestEquilibriumRadius:
    def test_zero_volume(self):
        assert equilibrium_radius(0.0, 1e6, 3.2e10) == 0.0

    def test_power_law_scaling(self):
        r1 = equilibrium_radius(3.0, 1e6, 3.2e10)
        assert equilibrium_radius(96.0, 1e6, 3.2e10) == pytest.approx(4 * r1, rel=1e-13)

    def test_two_equation_root_find_oracle(self):
        eprime, k_ic, vol = 3.2e10, 1e6, 10.0

        def residual(x):
            # unknowns scaled to order one: radius in 10 m, pressure in 1e5 Pa
            r, p = 10.0 * x[0], 1e5 * x[1]
            return [2 * p * math.sqrt(r / math.pi) / k_ic - 1.0, 16 * p * r**3 / (3 * eprime) / vol - 1.0]

        sol = fsolve(residual, [1.0, 1.0], xtol=1e-13)
        assert max(abs(v) for v in residual(sol)) < 1e-12
        assert equilibrium_radius(vol, k_ic, eprime) == pytest.approx(10.0 * sol[0], rel=1e-10)

    def test_consistent_with_net_pressure(self):
        eprime, k_ic, vol = 3.2e10, 1.3e6, 4.2
        r = equilibrium_radius(vol, k_ic, eprime)
        p = net_pressure_at_toughness(r, k_ic)
        assert 16 * p * r**3 / (3 * eprime) == pytest.approx(vol, rel=1e-9)

    def test_rejects_negative(self):
        with pytest.raises(ValueError):
            equilibrium_radius(-1.0, 1e6, 3e10)


class TestInteractionStress:
    def test_unopened_neighbours(self):
        states = [ClusterState(0.0, 0.0, 0.0), ClusterState(0.0, 0.0, 0.0)]
        assert interaction_stress(states, [10.0, 20.0]) == 0.0

    def test_contact_limit(self):
        s = interaction_stress([ClusterState(1e6, 1.0, 2e5)], [1e-3])
        assert s == pytest.approx(2e5, rel=1e-12)

    def test_distance_equal_to_radius(self):
        s = interaction_stress([ClusterState(10.0, 1.0, 1.0)], [10.0])
        assert s == pytest.approx(0.353553390593, rel=1e-11)

    def test_sum_over_neighbours(self):
        states = [ClusterState(10.0, 1.0, 1e5), ClusterState(20.0, 1.0, 2e5)]
        expect = 1e5 * (1 + (5 / 10) ** 2) ** -1.5 + 2e5 * (1 + (15 / 20) ** 2) ** -1.5
        assert interaction_stress(states, [5.0, 15.0]) == pytest.approx(expect, rel=1e-13)

    def test_rejects_nonpositive_distance(self):
        with pytest.raises(ValueError):
            interaction_stress([ClusterState(1.0, 1.0, 1.0)], [0.0])


def single_cluster_result(t_end=600.0, dt=0.5):
    params = FormationParams(leakoff_coeff=0.0)
    design = Design(0.25, 0.003, 50.0, 0.2, 0.0, UNIFORM)
    cfg = SimConfig(n_clusters=1, t_end=t_end, dt=dt)
    return simulate(design, FormationRealization.homogeneous(params, 1), cfg), params


class TestSimulate:
    def test_single_cluster_closed_form(self):
        res, params = single_cluster_result()
        t = res.end_time
        assert res.volume[0] == pytest.approx(0.2 * t, rel=1e-6)
        r_closed = (3 * params.plane_strain_modulus * 0.2 * t / (8 * math.sqrt(math.pi) * params.toughness)) ** 0.4
        assert abs(res.radius[0] / r_closed - 1) < 0.005
        assert res.energy_variance == 0.0

    def test_mass_balance_and_energy_bounds(self, homogeneous, sim_config):
        reals = sample_realizations(UncertaintySpec(0.2), 3, 5, seed=4)
        designs = [BASE_CASE, Design(0.36, 0.2, 28.0, 0.17, 1.5e6, NONUNIFORM), Design(0.3, 0.55, 20.0, 0.1, 1e5)]
        for d in designs:
            for r in [homogeneous, *reals]:
                res = simulate(d, r, sim_config)
                assert res.mass_balance_error() < 1e-6
                assert 0 < res.energy_efficiency < 1
                assert res.energy_variance >= 0
                assert np.all(res.fracture_energy <= res.input_energy)
                assert np.allclose(res.area, np.pi * res.radius**2)

    def test_input_energy_matches_wellbore_integral(self, homogeneous, sim_config):
        res = simulate(BASE_CASE, homogeneous, replace(sim_config, t_end=100.0), trace=True)
        tr = res.trace
        # trace row k holds the state after k steps, so rows 1.. carry the pressure and rates of each step
        e_in = np.sum(tr["wellbore_pressure"][1:] * tr["rate"][1:].sum(axis=1)) * res.dt
        assert res.input_energy.sum() == pytest.approx(e_in, rel=1e-6)

    def test_radius_never_decreases(self, sim_config):
        real = sample_realizations(UncertaintySpec(0.2), 1, 5, seed=9)[0]
        d = Design(0.36, 0.2, 28.0, 0.17, 1.5e6, NONUNIFORM)
        res = simulate(d, real, replace(sim_config, t_end=120.0), trace=True)
        assert np.all(np.diff(res.trace["radius"], axis=0) >= 0)

    @pytest.mark.parametrize("design", [BASE_CASE, Design(0.38, 0.4, 30.0, 0.15, 1e7, NONUNIFORM)])
    def test_mirror_symmetry(self, design, homogeneous, sim_config):
        r = simulate(design, homogeneous, sim_config).radius
        assert np.allclose(r, r[::-1], rtol=1e-6, atol=0)

    def test_state_relation(self, homogeneous, sim_config):
        res = simulate(BASE_CASE, homogeneous, sim_config)
        eprime = FormationParams().plane_strain_modulus
        assert np.allclose(res.volume, 16 * res.net_pressure * res.radius**3 / (3 * eprime), rtol=1e-9, atol=0)

    def test_perf_factor_reduces_area_spread(self, homogeneous, sim_config):
        cvs = []
        for kappa in (1e5, 1e6, 1e7, 1e8, 1e9, 1e10):
            a = simulate(replace(BASE_CASE, perf_factor=kappa), homogeneous, sim_config).area
            cvs.append(a.std() / a.mean())
        assert all(b <= a * (1 + 1e-9) for a, b in zip(cvs, cvs[1:]))

    def test_time_step_convergence(self, homogeneous, sim_config):
        coarse = simulate(BASE_CASE, homogeneous, sim_config).energy_efficiency
        fine = simulate(BASE_CASE, homogeneous, replace(sim_config, dt=sim_config.dt / 2)).energy_efficiency
        assert abs(fine / coarse - 1) < 0.01

    def test_base_case_golden(self, homogeneous, sim_config):
        res = simulate(BASE_CASE, homogeneous, sim_config)
        assert BASE_CASE.nominal_entry_loss(5) == pytest.approx(1.696e7, rel=1e-12)
        assert res.energy_efficiency == pytest.approx(BASE_ETA, rel=1e-9)
        assert res.energy_variance == pytest.approx(BASE_EV, rel=1e-6)

    def test_deterministic(self, homogeneous, sim_config):
        a = simulate(BASE_CASE, homogeneous, sim_config)
        b = simulate(BASE_CASE, homogeneous, sim_config)
        assert np.array_equal(a.radius, b.radius) and a.energy_efficiency == b.energy_efficiency

    def test_injected_volume_stop(self, homogeneous):
        cfg = SimConfig(injected_volume=40.0)
        res = simulate(BASE_CASE, homogeneous, cfg)
        assert res.injected_volume == pytest.approx(40.0, rel=1e-12)
        assert res.end_time == pytest.approx(200.0)

    def test_cluster_count_mismatch(self, homogeneous):
        with pytest.raises(ValueError):
            simulate(BASE_CASE, homogeneous, SimConfig(n_clusters=4))

    def test_config_validation(self):
        with pytest.raises(ValueError):
            SimConfig(dt=0.0)
        with pytest.raises(ValueError):
            SimConfig(t_end=0.5, dt=0.5)
        with pytest.raises(ValueError):
            SimConfig(wellbore_radius=0.0)

    def test_trace_csv(self, homogeneous, tmp_path):
        res = simulate(BASE_CASE, homogeneous, SimConfig(t_end=10.0, dt=1.0), trace=True)
        path = tmp_path / "trace.csv"
        write_trace_csv(path, res)
        lines = path.read_text().splitlines()
        assert lines[0].split(",")[:3] == ["time", "wellbore_pressure", "radius_0"]
        assert len(lines) == 1 + 11
        with pytest.raises(ValueError):
            write_trace_csv(path, simulate(BASE_CASE, homogeneous, SimConfig(t_end=10.0, dt=1.0)))
