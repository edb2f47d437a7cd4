import math

import numpy as np
import pytest

from onoffsbm import (
    ACTIVE,
    DORMANT,
    ConstantFunction,
    FiniteMeasure,
    GaussianBump,
    MissingDerivative,
    ModelParams,
    ParticleSystem,
    PopulationCapExceeded,
    RandomSource,
    TentFunction,
    laplace_functional_mc,
    martingale_residual,
    next_event,
    pair_integral,
    simulate_until,
    total_masses,
)
from onoffsbm.particle import (
    EVENT_DEATH,
    EVENT_SPLIT,
    EVENT_TO_ACTIVE,
    EVENT_TO_DORMANT,
    ensemble_total_masses,
)

from conftest import assert_within_sigma


def single_active(params, epsilon=1.0, **kw):
    return ParticleSystem(params, epsilon, active_positions=[[0.0]], **kw)


class TestEventMechanics:
    def test_first_event_probabilities_single_active(self, params, rng):
        # to-dormant c/(gamma+c), death gamma/(2(gamma+c)), split likewise at eps=1
        gen = rng.generator()
        counts = {EVENT_TO_DORMANT: 0, EVENT_DEATH: 0, EVENT_SPLIT: 0}
        reps = 20_000
        for _ in range(reps):
            record = next_event(single_active(params), gen)
            counts[record.kind] += 1
        g, c = params.gamma, params.c
        expected = {
            EVENT_TO_DORMANT: c / (g + c),
            EVENT_DEATH: g / (2 * (g + c)),
            EVENT_SPLIT: g / (2 * (g + c)),
        }
        for kind, p_exact in expected.items():
            stderr = math.sqrt(p_exact * (1 - p_exact) / reps)
            assert_within_sigma(counts[kind] / reps, p_exact, stderr, context=kind)

    def test_single_dormant_always_wakes(self, params, rng):
        gen = rng.generator()
        waits = []
        for _ in range(5000):
            system = ParticleSystem(params, 1.0, dormant_positions=[[1.5]])
            record = next_event(system, gen)
            assert record.kind == EVENT_TO_ACTIVE
            assert system.active_positions()[0, 0] == 1.5  # frozen until it wakes
            waits.append(record.time)
        # waiting time ~ Exp(c_tilde)
        mean = np.mean(waits)
        stderr = np.std(waits, ddof=1) / math.sqrt(len(waits))
        assert_within_sigma(mean, 1.0 / params.c_tilde, stderr, context="wake time")

    def test_empty_system_is_absorbing(self, params, rng):
        system = ParticleSystem(params, 1.0)
        assert next_event(system, rng.generator()) is None
        snaps = simulate_until(system, 1.0, rng.generator(), observation_times=[0.5, 1.0])
        assert all(s.n_active == 0 and s.n_dormant == 0 for s in snaps)
        assert system.time == 1.0

    def test_event_rate_formula(self, params):
        system = ParticleSystem(params, 0.5, active_positions=[[0.0], [1.0]], dormant_positions=[[2.0]])
        expected = 2 * (params.gamma / 0.5 + params.c) + 1 * params.c_tilde
        assert system.event_rate() == pytest.approx(expected)

    def test_population_cap_raises(self, params, rng):
        # critical branching may die out first, so retry fresh systems until a
        # split pushes the count over the cap
        gen = rng.generator()
        with pytest.raises(PopulationCapExceeded):
            for _ in range(200):
                system = ParticleSystem(params, 1.0, active_positions=[[0.0], [0.1]], population_cap=2)
                while system.event_rate() > 0:
                    next_event(system, gen)

    def test_dormant_position_frozen_across_interval(self, params, rng):
        # single particle, branching off: alternates active/dormant; while
        # dormant the position must not move between the switch events
        system = single_active(params, branching_enabled=False)
        gen = rng.generator()
        for _ in range(200):
            if system.n_dormant == 1:
                before = system.dormant_positions()[0, 0]
                record = next_event(system, gen)
                assert record.kind == EVENT_TO_ACTIVE
                assert system.active_positions()[0, 0] == before
            else:
                next_event(system, gen)

    def test_dormant_multiset_changes_by_one_row_per_event(self, params, rng):
        system = ParticleSystem(
            params, 0.5, active_positions=[[0.0], [0.3]], dormant_positions=[[1.0], [2.0]]
        )
        gen = rng.generator()
        for _ in range(100):
            before = sorted(system.dormant_positions()[:, 0])
            record = next_event(system, gen)
            if record is None:
                break
            after = sorted(system.dormant_positions()[:, 0])
            if record.kind == EVENT_TO_DORMANT:
                assert len(after) == len(before) + 1
                assert set(np.round(before, 12)) <= set(np.round(after, 12))
            elif record.kind == EVENT_TO_ACTIVE:
                assert len(after) == len(before) - 1
                assert set(np.round(after, 12)) <= set(np.round(before, 12))
            else:
                assert after == before


class TestDiffusion:
    def test_pure_brownian_displacement_variance(self, params, rng):
        # branching disabled and no dormancy possible from dormant-only pool:
        # track a crowd of active particles over a fixed horizon with no events
        # by disabling branching and making switching negligible via short time
        reps = 4000
        t = 0.7
        gen = rng.generator()
        disp = []
        count_changes = 0
        for _ in range(reps):
            system = ParticleSystem(params, 1.0, active_positions=[[0.0]], branching_enabled=False)
            events = []
            simulate_until(system, t, gen, events=events)
            if system.n_active == 1 and not events:
                disp.append(system.active_positions()[0, 0])
            else:
                count_changes += 1
        disp = np.asarray(disp)
        # conditional on no switching, displacement ~ N(0, t)
        var = disp.var(ddof=1)
        stderr = var * math.sqrt(2.0 / (len(disp) - 1))
        assert_within_sigma(var, t, stderr, context="displacement variance")
        assert count_changes > 0  # switching does happen at rate c

    def test_particle_count_constant_without_branching(self, params, rng):
        system = ParticleSystem(
            params, 1.0, active_positions=[[0.0], [1.0]], dormant_positions=[[2.0]], branching_enabled=False
        )
        simulate_until(system, 5.0, rng.generator())
        assert system.n_particles == 3

    def test_occupation_fraction_matches_two_state_chain(self, params, rng):
        # stationary active fraction c_tilde / (c + c_tilde)
        gen = rng.generator()
        t_end = 400.0
        system = single_active(params, branching_enabled=False)
        events = []
        simulate_until(system, t_end, gen, events=events)
        active_time = 0.0
        state, last = ACTIVE, 0.0
        for record in events:
            if state == ACTIVE:
                active_time += record.time - last
            last = record.time
            state = ACTIVE if record.kind == EVENT_TO_ACTIVE else DORMANT
        if state == ACTIVE:
            active_time += t_end - last
        exact = params.c_tilde / (params.c + params.c_tilde)
        assert abs(active_time / t_end - exact) < 0.05


class TestMasses:
    def test_empty_masses(self, params):
        assert total_masses(ParticleSystem(params, 0.5)) == (0.0, 0.0)

    def test_mass_arithmetic(self, params):
        system = ParticleSystem(
            params, 0.5, active_positions=[[0.0]] * 3, dormant_positions=[[1.0]] * 2
        )
        assert total_masses(system) == (pytest.approx(1.5), pytest.approx(1.0))

    def test_critical_mean_count_conserved(self, params, rng):
        # E[n(t)] = n(0) at eps = 1
        reps = 4000
        gen = rng.generator()
        counts = []
        for _ in range(reps):
            system = ParticleSystem(params, 1.0, active_positions=[[0.0], [0.5]])
            simulate_until(system, 1.5, gen)
            counts.append(system.n_particles)
        counts = np.asarray(counts, dtype=float)
        assert_within_sigma(counts.mean(), 2.0, counts.std(ddof=1) / math.sqrt(reps), context="E n(t)")

    def test_ensemble_mass_conservation_from_poisson_start(self, params, dirac_active, rng):
        ens = ensemble_total_masses(dirac_active, 0.25, params, [0.5, 1.0], 3000, rng)
        means, stderrs = ens.mean_total()
        for m, s in zip(means, stderrs):
            assert_within_sigma(m, dirac_active.total_mass, s, context="mass conservation")


class TestLaplaceFunctional:
    def test_zero_function_gives_exactly_one(self, params, dirac_active, rng):
        est = laplace_functional_mc(
            dirac_active, ConstantFunction(0.0, 0.0), 0.5, 0.5, 50, rng, params
        )
        assert est.estimate == 1.0 and est.stderr == 0.0

    def test_t_zero_matches_poisson_formula(self, params, dirac_active, bump, rng):
        # E exp(-<Z_0,phi>) = exp(-<mu,(1 - e^{-eps phi})/eps>)
        eps = 0.25
        est = laplace_functional_mc(dirac_active, bump, 0.0, eps, 4000, rng, params)
        phi_at_atom = bump(dirac_active.positions, dirac_active.states)[0]
        exact = math.exp(-(1.0 - math.exp(-eps * phi_at_atom)) / eps)
        assert_within_sigma(est.estimate, exact, est.stderr, context="t=0 Laplace functional")

    def test_monotone_in_phi_under_coupling(self, params, dirac_active, rng):
        # same streams: phi1 <= phi2 pointwise implies estimate(phi1) >= estimate(phi2)
        small = GaussianBump(0.5, 0.25, (0.0,), 0.5, 1)
        large = GaussianBump(1.0, 0.5, (0.0,), 0.5, 1)
        a = laplace_functional_mc(dirac_active, small, 0.8, 0.2, 500, rng, params)
        b = laplace_functional_mc(dirac_active, large, 0.8, 0.2, 500, rng, params)
        assert a.estimate >= b.estimate

    def test_branching_property_product_law(self, params, bump):
        # started from mu1 + mu2, the functional factorizes over independent starts
        mu1 = FiniteMeasure.dirac([0.0], ACTIVE, 0.6)
        mu2 = FiniteMeasure.dirac([0.4], DORMANT, 0.8)
        eps, t, reps = 0.25, 0.7, 6000
        joint = laplace_functional_mc(mu1 + mu2, bump, t, eps, reps, RandomSource(101), params)
        left = laplace_functional_mc(mu1, bump, t, eps, reps, RandomSource(102), params)
        right = laplace_functional_mc(mu2, bump, t, eps, reps, RandomSource(103), params)
        product = left.estimate * right.estimate
        stderr = math.sqrt(
            joint.stderr**2
            + (right.estimate * left.stderr) ** 2
            + (left.estimate * right.stderr) ** 2
        )
        assert_within_sigma(joint.estimate, product, stderr, context="branching property")

    def test_reproducible_across_worker_counts(self, params, dirac_active, bump, rng):
        serial = laplace_functional_mc(dirac_active, bump, 0.5, 0.25, 600, rng, params, workers=1)
        parallel = laplace_functional_mc(dirac_active, bump, 0.5, 0.25, 600, rng, params, workers=2)
        assert serial.estimate == parallel.estimate
        assert serial.stderr == parallel.stderr

    def test_rejects_single_replicate(self, params, dirac_active, bump, rng):
        with pytest.raises(ValueError):
            laplace_functional_mc(dirac_active, bump, 0.5, 0.25, 1, rng, params)


class TestMartingaleResidual:
    def test_constant_equal_values_reduce_to_mass_difference(self, params, rng):
        phi = ConstantFunction(2.0, 2.0, 1)
        system = ParticleSystem(params, 0.5, active_positions=[[0.0], [1.0]])
        snaps = simulate_until(
            system, 1.0, rng.generator(), observation_times=np.linspace(0, 1, 21), keep_particles=True
        )
        series = martingale_residual(snaps, phi, params)
        masses = np.array([s.total_mass for s in snaps])
        assert np.allclose(series.residual, 2.0 * (masses - masses[0]))

    def test_missing_laplacian_raises(self, params, rng):
        phi = TentFunction(1.0, 0.5, (0.0,), 1.0)
        system = ParticleSystem(params, 0.5, active_positions=[[0.0]])
        snaps = simulate_until(system, 0.5, rng.generator(), observation_times=[0.0, 0.5], keep_particles=True)
        with pytest.raises(MissingDerivative):
            martingale_residual(snaps, phi, params)

    def test_positions_required(self, params, rng, bump):
        system = ParticleSystem(params, 0.5, active_positions=[[0.0]])
        snaps = simulate_until(system, 0.5, rng.generator(), observation_times=[0.0, 0.5])
        with pytest.raises(ValueError):
            martingale_residual(snaps, bump, params)


class TestReproducibility:
    def test_identical_streams_identical_trajectories(self, params, dirac_active):
        def run():
            source = RandomSource(777, 3)
            system = ParticleSystem.from_poisson(dirac_active, 0.2, params, source.generator())
            gen = RandomSource(777, 4).generator()
            simulate_until(system, 1.0, gen)
            return system.active_positions(), system.dormant_positions(), system.time

        a_act, a_dor, a_t = run()
        b_act, b_dor, b_t = run()
        assert np.array_equal(a_act, b_act)
        assert np.array_equal(a_dor, b_dor)
        assert a_t == b_t
