from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from reduction_lab.coupling import CouplingSchedule, DomainError
from reduction_lab.exact_solver import (
    AmbiguityError,
    DegenerateStepWarning,
    StepIntegrals,
    TimeGrid,
    conditional_solution,
    energy_and_moments,
    filter_batch,
    filter_posterior,
    innovation_path,
    iter_ensemble,
    monotone_link,
    recover_random_data,
    restart_filter,
    run_exact,
    sample_batch,
    sample_path,
)
from reduction_lab.spectrum import DimensionError, Spectrum, diagonal_basis

from conftest import binomial_sigma


# -- sampling ---------------------------------------------------------------


def test_single_level_signal_is_deterministic():
    sp = Spectrum([2.5], [1.0])
    sch = CouplingSchedule.exponential_decay(1.0, 0.5)
    grid = TimeGrid.uniform(3.0, 30)
    path = sample_path(sp, sch, grid, seed=1)
    assert path.outcome_H == 2.5
    cum = sch.int_sigma(np.zeros(31), grid.times)
    np.testing.assert_array_equal(path.xi, 2.5 * cum + path.B)


def test_path_invariants_hold_by_construction(three_level):
    sch = CouplingSchedule.finite_time(1.0, 2.0)
    grid = TimeGrid.uniform(1.9, 40)
    steps = StepIntegrals.build(sch, grid)
    batch = sample_batch(three_level, sch, grid, 9, range(6))
    for i in range(6):
        p = batch.path(i)
        assert p.xi[0] == p.B[0] == p.eta[0] == 0.0
        np.testing.assert_array_equal(p.xi, p.outcome_H * steps.cum_sigma + p.B)
        np.testing.assert_array_equal(p.eta, p.outcome_H * steps.cum_sigma_sq + p.stoch_int_sigma_dB)


def test_outcome_frequencies_follow_priors(desk):
    n = 100_000
    batch = sample_batch(desk, CouplingSchedule.constant(1.0), TimeGrid.uniform(1.0, 1), 2024, range(n))
    freq = np.bincount(batch.outcome_index, minlength=2) / n
    for f, p in zip(freq, desk.priors):
        assert abs(f - p) < 3 * binomial_sigma(p, n)


def test_wiener_ito_isometry(desk):
    # second moment of int sigma dB against int sigma^2 for a non-constant sigma
    sch = CouplingSchedule.exponential_decay(2.0, 0.7)
    grid = TimeGrid.uniform(2.0, 20)
    n = 20_000
    batch = sample_batch(desk, sch, grid, 77, range(n))
    for j in (5, 12, 20):
        second = np.mean(batch.stoch_int_sigma_dB[:, j] ** 2)
        target = sch.int_sigma_sq(0.0, grid.times[j])
        assert abs(second / target - 1) < 3 / np.sqrt(n)


def test_joint_increment_covariance(desk):
    # (dB, d int sigma dB) per step has covariance [[dt, S1], [S1, S2]]
    sch = CouplingSchedule.finite_time(1.0, 1.0)
    grid = TimeGrid.uniform(0.8, 4)
    n = 40_000
    batch = sample_batch(desk, sch, grid, 5, range(n))
    db = np.diff(batch.B, axis=1)[:, 3]
    ds = np.diff(batch.stoch_int_sigma_dB, axis=1)[:, 3]
    a, b = grid.times[3], grid.times[4]
    cov = np.cov(db, ds)
    target = np.array([[b - a, sch.int_sigma(a, b)], [sch.int_sigma(a, b), sch.int_sigma_sq(a, b)]])
    # standard error of a sample covariance entry ~ sqrt((s_ii s_jj + s_ij^2) / n)
    se = np.sqrt((np.outer(np.diag(target), np.diag(target)) + target**2) / n)
    assert np.all(np.abs(cov - target) < 4 * se)


def test_degenerate_step_falls_back_with_warning(desk):
    class Inconsistent:
        is_finite_time = False
        horizon = np.inf

        def int_sigma(self, a, b):
            return np.asarray(b) - np.asarray(a)

        def int_sigma_sq(self, a, b):
            # Cauchy-Schwarz violated on purpose
            return 0.5 * (np.asarray(b) - np.asarray(a))

        def sigma(self, t):
            return np.ones_like(np.asarray(t, dtype=float))

    with pytest.warns(DegenerateStepWarning):
        steps = StepIntegrals.build(Inconsistent(), TimeGrid.uniform(1.0, 4))
    assert steps.degenerate_steps == (0, 1, 2, 3)
    np.testing.assert_array_equal(steps.residual_sd, 0.0)


def test_constant_sigma_is_not_degenerate(desk):
    steps = StepIntegrals.build(CouplingSchedule.constant(3.0), TimeGrid.uniform(1.0, 4))
    assert steps.degenerate_steps == ()
    np.testing.assert_allclose(steps.regression, 3.0)


def test_grid_must_stay_before_horizon(desk):
    with pytest.raises(DomainError):
        StepIntegrals.build(CouplingSchedule.finite_time(1.0, 1.0), TimeGrid.uniform(1.0, 10))
    with pytest.raises(DomainError):
        TimeGrid([0.0, 0.5, 0.5])
    with pytest.raises(DomainError):
        TimeGrid([0.1, 0.5])


def test_seeded_path_is_path_zero_and_reproducible(desk, unit_coupling):
    grid = TimeGrid.uniform(4.0, 40)
    a = sample_path(desk, unit_coupling, grid, 31)
    b = sample_path(desk, unit_coupling, grid, 31)
    batch = sample_batch(desk, unit_coupling, grid, 31, range(3))
    np.testing.assert_array_equal(a.xi, b.xi)
    np.testing.assert_array_equal(a.xi, batch.xi[0])
    # per-path seeding: path 2 does not depend on which other paths are drawn
    alone = sample_batch(desk, unit_coupling, grid, 31, [2])
    np.testing.assert_array_equal(alone.eta[0], batch.eta[2])


def test_ensemble_chunks_do_not_change_paths(desk, unit_coupling):
    grid = TimeGrid.uniform(2.0, 10)
    a = np.concatenate([b.xi for b, _ in iter_ensemble(desk, unit_coupling, grid, 5, 10, chunk=3)])
    b = np.concatenate([b.xi for b, _ in iter_ensemble(desk, unit_coupling, grid, 5, 10, chunk=10)])
    np.testing.assert_array_equal(a, b)


# -- filter -----------------------------------------------------------------


def test_filter_posterior_examples():
    sp = Spectrum([0.0, 1.0], [0.5, 0.5])
    sch = CouplingSchedule.constant(1.0)
    np.testing.assert_array_equal(filter_posterior(sp, sch, 0.0, 0.0), [0.5, 0.5])
    np.testing.assert_allclose(filter_posterior(sp, sch, 0.5, 1.0), [0.5, 0.5], atol=1e-15)
    # e / (1 + e), evaluated independently with mpmath
    assert filter_posterior(sp, sch, 1.5, 1.0)[1] == pytest.approx(0.7310585786300049, abs=1e-15)
    with pytest.raises(ValueError):
        filter_posterior(sp, sch, np.nan, 1.0)


def test_filter_posterior_matches_path_density_oracle():
    # synthetic record with eta = 1.5 at t = 1 under sigma = 1: xi_t = 1.5 t
    from reduction_lab.filter_oracles import DiscretizedPath, bayes_path_posterior

    sp = Spectrum([0.0, 1.0], [0.5, 0.5])
    sch = CouplingSchedule.constant(1.0)
    path = DiscretizedPath(1.0, 1.5 * np.linspace(0, 1, 101))
    np.testing.assert_allclose(bayes_path_posterior(sp, sch, path), filter_posterior(sp, sch, 1.5, 1.0), atol=1e-14)


def test_log_domain_survives_huge_exponents():
    sp = Spectrum([0.0, 1.0, 2.0], [0.2, 0.3, 0.5])
    post = filter_posterior(sp, CouplingSchedule.finite_time(1.0, 1.0), 1.0e9, 1 - 1e-9)
    assert np.all(np.isfinite(post)) and abs(post.sum() - 1) < 1e-12


def test_energy_and_moments_examples():
    two = Spectrum([0.0, 1.0], [0.5, 0.5])
    assert energy_and_moments(two, [1.0, 0.0]) == (0.0, 0.0, 0.0)
    assert energy_and_moments(two, [0.5, 0.5]) == pytest.approx((0.5, 0.25, 0.0), abs=1e-15)
    # brute-force sums (mpmath): E = (1, 0) listed as levels (0, 1) with swapped weights
    h, v, k = energy_and_moments(two, [0.268941, 0.731059])
    assert h == pytest.approx(0.731059, abs=1e-12)
    assert v == pytest.approx(0.196611738519, abs=1e-12)
    assert k == pytest.approx(-0.090857823380923242, abs=1e-12)


def test_restart_filter_examples(three_level):
    sch = CouplingSchedule.power_law(1.3, 1.5)
    post = filter_posterior(three_level, sch, 0.8, 2.0)
    np.testing.assert_array_equal(restart_filter(three_level, sch, post, 2.0, 0.0, 2.0), post)
    np.testing.assert_allclose(
        restart_filter(three_level, sch, three_level.priors, 0.0, 0.8, 2.0), post, atol=1e-15
    )
    with pytest.raises(DomainError):
        restart_filter(three_level, sch, post, 3.0, 0.0, 2.0)


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 10_000), st.sampled_from(["constant", "power_law", "exponential_decay", "finite_time"]))
def test_dynamic_consistency_property(seed, kind):
    sp = Spectrum([-1.0, 0.5, 2.0], [0.2, 0.5, 0.3])
    sch = {
        "constant": CouplingSchedule.constant(0.9),
        "power_law": CouplingSchedule.power_law(1.0, 1.8),
        "exponential_decay": CouplingSchedule.exponential_decay(1.5, 0.4),
        "finite_time": CouplingSchedule.finite_time(1.0, 2.0),
    }[kind]
    grid = TimeGrid.uniform(1.8, 36)
    path = sample_path(sp, sch, grid, seed)
    t, s = grid.times[-1], grid.times[18]
    full = filter_posterior(sp, sch, path.eta[-1], t)
    mid = filter_posterior(sp, sch, path.eta[18], s)
    again = restart_filter(sp, sch, mid, s, path.eta[-1] - path.eta[18], t)
    np.testing.assert_allclose(again, full, atol=1e-12)


@settings(max_examples=60, deadline=None)
@given(st.floats(-20, 20), st.floats(0.0, 30.0), st.integers(0, 2**31))
def test_monotone_link_slope_property(eta, isq, seed):
    rng = np.random.default_rng(seed)
    e = np.sort(rng.uniform(-2, 2, 4))
    if np.min(np.diff(e)) < 1e-3:
        return
    sp = Spectrum(e, rng.dirichlet(np.ones(4)))
    h = 1e-5 / sp.spectral_range
    hp, _ = monotone_link(sp, eta + h, isq)
    hm, _ = monotone_link(sp, eta - h, isq)
    _, slope = monotone_link(sp, eta, isq)
    fd = (hp - hm) / (2 * h)
    # the difference quotient carries roundoff of order eps * max|E| / h,
    # which dominates once the posterior is nearly collapsed
    roundoff = 8 * np.finfo(float).eps * np.max(np.abs(e)) / h
    assert slope > 0
    assert abs(fd - slope) <= 1e-6 * slope + roundoff


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000))
def test_posterior_normalisation_property(seed):
    sp = Spectrum([-1.0, 0.0, 0.5, 3.0], [0.1, 0.2, 0.3, 0.4])
    grid = TimeGrid.uniform(20.0, 50)
    batch = sample_batch(sp, CouplingSchedule.power_law(1.0, 1.5), grid, seed, range(4))
    traj = filter_batch(sp, batch)
    assert np.max(np.abs(traj.posteriors.sum(axis=-1) - 1)) <= 1e-12
    assert np.all((traj.posteriors >= 0) & (traj.posteriors <= 1))
    assert np.all(traj.variance >= 0)
    np.testing.assert_allclose(traj.variance, traj.posteriors @ sp.energies**2 - traj.energy**2, atol=1e-10)


# -- innovation -------------------------------------------------------------


def test_innovation_single_level_is_brownian_path():
    sp = Spectrum([1.7], [1.0])
    sch = CouplingSchedule.exponential_decay(2.0, 0.3)
    grid = TimeGrid.uniform(4.0, 80)
    path = sample_path(sp, sch, grid, 3)
    w = innovation_path(path, np.full(81, 1.7), sch)
    assert w[0] == 0.0
    np.testing.assert_allclose(w, path.B, atol=1e-12)
    with pytest.raises(DimensionError):
        innovation_path(path, np.zeros(5), sch)


def test_innovation_increments_are_brownian(desk, unit_coupling):
    grid = TimeGrid.uniform(4.0, 400)
    n = 4000
    traj = filter_batch(desk, sample_batch(desk, unit_coupling, grid, 8, range(n)))
    dw = np.diff(traj.innovation, axis=1)
    dt = grid.dt[0]
    for j in (0, 50, 200, 399):
        x = dw[:, j]
        assert abs(x.mean()) < 3 * np.sqrt(dt / n)
        assert abs(x.var(ddof=1) - dt) < 3 * dt * np.sqrt(2 / (n - 1))
    for j in (10, 100, 300):
        r = np.corrcoef(dw[:, j], dw[:, j + 1])[0, 1]
        assert abs(r) < 3 / np.sqrt(n)


# -- trajectories -----------------------------------------------------------


def test_run_exact_initial_values_and_determinism(desk, desk_basis, unit_coupling):
    grid = TimeGrid.uniform(3.0, 30)
    p1, t1 = run_exact(desk, desk_basis, unit_coupling, grid, 42, with_states=True)
    p2, t2 = run_exact(desk, desk_basis, unit_coupling, grid, 42, with_states=True)
    np.testing.assert_array_equal(t1.posteriors[0], desk.priors)
    assert t1.energy[0] == pytest.approx(desk.mean_energy, abs=1e-15)
    assert t1.innovation[0] == 0.0
    for a, b in [(p1.xi, p2.xi), (t1.posteriors, t2.posteriors), (t1.states, t2.states)]:
        np.testing.assert_array_equal(a, b)
    np.testing.assert_allclose(desk_basis.overlaps(t1.states), t1.posteriors, atol=1e-12)


def test_long_horizon_collapse(desk, unit_coupling):
    # I * gap^2 = 50 > 40; the tail formula gives P(max pi < 0.999) well below 1%
    grid = TimeGrid.uniform(50.0, 50)
    traj = filter_batch(desk, sample_batch(desk, unit_coupling, grid, 12, range(1000)))
    assert np.mean(traj.posteriors[:, -1].max(axis=1) > 0.999) >= 0.99


def test_conditional_solution_matches_run_exact(three_level):
    basis = diagonal_basis(3)
    sch = CouplingSchedule.exponential_decay(1.5, 0.2)
    grid = TimeGrid.uniform(6.0, 60)
    for seed in range(5):
        path, traj = run_exact(three_level, basis, sch, grid, seed)
        cond = conditional_solution(
            three_level, basis, sch, grid, path.outcome_index, path.B, path.stoch_int_sigma_dB
        )
        assert np.max(np.abs(cond.posteriors - traj.posteriors)) < 1e-12
        assert np.max(np.abs(cond.innovation - traj.innovation)) < 1e-12
    with pytest.raises(IndexError):
        conditional_solution(three_level, basis, sch, grid, 3, path.B)


def test_conditional_weight_of_realised_level_is_prior(three_level):
    # omega_kk = 0: the k-th unnormalised weight stays pi_k, so pi_k,t / pi_i,t
    # for i != k carries the whole time dependence
    grid = TimeGrid.uniform(2.0, 20)
    sch = CouplingSchedule.constant(1.0)
    b = np.concatenate([[0.0], np.cumsum(np.random.default_rng(0).standard_normal(20) * np.sqrt(0.1))])
    post = conditional_solution(three_level, diagonal_basis(3), sch, grid, 1, b).posteriors
    unnorm = post / post[:, [1]] * three_level.priors[1]
    np.testing.assert_allclose(unnorm[:, 1], three_level.priors[1], rtol=1e-15)


def test_conditional_solution_collapses_to_fixed_level(desk):
    # I = 100 / gap^2: the tail formula bounds P(pi_k < 0.99) far below 5%
    grid = TimeGrid.uniform(100.0, 100)
    sch = CouplingSchedule.constant(1.0)
    rng = np.random.default_rng(17)
    hits = 0
    for _ in range(200):
        b = np.concatenate([[0.0], np.cumsum(rng.standard_normal(100))])
        post = conditional_solution(desk, diagonal_basis(2), sch, grid, 0, b).posteriors
        hits += post[-1, 0] > 0.99
    assert hits / 200 >= 0.95


def test_recover_random_data_round_trip(three_level):
    basis = diagonal_basis(3)
    sch = CouplingSchedule.constant(1.0)
    grid = TimeGrid.uniform(150.0, 150)
    n_ok = 0
    for seed in range(30):
        path, traj = run_exact(three_level, basis, sch, grid, seed)
        if traj.posteriors[-1].max() <= 0.9999:
            continue
        n_ok += 1
        h_hat, b_hat = recover_random_data(three_level, traj, path.xi, sch)
        assert h_hat == path.outcome_H
        bound = abs(path.outcome_H) * sch.int_sigma(0.0, grid.times[-1]) * 1e-4
        assert np.max(np.abs(b_hat - path.B)) <= bound + 1e-12 * (1 + np.max(np.abs(path.xi)))
    assert n_ok >= 25


def test_recover_single_level_and_ambiguity(desk, desk_basis, unit_coupling):
    sp = Spectrum([0.4], [1.0])
    grid = TimeGrid.uniform(1.0, 10)
    path, traj = run_exact(sp, diagonal_basis(1), unit_coupling, grid, 0)
    h, b = recover_random_data(sp, traj, path.xi, unit_coupling)
    assert h == 0.4
    np.testing.assert_array_equal(b, path.xi - 0.4 * grid.times)
    path, traj = run_exact(desk, desk_basis, unit_coupling, TimeGrid.uniform(0.01, 1), 0)
    with pytest.raises(AmbiguityError) as err:
        recover_random_data(desk, traj, path.xi, unit_coupling)
    np.testing.assert_array_equal(err.value.posteriors, traj.posteriors[-1])
