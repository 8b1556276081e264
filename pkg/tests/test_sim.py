import csv

import numpy as np
import pytest

from ehcs.embedding import build_mode_chain, initial_mode_distribution, second_moment_trajectory
from ehcs.model import DisturbanceModel, PlantModel, validate_ehcs
from ehcs.policy import (TransmissionPolicy, build_dwell_policy, greedy_policy,
                         never_transmit_policy, random_policy)
from ehcs.sim import (_run_batch, draw_sample_path, monte_carlo, simulate, write_ensemble_csv,
                      write_runs_csv)

from conftest import TWO_STATE, random_ehcs, scalar_ehcs


def test_sample_path_is_reproducible():
    e = random_ehcs(np.random.default_rng(0))
    a = draw_sample_path(42, 7, 300, e.source, 0.9)
    b = draw_sample_path(42, 7, 300, e.source, 0.9)
    c = draw_sample_path(42, 8, 300, e.source, 0.9)
    for field in ("latent", "policy_draws", "channel_draws"):
        assert np.array_equal(getattr(a, field), getattr(b, field))
    assert not np.array_equal(a.policy_draws, c.policy_draws)


def test_perfect_channel():
    e = random_ehcs(np.random.default_rng(1))
    assert np.all(draw_sample_path(1, 0, 1000, e.source, 1.0).channel_draws == 1)


def test_channel_rate():
    e = random_ehcs(np.random.default_rng(2))
    bits = draw_sample_path(3, 0, 100_000, e.source, 0.98).channel_draws
    se = np.sqrt(0.98 * 0.02 / bits.size)
    assert abs(bits.mean() - 0.98) < 3 * se


def test_open_loop_geometric():
    e = scalar_ehcs(0.5, 1.1, TWO_STATE, [0, 1], lam=0.9, e_bar=1, b_cap=1)
    path = draw_sample_path(0, 0, 60, e.source, e.lam)
    tr = simulate(e, never_transmit_policy(e), [10.0], path, disturbance=False)
    x = 10.0
    for t in range(61):
        assert tr.x[t, 0] == x
        x = x * 1.1
    assert tr.x[60, 0] == pytest.approx(10 * 1.1**60, rel=1e-12)
    assert tr.attempts[-1] == 0


def test_trajectory_invariants():
    rng = np.random.default_rng(4)
    for _ in range(20):
        e = random_ehcs(rng)
        pol = random_policy(e, rng)
        path = draw_sample_path(int(rng.integers(1 << 30)), 0, 200, e.source, e.lam)
        tr = simulate(e, pol, np.ones(e.dim), path, disturbance=False)
        assert np.all((tr.battery >= 0) & (tr.battery <= e.b_cap))
        assert np.all(tr.energy <= tr.battery[:-1] + e.h[tr.latent[:-1]])
        t = np.arange(200)
        assert np.all(tr.successes <= tr.attempts) and np.all(tr.attempts <= t + 1)
        assert np.array_equal(tr.history[1:], (tr.energy >= e.e_bar).astype(int))


def test_causality_is_asserted_not_clamped():
    e = scalar_ehcs(0.5, 1.1, np.eye(1), [0], e_bar=1, b_cap=0)
    # hand the batch kernel a table that spends energy the sensor does not have
    rogue = TransmissionPolicy(np.concatenate([np.zeros((1, 1, 2, 1)), np.ones((1, 1, 2, 1))], axis=-1))
    e2 = scalar_ehcs(0.5, 1.1, np.eye(1), [0], e_bar=1, b_cap=1)
    path = draw_sample_path(0, 0, 5, e2.source, 1.0)
    with pytest.raises(ValueError):
        simulate(e2, rogue, [1.0], path)
    with pytest.raises(AssertionError):
        _run_batch(e, rogue, np.ones((1, 1)), path.latent[:, None], path.policy_draws[:, None],
                   path.channel_draws[:, None], None)


def _dominance_instances(rng, count):
    for _ in range(count):
        e = random_ehcs(rng, dim=1)
        # closed loop contracts more than open loop so fewer open steps means smaller |z|
        a_c, a_o = sorted([abs(e.plant.a_closed[0, 0]), abs(e.plant.a_open[0, 0])])
        yield e.spec.replace(plant=PlantModel(a_c, a_o + 0.01))


def test_greedy_dominates_pathwise():
    rng = np.random.default_rng(5)
    for k, spec in enumerate(_dominance_instances(rng, 10)):
        e = validate_ehcs(spec)
        g = greedy_policy(e)
        for r in range(100):
            other = random_policy(e, rng) if r % 2 else build_dwell_policy(e, 3, float(rng.random()))
            path = draw_sample_path(1000 + k, r, 120, e.source, e.lam, int(rng.integers(e.n_latent)))
            tg = simulate(e, g, [1.0], path, disturbance=False)
            tu = simulate(e, other, [1.0], path, disturbance=False)
            assert np.all(tg.attempts >= tu.attempts)
            assert np.all(tg.successes >= tu.successes)
            # battery inequality: B_u <= B_g + e_bar (N^A_g - N^A_u)
            assert np.all(tu.battery[1:] <= tg.battery[1:] + e.e_bar * (tg.attempts - tu.attempts))
            assert np.all(tg.sq_norm <= tu.sq_norm * (1 + 1e-12))


def test_channel_bits_indexed_by_attempt():
    rng = np.random.default_rng(6)
    for _ in range(20):
        e = random_ehcs(rng)
        path = draw_sample_path(int(rng.integers(1 << 30)), 0, 150, e.source, e.lam)
        for pol in (greedy_policy(e), random_policy(e, rng)):
            tr = simulate(e, pol, np.zeros(e.dim), path, disturbance=False)
            slots = np.flatnonzero(tr.energy >= e.e_bar)
            assert np.array_equal(tr.gamma[slots], path.channel_draws[: slots.size])
            assert not np.any(np.delete(tr.gamma, slots))


def test_batch_matches_single_runs(sec6b):
    e, x0 = sec6b.ehcs, sec6b.x0
    pol = random_policy(e, np.random.default_rng(7))
    ens = monte_carlo(e, pol, x0, runs=25, horizon=80, master_seed=11, chunk_size=7)
    for r in range(25):
        path = draw_sample_path(11, r, 80, e.source, e.lam)
        tr = simulate(e, pol, x0, path)
        assert tr.sq_norm[-1] == ens.terminal_sq_norm[r]
        assert tr.attempts[-1] == ens.attempts[r] and tr.successes[-1] == ens.successes[r]


def test_results_independent_of_chunking_and_workers(sec6b):
    e, x0 = sec6b.ehcs, sec6b.x0
    pol = greedy_policy(e)
    a = monte_carlo(e, pol, x0, 60, 50, 3, chunk_size=60)
    b = monte_carlo(e, pol, x0, 60, 50, 3, chunk_size=13, workers=2)
    assert np.array_equal(a.mean_sq_norm, b.mean_sq_norm)
    assert np.array_equal(a.quantiles, b.quantiles)
    assert np.array_equal(a.terminal_sq_norm, b.terminal_sq_norm)


def test_single_run_bands_collapse(sec6b):
    ens = monte_carlo(sec6b.ehcs, greedy_policy(sec6b.ehcs), sec6b.x0, 1, 40, 9)
    for q in (ens.q01, ens.q10, ens.q90, ens.q99):
        assert np.allclose(q, ens.mean_sq_norm)


def test_quantiles_ordered(sec6c):
    ens = monte_carlo(sec6c.ehcs, greedy_policy(sec6c.ehcs), sec6c.x0, 300, 100, 2)
    assert np.all(ens.q01 <= ens.q10) and np.all(ens.q10 <= ens.q90) and np.all(ens.q90 <= ens.q99)


def test_mc_matches_exact_second_moment(sec6b):
    e, x0 = sec6b.ehcs, sec6b.x0
    pol = greedy_policy(e)
    chain = build_mode_chain(e, pol)
    pi0 = initial_mode_distribution(chain, pol, e.lam, e.e_bar)
    exact = second_moment_trajectory(chain, e.plant, pi0, np.outer(x0, x0), e.w, 120)
    ens = monte_carlo(e, pol, x0, 4000, 120, master_seed=21)
    for t in (10, 40, 80, 120):
        assert abs(ens.mean_sq_norm[t] - exact[t]) < 3 * ens.sem_sq_norm[t]


def test_gaussian_disturbance_second_moment():
    e = scalar_ehcs(0.5, 0.9, TWO_STATE, [0, 1], lam=0.9, e_bar=1, b_cap=1)
    e = validate_ehcs(e.spec.replace(disturbance=DisturbanceModel.gaussian([[0.3]])))
    pol = greedy_policy(e)
    chain = build_mode_chain(e, pol)
    exact = second_moment_trajectory(chain, e.plant, initial_mode_distribution(chain, pol, e.lam, e.e_bar),
                                     np.zeros((1, 1)), e.w, 30)
    ens = monte_carlo(e, pol, [0.0], 4000, 30, master_seed=5)
    assert abs(ens.mean_sq_norm[30] - exact[30]) < 3 * ens.sem_sq_norm[30]


def test_daily_recharge_periodicity(sec6a):
    e = sec6a.ehcs.with_battery_capacity(2)
    ens = monte_carlo(e, greedy_policy(e), sec6a.x0, 2000, 24 * 10, master_seed=1)
    d = np.diff(np.log(ens.mean_sq_norm))
    d = d - d.mean()
    acf = np.array([np.dot(d[:-k], d[k:]) / np.dot(d, d) for k in range(1, 37)])
    assert int(np.argmax(acf)) + 1 == 24


def test_random_initial_state_callable(sec6b):
    e = sec6b.ehcs
    draw = lambda rng: rng.normal(size=1)  # noqa: E731
    a = monte_carlo(e, greedy_policy(e), draw, 10, 5, master_seed=4)
    b = monte_carlo(e, greedy_policy(e), draw, 10, 5, master_seed=4)
    assert np.array_equal(a.mean_sq_norm, b.mean_sq_norm)
    assert len(set(np.round(a.terminal_sq_norm, 12))) == 10


def test_csv_writers(tmp_path, sec6b):
    ens = monte_carlo(sec6b.ehcs, greedy_policy(sec6b.ehcs), sec6b.x0, 20, 10, 1)
    write_ensemble_csv(ens, tmp_path / "e.csv")
    write_runs_csv(ens, tmp_path / "r.csv")
    rows = list(csv.reader(open(tmp_path / "e.csv")))
    assert rows[0][:6] == ["t", "mean_sq_norm", "q01", "q10", "q90", "q99"]
    assert len(rows) == 12
    runs = list(csv.reader(open(tmp_path / "r.csv")))
    assert runs[0] == ["run_index", "terminal_sq_norm", "attempts", "successes"]
    assert len(runs) == 21
