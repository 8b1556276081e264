"""Common-random-number Monte Carlo simulation of an EHCS.

Each run owns independent streams derived from ``(master_seed, run_index,
tag)``: latent source path, policy uniforms, channel bits and disturbance.
Channel bits are indexed by *attempt number*, so two policies run on the same
sample path see the same outcome on their k-th attempt whenever it happens.
Policies only change how the path is read, never the path itself.
"""

from __future__ import annotations

import csv
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np

from .harvest import HarvestSource, latent_path_from_uniforms
from .model import ValidatedEhcs
from .policy import TransmissionPolicy, validate_policy

LATENT, POLICY, CHANNEL, DISTURBANCE = range(4)
QUANTILES = (0.01, 0.10, 0.90, 0.99)


def stream(master_seed: int, run_index: int, tag: int) -> np.random.Generator:
    ss = np.random.SeedSequence(entropy=int(master_seed), spawn_key=(int(run_index), int(tag)))
    return np.random.Generator(np.random.PCG64(ss))


@dataclass(frozen=True, eq=False)
class SamplePath:
    """One element of the policy-independent sample space.

    ``latent`` has ``horizon + 1`` entries, ``policy_draws`` has ``horizon``
    uniforms and ``channel_draws[k]`` is the outcome of the k-th attempt.
    """

    latent: np.ndarray
    policy_draws: np.ndarray
    channel_draws: np.ndarray
    master_seed: int
    run_index: int

    @property
    def horizon(self) -> int:
        return int(self.policy_draws.shape[0])


def draw_sample_path(master_seed: int, run_index: int, horizon: int,
                     source: HarvestSource, lam: float, initial_latent: int = 0) -> SamplePath:
    if horizon < 1:
        raise ValueError("horizon must be >= 1")
    lat_u = stream(master_seed, run_index, LATENT).random(horizon)
    pol_u = stream(master_seed, run_index, POLICY).random(horizon)
    chan = (stream(master_seed, run_index, CHANNEL).random(horizon) < lam).astype(np.int8)
    latent = latent_path_from_uniforms(source, lat_u, initial_latent)
    return SamplePath(latent, pol_u, chan, int(master_seed), int(run_index))


@dataclass(frozen=True, eq=False)
class Trajectory:
    """States ``x`` and sensor variables for ``t = 0..T``; actions for ``t < T``.

    ``attempts[t]`` and ``successes[t]`` count events in slots ``0..t``.
    """

    x: np.ndarray
    battery: np.ndarray
    latent: np.ndarray
    history: np.ndarray
    gamma: np.ndarray
    energy: np.ndarray
    attempts: np.ndarray
    successes: np.ndarray

    @property
    def sq_norm(self) -> np.ndarray:
        return np.sum(self.x**2, axis=-1)


def _action_tables(policy: TransmissionPolicy):
    cum = np.cumsum(policy.table, axis=-1)
    nz = policy.table > 0
    last = policy.table.shape[-1] - 1 - np.argmax(nz[..., ::-1], axis=-1)
    return cum, last


def _run_batch(ehcs: ValidatedEhcs, policy: TransmissionPolicy, x0, latent, pol_u, chan,
               noise, battery0=0, history0=0):
    """Vectorized dynamics over runs (last axis of the draw arrays)."""
    horizon, runs = pol_u.shape
    n = ehcs.dim
    ac, ao = ehcs.plant.a_closed, ehcs.plant.a_open
    h, cap, e_bar = ehcs.h, ehcs.b_cap, ehcs.e_bar
    cum, last = _action_tables(policy)
    n_act = policy.table.shape[-1]
    cols = np.arange(runs)

    x = np.empty((horizon + 1, runs, n))
    x[0] = x0
    b = np.empty((horizon + 1, runs), dtype=np.int64)
    f = np.empty((horizon + 1, runs), dtype=np.int64)
    b[0], f[0] = battery0, history0
    gamma = np.empty((horizon, runs), dtype=np.int8)
    eps = np.empty((horizon, runs), dtype=np.int64)
    n_att = np.empty((horizon, runs), dtype=np.int64)
    n_suc = np.empty((horizon, runs), dtype=np.int64)
    att_so_far = np.zeros(runs, dtype=np.int64)
    suc_so_far = np.zeros(runs, dtype=np.int64)
    for t in range(horizon):
        lt = latent[t]
        c = cum[b[t], lt, f[t]]                        # (runs, n_act)
        e = np.sum(pol_u[t][:, None] >= c, axis=1)
        e = np.where(e >= n_act, last[b[t], lt, f[t]], e)
        avail = b[t] + h[lt]
        if np.any(e > avail):
            raise AssertionError("energy causality violated by policy draw")
        att = e >= e_bar
        bit = chan[np.minimum(att_so_far, chan.shape[0] - 1), cols]
        g = att & (bit == 1)
        att_so_far += att
        suc_so_far += g
        gamma[t], eps[t], n_att[t], n_suc[t] = g, e, att_so_far, suc_so_far
        nxt = np.where(g[:, None], x[t] @ ac.T, x[t] @ ao.T)
        if noise is not None:
            nxt += noise[t]
        x[t + 1] = nxt
        b[t + 1] = np.clip(avail - e, 0, cap)
        f[t + 1] = att
    return x, b, f, gamma, eps, n_att, n_suc


def simulate(ehcs: ValidatedEhcs, policy: TransmissionPolicy, x0, path: SamplePath,
             battery0: int = 0, history0: int = 0, disturbance: bool = True) -> Trajectory:
    """Run one sample path; ``disturbance=False`` gives the undisturbed process ``z``.

    ``x0`` is a vector, or a callable ``rng -> vector`` drawn from the run's
    disturbance stream.
    """
    bad = validate_policy(policy, ehcs)
    if bad:
        raise ValueError(f"invalid policy: {bad[:5]}")
    T = path.horizon
    rng = stream(path.master_seed, path.run_index, DISTURBANCE)
    x0 = np.atleast_1d(np.asarray(x0(rng) if callable(x0) else x0, dtype=float))
    noise = None
    if disturbance and ehcs.spec.disturbance.kind != "none":
        noise = ehcs.spec.disturbance.sample(rng, T)[:, None, :]
    x, b, f, g, e, na, ns = _run_batch(
        ehcs, policy, x0[None, :], path.latent[:, None], path.policy_draws[:, None],
        path.channel_draws[:, None], noise, battery0, history0)
    return Trajectory(x[:, 0], b[:, 0], path.latent.copy(), f[:, 0], g[:, 0], e[:, 0],
                      na[:, 0], ns[:, 0])


@dataclass(frozen=True, eq=False)
class TrajectoryEnsemble:
    """Per-time statistics of ``||x(t)||^2`` (and ``||x(t)||``) over runs.

    The 80% band is ``[q10, q90]`` and the 98% band ``[q01, q99]``.
    """

    runs: int
    horizon: int
    mean_sq_norm: np.ndarray
    sem_sq_norm: np.ndarray
    mean_norm: np.ndarray
    sem_norm: np.ndarray
    quantiles: np.ndarray          # (4, T+1) for QUANTILES
    terminal_sq_norm: np.ndarray
    attempts: np.ndarray
    successes: np.ndarray

    @property
    def q01(self):
        return self.quantiles[0]

    @property
    def q10(self):
        return self.quantiles[1]

    @property
    def q90(self):
        return self.quantiles[2]

    @property
    def q99(self):
        return self.quantiles[3]


def _chunk(args):
    ehcs, policy, x0, lo, hi, horizon, master_seed, battery0, latent0, history0 = args
    runs = hi - lo
    lat_u = np.empty((horizon, runs))
    pol_u = np.empty((horizon, runs))
    chan = np.empty((horizon, runs), dtype=np.int8)
    x_init = np.empty((runs, ehcs.dim))
    dist = ehcs.spec.disturbance
    noise = None if dist.kind == "none" else np.empty((horizon, runs, ehcs.dim))
    for j, r in enumerate(range(lo, hi)):
        lat_u[:, j] = stream(master_seed, r, LATENT).random(horizon)
        pol_u[:, j] = stream(master_seed, r, POLICY).random(horizon)
        chan[:, j] = stream(master_seed, r, CHANNEL).random(horizon) < ehcs.lam
        rng = stream(master_seed, r, DISTURBANCE)
        x_init[j] = x0(rng) if callable(x0) else x0
        if noise is not None:
            noise[:, j] = dist.sample(rng, horizon)
    latent = latent_path_from_uniforms(ehcs.source, lat_u, latent0)
    x, b, f, g, e, na, ns = _run_batch(ehcs, policy, x_init, latent, pol_u, chan, noise,
                                       battery0, history0)
    sq = np.sum(x**2, axis=-1)                         # (T+1, runs)
    return sq, na[-1], ns[-1]


def monte_carlo(ehcs: ValidatedEhcs, policy: TransmissionPolicy, x0, runs: int, horizon: int,
                master_seed: int, battery0: int = 0, latent0: int = 0, history0: int = 0,
                chunk_size: int = 2000, workers: int = 1) -> TrajectoryEnsemble:
    """Aggregate ``runs`` independent sample paths.

    Results depend only on ``(master_seed, runs)``, never on ``chunk_size``
    or ``workers``.
    """
    if runs < 1:
        raise ValueError("runs must be >= 1")
    bad = validate_policy(policy, ehcs)
    if bad:
        raise ValueError(f"invalid policy: {bad[:5]}")
    if not callable(x0):
        x0 = np.atleast_1d(np.asarray(x0, dtype=float))
    jobs = [(ehcs, policy, x0, lo, min(lo + chunk_size, runs), horizon, master_seed,
             battery0, latent0, history0) for lo in range(0, runs, chunk_size)]
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(workers) as pool:
            parts = list(pool.map(_chunk, jobs))
    else:
        parts = [_chunk(j) for j in jobs]
    sq = np.concatenate([p[0] for p in parts], axis=1)
    att = np.concatenate([p[1] for p in parts])
    suc = np.concatenate([p[2] for p in parts])
    norm = np.sqrt(sq)
    denom = np.sqrt(runs) if runs > 1 else np.inf
    return TrajectoryEnsemble(
        runs=runs,
        horizon=horizon,
        mean_sq_norm=sq.mean(axis=1),
        sem_sq_norm=sq.std(axis=1, ddof=1) / denom if runs > 1 else np.zeros(horizon + 1),
        mean_norm=norm.mean(axis=1),
        sem_norm=norm.std(axis=1, ddof=1) / denom if runs > 1 else np.zeros(horizon + 1),
        quantiles=np.quantile(sq, QUANTILES, axis=1),
        terminal_sq_norm=sq[-1].copy(),
        attempts=att,
        successes=suc,
    )


def write_ensemble_csv(ens: TrajectoryEnsemble, path) -> None:
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["t", "mean_sq_norm", "q01", "q10", "q90", "q99", "mean_norm"])
        for t in range(ens.horizon + 1):
            wr.writerow([t, repr(float(ens.mean_sq_norm[t]))]
                        + [repr(float(v)) for v in ens.quantiles[:, t]]
                        + [repr(float(ens.mean_norm[t]))])


def write_runs_csv(ens: TrajectoryEnsemble, path) -> None:
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["run_index", "terminal_sq_norm", "attempts", "successes"])
        for i in range(ens.runs):
            wr.writerow([i, repr(float(ens.terminal_sq_norm[i])), int(ens.attempts[i]),
                         int(ens.successes[i])])
