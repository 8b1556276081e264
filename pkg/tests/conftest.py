import numpy as np
import pytest

from ehcs.config import bundled_config, load_problem
from ehcs.harvest import build_ergodic
from ehcs.model import ChannelModel, DisturbanceModel, EhcsSpec, PlantModel, validate_ehcs

TWO_STATE = [[0.01, 0.99], [0.99, 0.01]]


def scalar_ehcs(a_c, a_o, transition, h, lam=1.0, e_bar=1, b_cap=0, half_width=0.0):
    dist = DisturbanceModel.uniform(half_width) if half_width else DisturbanceModel.none()
    spec = EhcsSpec(PlantModel(a_c, a_o), ChannelModel(lam, e_bar),
                    build_ergodic(transition, h), b_cap, dist)
    return validate_ehcs(spec)


def random_stochastic(rng, n, zero_frac=0.4):
    m = rng.random((n, n)) * (rng.random((n, n)) > zero_frac)
    for j in range(n):
        if m[:, j].sum() == 0:
            m[rng.integers(n), j] = 1.0
    return m / m.sum(axis=0)


def random_ehcs(rng, dim=None, max_latent=4, max_battery=3, max_h=2):
    """Small random instance; plant scaled so spectral radii straddle 1."""
    n = int(rng.choice([1, 2])) if dim is None else dim
    nl = int(rng.integers(1, max_latent + 1))
    t = random_stochastic(rng, nl)
    h = rng.integers(0, max_h + 1, size=nl)
    e_bar = int(rng.integers(1, 3))
    b_cap = int(rng.integers(0, max_battery + 1))
    lam = float(rng.uniform(0.5, 1.0))
    a_c = rng.normal(size=(n, n))
    a_c *= rng.uniform(0.2, 0.9) / max(np.max(np.abs(np.linalg.eigvals(a_c))), 1e-9)
    a_o = rng.normal(size=(n, n))
    a_o *= rng.uniform(0.9, 1.4) / max(np.max(np.abs(np.linalg.eigvals(a_o))), 1e-9)
    spec = EhcsSpec(PlantModel(a_c, a_o), ChannelModel(lam, e_bar), build_ergodic(t, h),
                    b_cap, DisturbanceModel.none(n))
    return validate_ehcs(spec)


@pytest.fixture(scope="session")
def sec5():
    return load_problem(bundled_config("sec5"))


@pytest.fixture(scope="session")
def sec6a():
    return load_problem(bundled_config("sec6a"))


@pytest.fixture(scope="session")
def sec6b():
    return load_problem(bundled_config("sec6b"))


@pytest.fixture(scope="session")
def sec6c():
    return load_problem(bundled_config("sec6c"))


def mode_transitions(ehcs, policy, runs, horizon, seed):
    """``(source, target)`` mode index pairs from ``runs`` simulated paths.

    Paths start from random battery and latent states so that rarely
    visited modes still get counts; ``runs * (horizon - 1)`` transitions in total.
    """
    from ehcs.embedding import mode_index
    from ehcs.sim import _run_batch, draw_sample_path

    rng = np.random.default_rng(seed)
    b0 = rng.integers(0, ehcs.b_cap + 1, runs)
    l0 = rng.integers(0, ehcs.n_latent, runs)
    paths = [draw_sample_path(seed, r, horizon, ehcs.source, ehcs.lam, l0[r]) for r in range(runs)]
    latent = np.stack([p.latent for p in paths], axis=1)
    pol_u = np.stack([p.policy_draws for p in paths], axis=1)
    chan = np.stack([p.channel_draws for p in paths], axis=1)
    _, b, f, g, _, _, _ = _run_batch(ehcs, policy, np.zeros((runs, ehcs.dim)), latent, pol_u,
                                     chan, None, b0, 0)
    modes = mode_index(b[:-1], latent[:-1], g.astype(np.int64), f[:-1], ehcs.n_latent)
    return modes[:-1].reshape(-1), modes[1:].reshape(-1)


def frequency_violations(psi, src, dst, z=3.0):
    """Entries of ``psi`` whose empirical frequency is off by more than ``z`` SE.

    Counts out of a mode with ``c`` visits are binomial under the chain's law.
    The standard error uses the model probability; when the normal
    approximation is poor (fewer than 5 expected hits or misses) the exact
    binomial two-sided test at the same level replaces it.

    Returns ``(structural, exceed, n_tests)``: transitions that ``psi``
    forbids or makes certain but were contradicted, entries beyond ``z`` SE,
    and how many entries were tested.
    """
    from scipy import stats

    psi = psi.toarray() if hasattr(psi, "toarray") else np.asarray(psi)
    n = psi.shape[0]
    counts = np.zeros((n, n))
    np.add.at(counts, (dst, src), 1.0)
    visits = counts.sum(axis=0)
    level = 2 * stats.norm.sf(z)
    structural, bad, n_tests = [], [], 0
    for i in np.flatnonzero(visits):
        c = visits[i]
        for j in np.flatnonzero((psi[:, i] > 0) | (counts[:, i] > 0)):
            p, k = psi[j, i], counts[j, i]
            if p == 0.0:
                if k > 0:
                    structural.append((j, i, p, k, c))
                continue
            if p == 1.0:
                if k != c:
                    structural.append((j, i, p, k, c))
                continue
            n_tests += 1
            if min(c * p, c * (1 - p)) >= 5:
                if abs(k - c * p) > z * np.sqrt(c * p * (1 - p)):
                    bad.append((j, i, p, k, c))
            elif stats.binomtest(int(k), int(c), p).pvalue < level:
                bad.append((j, i, p, k, c))
    return structural, bad, n_tests


def exceedances_plausible(n_exceed, n_tests, z=3.0, quantile=0.999):
    """Whether ``n_exceed`` per-entry ``z``-SE exceedances are consistent with sampling noise.

    Each entry independently exceeds ``z`` SE with probability
    ``2 * sf(z)`` (0.27% at 3 SE); across thousands of entries a few
    exceedances are expected even when ``psi`` is exact.
    """
    from scipy import stats

    level = 2 * stats.norm.sf(z)
    return n_exceed <= stats.binom.ppf(quantile, n_tests, level)
