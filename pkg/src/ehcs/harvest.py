"""Energy harvesting sources as a deterministic map over a latent Markov chain.

A source is the pair ``(h, L)``: ``L`` is a column-stochastic transition
matrix with ``L[j, i] = Pr(next = j | current = i)`` and ``h`` maps each
latent state to a nonnegative integer amount of energy.

Latent states are 0-based in code. Messages and config files use the
1-based labels ``1..|L|``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property
from typing import Callable, Sequence, Union

import numpy as np

STOCHASTIC_TOL = 1e-12


@dataclass(frozen=True, eq=False)
class HarvestSource:
    """Latent chain ``transition`` plus integer ``energy_map``."""

    transition: np.ndarray
    energy_map: np.ndarray

    def __post_init__(self):
        t = np.array(self.transition, dtype=float)
        h = np.array(self.energy_map)
        if h.ndim == 1 and h.size and np.all(np.mod(h, 1) == 0):
            h = h.astype(np.int64)
        t.setflags(write=False)
        h.setflags(write=False)
        object.__setattr__(self, "transition", t)
        object.__setattr__(self, "energy_map", h)

    @property
    def n_latent(self) -> int:
        return int(self.transition.shape[0])

    @property
    def h_max(self) -> int:
        return int(np.max(self.energy_map)) if self.energy_map.size else 0

    def problems(self) -> list[str]:
        """List every violated invariant; empty when the source is well formed."""
        errs = []
        t, h = self.transition, self.energy_map
        if t.ndim != 2 or t.shape[0] != t.shape[1] or t.shape[0] == 0:
            return [f"transition must be a nonempty square matrix, got shape {t.shape}"]
        if not np.all(np.isfinite(t)):
            errs.append("transition has non-finite entries")
        if np.any(t < 0):
            errs.append("transition has negative entries")
        sums = t.sum(axis=0)
        for i, s in enumerate(sums):
            if abs(s - 1.0) > STOCHASTIC_TOL:
                errs.append(f"column {i + 1} not stochastic (sums to {s:.15g})")
        if h.shape != (t.shape[0],):
            errs.append(
                f"energy_map has {h.size} entries, transition has {t.shape[0]} states"
            )
        else:
            if not np.issubdtype(h.dtype, np.integer):
                errs.append("energy_map values must be integers")
            if np.any(h < 0):
                errs.append("energy_map has negative energy values")
        return errs

    def stationary_distribution(self) -> np.ndarray:
        """Right Perron vector of ``transition`` (assumes a unique one)."""
        w, v = np.linalg.eig(self.transition)
        i = int(np.argmin(np.abs(w - 1.0)))
        pi = np.real(v[:, i])
        return pi / pi.sum()

    def mean_energy(self) -> float:
        return float(self.stationary_distribution() @ self.energy_map)

    def next_latent(self, current, u):
        """Inverse-CDF step: next latent state(s) given uniforms ``u``.

        Works elementwise on arrays so batched and single-run simulations
        draw identical paths from identical uniforms.
        """
        cols = self._cumulative[:, current]
        nxt = np.sum(np.asarray(u) >= cols, axis=0)
        return np.minimum(nxt, self.n_latent - 1)

    @cached_property
    def _cumulative(self) -> np.ndarray:
        return np.cumsum(self.transition, axis=0)

    def sample_path(self, rng: np.random.Generator, horizon: int, start: int = 0):
        u = rng.random(horizon)
        return latent_path_from_uniforms(self, u, start)


def latent_path_from_uniforms(source: HarvestSource, u, start):
    """Latent path of length ``len(u) + 1`` (axis 0 is time).

    ``start`` may be an int or an array of starting states (one per run), in
    which case ``u`` has shape ``(horizon, runs)``.
    """
    u = np.asarray(u)
    path = np.empty((u.shape[0] + 1,) + u.shape[1:], dtype=np.int64)
    path[0] = start
    for t in range(u.shape[0]):
        path[t + 1] = source.next_latent(path[t], u[t])
    return path


def _checked(source: HarvestSource) -> HarvestSource:
    errs = source.problems()
    if errs:
        raise ValueError("; ".join(errs))
    return source


def build_deterministic_periodic(schedule: Sequence[int]) -> HarvestSource:
    """Source delivering ``schedule[l]`` units in latent state ``l``.

    The latent chain walks the ring 1 -> 2 -> ... -> rho -> 1 so the source
    repeats ``schedule`` with period ``rho = len(schedule)``.
    """
    sched = list(schedule)
    if not sched:
        raise ValueError("schedule must contain at least one slot")
    rho = len(sched)
    t = np.roll(np.eye(rho), 1, axis=0)
    return _checked(HarvestSource(t, np.asarray(sched, dtype=np.int64)))


def build_ergodic(transition, energy_map) -> HarvestSource:
    return _checked(HarvestSource(np.asarray(transition, dtype=float), np.asarray(energy_map)))


ProfileLike = Union[Sequence[float], Callable[[int], float], str]


@dataclass(frozen=True, eq=False)
class SolarSourceSpec:
    """Periodic day profile damped additively by a cloud Markov chain.

    ``ideal_profile`` gives the cloudless intensity fraction for slots
    ``1..period``; it may be a sequence, a callable of the 1-based slot, or
    the string ``"sine"`` for ``sin(2 pi tau / period)``. Values are clamped
    into ``[0, 1]``.
    """

    period: int
    max_intensity: float
    max_damping: float
    ideal_profile: ProfileLike
    cloud_chain: np.ndarray
    cloud_loss: Sequence[float]

    def profile_values(self) -> np.ndarray:
        p = self.ideal_profile
        taus = range(1, self.period + 1)
        if isinstance(p, str):
            if p != "sine":
                raise ValueError(f"unknown ideal_profile {p!r}")
            d = [math.sin(2.0 * math.pi * tau / self.period) for tau in taus]
        elif callable(p):
            d = [float(p(tau)) for tau in taus]
        else:
            d = [float(v) for v in p]
            if len(d) != self.period:
                raise ValueError(
                    f"ideal_profile has {len(d)} values, period is {self.period}"
                )
        return np.clip(np.asarray(d, dtype=float), 0.0, 1.0)

    def problems(self) -> list[str]:
        errs = []
        if self.period < 1:
            errs.append("period must be >= 1")
        if self.max_intensity < 0 or self.max_damping < 0:
            errs.append("max_intensity and max_damping must be nonnegative")
        c = np.asarray(self.cloud_chain, dtype=float)
        if c.ndim != 2 or c.shape[0] != c.shape[1]:
            return errs + ["cloud_chain must be square"]
        if np.any(c < 0) or np.any(np.abs(c.sum(axis=0) - 1.0) > STOCHASTIC_TOL):
            errs.append("cloud_chain columns must be stochastic")
        loss = np.asarray(self.cloud_loss, dtype=float)
        if loss.shape != (c.shape[0],):
            errs.append("cloud_loss needs one value per cloud state")
        elif np.any(loss < 0) or np.any(loss > 1):
            errs.append("cloud_loss values must lie in [0, 1]")
        return errs


def round_half_up(x):
    # 1e-9 absorbs float error on exact halves, e.g. 5 * sin(pi / 6) = 2.4999999999999996
    return np.floor(np.asarray(x, dtype=float) + 0.5 + 1e-9).astype(np.int64)


def solar_index(tau: int, cloud: int, n_cloud: int) -> int:
    """0-based composite index of 1-based (slot, cloud state)."""
    return (tau - 1) * n_cloud + (cloud - 1)


def solar_decode(index: int, n_cloud: int) -> tuple[int, int]:
    """Inverse of :func:`solar_index`; returns 1-based (slot, cloud state)."""
    return index // n_cloud + 1, index % n_cloud + 1


def build_periodic_stochastic(spec: SolarSourceSpec) -> HarvestSource:
    errs = spec.problems()
    if errs:
        raise ValueError("; ".join(errs))
    c = np.asarray(spec.cloud_chain, dtype=float)
    nc = c.shape[0]
    rho = spec.period
    shift = np.roll(np.eye(rho), 1, axis=0)
    # block (tau+1, tau) = C, i.e. block-cyclic with every Q_j = C
    t = np.kron(shift, c)
    d = spec.profile_values()
    loss = np.asarray(spec.cloud_loss, dtype=float)
    raw = spec.max_intensity * np.repeat(d, nc) - spec.max_damping * np.tile(loss, rho)
    h = np.maximum(round_half_up(raw), 0)
    return _checked(HarvestSource(t, h))
