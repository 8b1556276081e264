"""Markov jump linear system embedding of an EHCS under a fixed policy.

The mode ``S(t) = (B(t), L(t), gamma(t), F(t))`` is a Markov chain; the plant
evolves as ``x(t+1) = A_{S(t)} x(t) + w(t)`` with ``A_s = A_c`` when
``gamma(s) = 1`` and ``A_o`` otherwise.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
import scipy.sparse as sp

from .model import PlantModel, ValidatedEhcs
from .policy import TransmissionPolicy, validate_policy


class ModeState(NamedTuple):
    battery: int
    latent: int
    loop_closed: int
    history: int


def mode_index(b, l, gamma, f, n_latent):
    return ((b * n_latent + l) * 2 + gamma) * 2 + f


def enumerate_mode_states(ehcs: ValidatedEhcs) -> list[ModeState]:
    """All modes in lexicographic ``(b, l, gamma, f)`` order (``l`` is 0-based)."""
    return [
        ModeState(b, l, g, f)
        for b in range(ehcs.b_cap + 1)
        for l in range(ehcs.n_latent)
        for g in (0, 1)
        for f in (0, 1)
    ]


@dataclass(frozen=True, eq=False)
class ModeChain:
    """Mode process of the embedded MJLS.

    ``psi`` is column stochastic: ``psi[j, i] = Pr(S(t+1) = j | S(t) = i)``.
    ``closed[i]`` is true for modes with ``gamma = 1``.
    """

    states: tuple
    psi: sp.csr_matrix
    closed: np.ndarray
    n_latent: int
    b_cap: int

    @property
    def size(self) -> int:
        return len(self.states)

    def psi_dense(self) -> np.ndarray:
        return self.psi.toarray()

    def mode_matrices(self, plant: PlantModel) -> np.ndarray:
        """``(N, n, n)`` stack of ``A_s``."""
        return np.where(self.closed[:, None, None], plant.a_closed, plant.a_open)

    def index(self, b, l, gamma, f) -> int:
        return mode_index(b, l, gamma, f, self.n_latent)


def _action_law(u: np.ndarray, gamma: int, lam: float, e_bar: int) -> np.ndarray:
    """Law of the action taken in a mode, given that mode's loop indicator.

    Knowing ``gamma`` tells us about the action drawn in that slot: a closed
    loop means an attempt was made. For deterministic policies this is just
    ``u``. Modes whose ``gamma`` has zero probability keep ``u`` so the
    column stays stochastic.
    """
    attempt = np.arange(u.size) >= e_bar
    w = u * (lam * attempt) if gamma else u * (1.0 - lam * attempt)
    mass = w.sum()
    return w / mass if mass > 0 else u


def build_mode_chain(ehcs: ValidatedEhcs, policy: TransmissionPolicy) -> ModeChain:
    """Assemble the column-stochastic mode transition matrix.

    From mode ``s = (b, l, gamma, f)`` every action ``e`` of positive
    probability leads to ``b' = clip(b + h(l) - e, 0, B_cap)`` and
    ``f' = [e >= e_bar]``; the latent state moves by ``L`` and the next loop
    indicator is drawn from the policy at ``(b', l', f')`` through the channel.
    """
    bad = validate_policy(policy, ehcs)
    if bad:
        raise ValueError(f"policy does not match EHCS: {bad[:5]}")
    nl, cap, e_bar, lam = ehcs.n_latent, ehcs.b_cap, ehcs.e_bar, ehcs.lam
    lt, h, table = ehcs.source.transition, ehcs.h, policy.table
    states = enumerate_mode_states(ehcs)
    n = len(states)

    attempt = policy.attempt_prob(e_bar)                     # (B+1, L, 2)
    q = np.stack([(1 - lam) * attempt + (1 - attempt), lam * attempt], axis=-1)

    rows, cols, vals = [], [], []
    for i, (b, l, g, f) in enumerate(states):
        law = _action_law(table[b, l, f], g, lam, e_bar)
        succ = np.flatnonzero(lt[:, l])
        for e in np.flatnonzero(law):
            b2 = min(max(b + int(h[l]) - int(e), 0), cap)
            f2 = int(e >= e_bar)
            for l2 in succ:
                for g2 in (0, 1):
                    p = law[e] * lt[l2, l] * q[b2, l2, f2, g2]
                    if p > 0:
                        rows.append(mode_index(b2, l2, g2, f2, nl))
                        cols.append(i)
                        vals.append(p)
    psi = sp.csr_matrix((vals, (rows, cols)), shape=(n, n))
    psi.sum_duplicates()
    closed = np.array([s.loop_closed == 1 for s in states])
    return ModeChain(tuple(states), psi, closed, nl, cap)


def initial_mode_distribution(chain: ModeChain, policy: TransmissionPolicy, lam: float,
                              e_bar: int, battery=0, latent=0, history=0,
                              gamma=None) -> np.ndarray:
    """Initial law of ``S(0)`` for a sensor starting at ``(battery, latent, history)``.

    With ``gamma=None`` the loop indicator follows the policy and channel, the
    same way the simulator draws it; pass 0 or 1 to pin it.
    """
    pi = np.zeros(chain.size)
    if gamma is None:
        a = float(policy.attempt_prob(e_bar)[battery, latent, history])
        pi[chain.index(battery, latent, 1, history)] = lam * a
        pi[chain.index(battery, latent, 0, history)] = 1.0 - lam * a
    else:
        pi[chain.index(battery, latent, int(gamma), history)] = 1.0
    return pi


def second_moment_operator(chain: ModeChain, plant: PlantModel) -> sp.csr_matrix:
    """Sparse ``(n^2 N) x (n^2 N)`` operator with block ``(j, i) = psi[j, i] (A_i kron A_i)``.

    Acting on the stack of row-major ``vec(Q_i)`` it gives
    ``Q_j+ = sum_i psi[j, i] A_i Q_i A_i^T``.
    """
    dc = sp.diags(chain.closed.astype(float))
    do = sp.diags((~chain.closed).astype(float))
    kc = np.kron(plant.a_closed, plant.a_closed)
    ko = np.kron(plant.a_open, plant.a_open)
    op = sp.kron(chain.psi @ dc, kc) + sp.kron(chain.psi @ do, ko)
    return sp.csr_matrix(op)


def apply_second_moment(chain: ModeChain, plant: PlantModel, q: np.ndarray) -> np.ndarray:
    """One step of ``Q_j+ = sum_i psi[j, i] A_i Q_i A_i^T`` on an ``(N, n, n)`` stack."""
    a = chain.mode_matrices(plant)
    moved = a @ q @ np.transpose(a, (0, 2, 1))
    n = plant.dim
    return (chain.psi @ moved.reshape(chain.size, n * n)).reshape(chain.size, n, n)


def apply_adjoint(chain: ModeChain, plant: PlantModel, r: np.ndarray) -> np.ndarray:
    """``R_i -> A_i^T (sum_j psi[j, i] R_j) A_i``, the adjoint of :func:`apply_second_moment`."""
    n = plant.dim
    mixed = (chain.psi.T @ r.reshape(chain.size, n * n)).reshape(chain.size, n, n)
    a = chain.mode_matrices(plant)
    return np.transpose(a, (0, 2, 1)) @ mixed @ a


def second_moment_trajectory(chain: ModeChain, plant: PlantModel, pi0: np.ndarray,
                             x0_moment: np.ndarray, w: np.ndarray, horizon: int) -> np.ndarray:
    """Exact ``E||x(t)||^2`` for ``t = 0..horizon``.

    ``pi0`` is the initial mode law and ``x0_moment = E[x(0) x(0)^T]``
    (independent of ``S(0)``).
    """
    q = pi0[:, None, None] * np.asarray(x0_moment)[None]
    pi = np.asarray(pi0, dtype=float)
    out = [float(np.trace(q.sum(axis=0)))]
    for _ in range(horizon):
        q = apply_second_moment(chain, plant, q)
        q += (chain.psi @ pi)[:, None, None] * w[None]
        pi = chain.psi @ pi
        out.append(float(np.trace(q.sum(axis=0))))
    return np.asarray(out)


def dump_triplets(chain: ModeChain, path) -> None:
    """Write ``psi`` as ``row,col,value`` CSV (0-based mode indices)."""
    coo = chain.psi.tocoo()
    order = np.lexsort((coo.row, coo.col))
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["row", "col", "value"])
        for k in order:
            wr.writerow([int(coo.row[k]), int(coo.col[k]), repr(float(coo.data[k]))])
