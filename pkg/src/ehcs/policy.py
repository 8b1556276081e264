"""Memoryless transmission policies and the predictive dwell-time construction.

A policy is a dense table ``table[b, l, f, e] = Pr(E(t) = e | B=b, L=l, F=f)``
over battery ``b in 0..B_cap``, latent state ``l``, history flag ``f`` and
transmit energy ``e in 0..H_max + B_cap``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .model import ValidatedEhcs

PROB_TOL = 1e-12
POLICY_FORMAT = "ehcs-policy/1"


@dataclass(frozen=True, eq=False)
class TransmissionPolicy:
    table: np.ndarray
    name: str = "custom"

    def __post_init__(self):
        t = np.array(self.table, dtype=float)
        if t.ndim != 4 or t.shape[2] != 2:
            raise ValueError(f"policy table must have shape (B+1, L, 2, E), got {t.shape}")
        t.setflags(write=False)
        object.__setattr__(self, "table", t)

    @property
    def shape(self):
        return self.table.shape

    def attempt_prob(self, e_bar: int) -> np.ndarray:
        """``Pr(E >= e_bar | b, l, f)`` as a ``(B+1, L, 2)`` array."""
        return self.table[..., e_bar:].sum(axis=-1)

    def same_as(self, other: "TransmissionPolicy") -> bool:
        return self.table.shape == other.table.shape and np.array_equal(self.table, other.table)

    def to_json(self) -> str:
        doc = {"format": POLICY_FORMAT, "name": self.name, "table": self.table.tolist()}
        return json.dumps(doc, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "TransmissionPolicy":
        doc = json.loads(text)
        if doc.get("format") != POLICY_FORMAT:
            raise ValueError(f"unsupported policy format {doc.get('format')!r}")
        return cls(np.asarray(doc["table"], dtype=float), doc.get("name", "custom"))


def available_energy(ehcs: ValidatedEhcs) -> np.ndarray:
    """``b + h(l)`` on the ``(B+1, L)`` grid."""
    return np.arange(ehcs.b_cap + 1)[:, None] + ehcs.h[None, :]


def feasible_set(ehcs: ValidatedEhcs) -> np.ndarray:
    """Boolean ``(B+1, L)`` mask of states with enough energy to transmit."""
    return available_energy(ehcs) >= ehcs.e_bar


def _deterministic(ehcs, transmit: np.ndarray, name) -> TransmissionPolicy:
    """Policy that spends exactly ``e_bar`` where ``transmit[b, l, f]`` holds, else 0."""
    table = np.zeros((ehcs.b_cap + 1, ehcs.n_latent, 2, ehcs.n_actions))
    if ehcs.e_bar < ehcs.n_actions:
        table[..., ehcs.e_bar] = transmit
    table[..., 0] += ~transmit
    return TransmissionPolicy(table, name)


def greedy_policy(ehcs: ValidatedEhcs) -> TransmissionPolicy:
    """Transmit ``e_bar`` whenever ``b + h(l) >= e_bar``, ignoring history."""
    ok = feasible_set(ehcs)
    return _deterministic(ehcs, np.repeat(ok[:, :, None], 2, axis=2), "greedy")


def never_transmit_policy(ehcs: ValidatedEhcs) -> TransmissionPolicy:
    mask = np.zeros((ehcs.b_cap + 1, ehcs.n_latent, 2), dtype=bool)
    return _deterministic(ehcs, mask, "never")


def random_policy(ehcs: ValidatedEhcs, rng: np.random.Generator, sparsity=0.5) -> TransmissionPolicy:
    """A random energy-causal policy; useful as a comparison baseline.

    Each cell spreads Dirichlet mass over a random subset of the feasible
    energies ``0..b + h(l)``.
    """
    avail = available_energy(ehcs)
    table = np.zeros((ehcs.b_cap + 1, ehcs.n_latent, 2, ehcs.n_actions))
    for b in range(ehcs.b_cap + 1):
        for l in range(ehcs.n_latent):
            top = min(int(avail[b, l]), ehcs.n_actions - 1)
            for f in range(2):
                support = np.flatnonzero(rng.random(top + 1) >= sparsity)
                if support.size == 0:
                    support = np.array([rng.integers(0, top + 1)])
                table[b, l, f, support] = rng.dirichlet(np.ones(support.size))
    return TransmissionPolicy(table, "random")


def validate_policy(policy: TransmissionPolicy, ehcs: ValidatedEhcs) -> list:
    """Offending cells of ``policy`` for ``ehcs``; an empty list means valid.

    Each violation is a tuple ``(reason, b, l, f, e)``; ``e`` is ``None`` for
    normalization failures.
    """
    want = (ehcs.b_cap + 1, ehcs.n_latent, 2, ehcs.n_actions)
    if policy.shape != want:
        return [("shape", policy.shape, want, None, None)]
    t = policy.table
    bad = []
    for b, l, f in zip(*np.nonzero(np.abs(t.sum(axis=-1) - 1.0) > PROB_TOL)):
        bad.append(("normalization", int(b), int(l), int(f), None))
    for b, l, f, e in zip(*np.nonzero(t < 0)):
        bad.append(("negative", int(b), int(l), int(f), int(e)))
    avail = available_energy(ehcs)
    e_idx = np.arange(ehcs.n_actions)
    over = (e_idx[None, None, None, :] > avail[:, :, None, None]) & (t > 0)
    for b, l, f, e in zip(*np.nonzero(over)):
        bad.append(("causality", int(b), int(l), int(f), int(e)))
    return bad


@dataclass(frozen=True, eq=False)
class DwellProbTable:
    """``probs[b, l]``: chance of ``k`` back-to-back feasible attempts from ``(b, l)``."""

    horizon: int
    probs: np.ndarray

    def distinct_values(self, mask=None) -> np.ndarray:
        v = self.probs if mask is None else self.probs[mask]
        return np.unique(v)


def dwell_transition(ehcs: ValidatedEhcs) -> np.ndarray:
    """Column-stochastic transition of ``G = (B, L)`` under transmit-every-step.

    Index of ``(b, l)`` is ``b * |L| + l``.
    """
    nb, nl = ehcs.b_cap + 1, ehcs.n_latent
    g = np.zeros((nb * nl, nb * nl))
    nxt_b = np.clip(available_energy(ehcs) - ehcs.e_bar, 0, ehcs.b_cap)
    for b in range(nb):
        for l in range(nl):
            b2 = nxt_b[b, l]
            g[b2 * nl:(b2 + 1) * nl, b * nl + l] = ehcs.source.transition[:, l]
    return g


def dwell_probabilities(ehcs: ValidatedEhcs, k: int) -> DwellProbTable:
    """Dwell probabilities by forward filtering on the ``G`` chain.

    For each start ``g0`` we carry the conditional law of ``G(j)`` given that
    every earlier step stayed in the feasible set ``T``. One step multiplies
    the running product by ``Pr(G(j) in T | earlier steps in T)``, restricts
    the law to ``T``, renormalizes and pushes it through the transition. All
    starts are processed together as columns of one matrix, so each step is a
    single ``|G| x |G|`` product and the whole table costs ``O(k |G|^3)``.
    Once a start's joint probability reaches zero it stays zero.
    """
    if int(k) != k or k < 1:
        raise ValueError(f"dwell horizon k must be a positive integer, got {k}")
    nb, nl = ehcs.b_cap + 1, ehcs.n_latent
    in_t = feasible_set(ehcs).reshape(-1).astype(float)
    g = dwell_transition(ehcs)
    n = nb * nl

    joint = in_t.copy()                       # Pr(E_0 | g0)
    cond = np.eye(n) * in_t[None, :]          # law of G(0) restricted to T
    alive = joint > 0
    for _ in range(1, int(k)):
        law = np.zeros_like(cond)
        law[:, alive] = cond[:, alive] / cond[:, alive].sum(axis=0)
        law = g @ law                         # Pr(G(j) = . | E_0..E_{j-1})
        step = in_t @ law                     # Pr(E_j | E_0..E_{j-1})
        joint = np.where(alive, joint * step, 0.0)
        alive = joint > 0
        cond = law * in_t[:, None]
    # renormalization can overshoot 1 by an ulp
    return DwellProbTable(int(k), np.clip(joint, 0.0, 1.0).reshape(nb, nl))


def dwell_probabilities_bruteforce(ehcs: ValidatedEhcs, k: int) -> np.ndarray:
    """Enumerate every latent path of length ``k``; exponential in ``k``."""
    import itertools

    nb, nl = ehcs.b_cap + 1, ehcs.n_latent
    lt, h, e_bar, cap = ehcs.source.transition, ehcs.h, ehcs.e_bar, ehcs.b_cap
    out = np.zeros((nb, nl))
    for b0 in range(nb):
        for l0 in range(nl):
            total = 0.0
            for rest in itertools.product(range(nl), repeat=int(k) - 1):
                path = (l0,) + rest
                p, b, ok = 1.0, b0, True
                for j, l in enumerate(path):
                    if j > 0:
                        p *= lt[l, path[j - 1]]
                        if p == 0.0:
                            break
                    if b + h[l] < e_bar:
                        ok = False
                        break
                    b = min(max(b + h[l] - e_bar, 0), cap)
                if ok and p > 0.0:
                    total += p
            out[b0, l0] = total
    return out


def build_dwell_policy(ehcs: ValidatedEhcs, k: int, p: float, table: DwellProbTable = None) -> TransmissionPolicy:
    """Predictive dwell-time policy with horizon ``k`` and threshold ``p``.

    With ``F = 0`` the sensor starts transmitting only from feasible states
    whose dwell probability is at least ``p``; with ``F = 1`` it keeps
    transmitting as long as energy allows.
    """
    if not 0.0 <= p <= 1.0:
        raise ValueError(f"threshold p must lie in [0, 1], got {p}")
    if table is None:
        table = dwell_probabilities(ehcs, k)
    elif table.horizon != k:
        raise ValueError("dwell table horizon does not match k")
    ok = feasible_set(ehcs)
    start = ok & (table.probs >= p)
    transmit = np.stack([start, ok], axis=2)
    return _deterministic(ehcs, transmit, f"dwell:{k},{p:g}")
