"""Design-space searches built on the certifier."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .embedding import build_mode_chain
from .model import ValidatedEhcs, validate_ehcs
from .policy import (TransmissionPolicy, build_dwell_policy, dwell_probabilities,
                     feasible_set, greedy_policy)
from .stability import MARGINAL, STABLE, UNSTABLE, StabilityReport, certify

STABILIZABLE, NOT_STABILIZABLE = "stabilizable", "not_stabilizable"


def certify_policy(ehcs: ValidatedEhcs, policy: TransmissionPolicy, tol=1e-10) -> StabilityReport:
    return certify(build_mode_chain(ehcs, policy), ehcs.plant, tol)


def scalar_stabilizability(ehcs: ValidatedEhcs) -> str:
    """For scalar plants the greedy policy decides stabilizability outright."""
    ehcs = validate_ehcs(ehcs)
    if ehcs.dim != 1:
        raise ValueError(f"stabilizability via greedy needs a scalar plant, got n = {ehcs.dim}")
    verdict = certify_policy(ehcs, greedy_policy(ehcs)).verdict
    return {STABLE: STABILIZABLE, UNSTABLE: NOT_STABILIZABLE}.get(verdict, MARGINAL)


@dataclass
class BatteryScan:
    """Per-capacity greedy verdicts and the smallest stable capacity (or ``None``)."""

    critical: Optional[int]
    b_max: int
    entries: list = field(default_factory=list)   # (b_cap, rho, verdict)

    def to_dict(self) -> dict:
        return {
            "critical_battery_capacity": self.critical,
            "outcome": "found" if self.critical is not None else "none_up_to_b_max",
            "b_max": self.b_max,
            "scan": [{"battery_capacity": b, "rho": r, "verdict": v} for b, r, v in self.entries],
        }


def critical_battery_capacity(ehcs, b_max: int = 64, stop_at_first: bool = True) -> BatteryScan:
    """Linear scan ``B_cap = 0..b_max`` certifying the greedy policy.

    ``ehcs`` supplies everything but the capacity, which is overwritten. A
    scan rather than bisection: stability is not known to be monotone in
    ``B_cap``, and with ``stop_at_first=False`` every verdict is kept so any
    non-monotonicity shows up in the report.
    """
    if b_max < 0:
        raise ValueError("b_max must be nonnegative")
    spec = ehcs.spec if isinstance(ehcs, ValidatedEhcs) else ehcs
    if spec.plant.dim != 1:
        raise ValueError("critical battery capacity relies on the scalar greedy test (n = 1)")
    scan = BatteryScan(None, b_max)
    for b in range(b_max + 1):
        inst = validate_ehcs(spec.replace(battery_capacity=b))
        rep = certify_policy(inst, greedy_policy(inst))
        scan.entries.append((b, rep.rho, rep.verdict))
        if rep.verdict == STABLE and scan.critical is None:
            scan.critical = b
            if stop_at_first:
                break
    return scan


@dataclass
class DwellCandidate:
    k: int
    p_low: float
    p_high: float
    low_closed: bool
    p: float
    rho: float
    verdict: str

    def contains(self, p: float) -> bool:
        above = p >= self.p_low if self.low_closed else p > self.p_low
        return above and p <= self.p_high

    def to_dict(self) -> dict:
        return {"k": self.k, "p_interval": [self.p_low, self.p_high],
                "interval_closed_left": self.low_closed, "p": self.p,
                "rho": self.rho, "verdict": self.verdict}


def dwell_intervals(values: np.ndarray):
    """Split ``[0, 1]`` into threshold intervals inducing the same start set.

    ``values`` are the distinct dwell probabilities of feasible states. Each
    interval is ``(low, high, low_closed, representative)``; thresholds in
    ``(v_{i-1}, v_i]`` start exactly the states with probability ``>= v_i``.
    """
    vals = np.unique(np.clip(values, 0.0, 1.0))
    out = []
    low, closed = 0.0, True
    for v in vals:
        out.append((low, float(v), closed, float(v)))
        low, closed = float(v), False
    if low < 1.0 or closed:
        out.append((low, 1.0, closed, 1.0))
    return out


@dataclass
class DwellSearch:
    candidates: list
    first_stable: Optional[DwellCandidate]

    def to_dict(self) -> dict:
        return {"candidates": [c.to_dict() for c in self.candidates],
                "first_stable": None if self.first_stable is None else self.first_stable.to_dict()}


def search_dwell_policies(ehcs: ValidatedEhcs, k_max: int) -> DwellSearch:
    """Certify one policy per threshold interval for every ``k <= k_max``."""
    if k_max < 1:
        raise ValueError("k_max must be >= 1")
    ok = feasible_set(ehcs)
    found, first = [], None
    for k in range(1, k_max + 1):
        table = dwell_probabilities(ehcs, k)
        for low, high, closed, p in dwell_intervals(table.probs[ok]):
            rep = certify_policy(ehcs, build_dwell_policy(ehcs, k, p, table))
            cand = DwellCandidate(k, low, high, closed, p, rep.rho, rep.verdict)
            found.append(cand)
            if first is None and rep.verdict == STABLE:
                first = cand
    return DwellSearch(found, first)


GRID = ((1, 1), (1, 2), (2, 1), (2, 2))


@dataclass
class SplitResult:
    """Greedy vs dwell verdicts over ``(e_bar, B_cap)`` pairs.

    ``chosen`` is the first pair where greedy is unstable and dwell stable.
    """

    k: int
    p: float
    chosen: Optional[tuple]
    rows: list

    def to_dict(self) -> dict:
        return {"k": self.k, "p": self.p, "chosen": self.chosen, "rows": self.rows}


def dwell_greedy_split(spec, k: int = 2, p: float = 0.5, grid=GRID) -> SplitResult:
    """Look for an ``(e_bar, B_cap)`` where dwell ``(k, p)`` stabilizes and greedy does not.

    The first grid entry is the assumed configuration; the rest are the
    fallback.
    """
    spec = spec.spec if isinstance(spec, ValidatedEhcs) else spec
    rows, chosen = [], None
    for e_bar, b_cap in grid:
        inst = validate_ehcs(spec.replace(
            channel=type(spec.channel)(spec.channel.success_prob, e_bar), battery_capacity=b_cap))
        g = certify_policy(inst, greedy_policy(inst))
        d = certify_policy(inst, build_dwell_policy(inst, k, p))
        rows.append({"tx_threshold": e_bar, "battery_capacity": b_cap,
                     "greedy_rho": g.rho, "greedy_verdict": g.verdict,
                     "dwell_rho": d.rho, "dwell_verdict": d.verdict})
        if chosen is None and g.verdict == UNSTABLE and d.verdict == STABLE:
            chosen = (e_bar, b_cap)
            break
    return SplitResult(k, p, chosen, rows)
