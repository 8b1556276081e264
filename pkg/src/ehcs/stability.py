"""Mean-square stability certification of the embedded MJLS.

Two independent routes:

* :func:`spectral_radius_test` estimates the spectral radius of the
  second-moment operator (dense eigenvalues for small operators, shifted power
  iteration on the PSD cone otherwise);
* :func:`lyapunov_certificate` searches for mode-dependent quadratic Lyapunov
  matrices ``R_s`` satisfying ``A_s^T (sum_j psi[j, s] R_j) A_s - R_s < 0``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import NamedTuple, Optional

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .embedding import ModeChain, apply_adjoint, apply_second_moment, second_moment_operator
from .model import PlantModel

log = logging.getLogger(__name__)

MARGIN = 1e-6
DENSE_LIMIT = 2000

STABLE, UNSTABLE, MARGINAL = "stable", "unstable", "marginal"


def classify(rho: float, margin: float = MARGIN) -> str:
    if rho < 1.0 - margin:
        return STABLE
    if rho > 1.0 + margin:
        return UNSTABLE
    return MARGINAL


class SpectralEstimate(NamedTuple):
    rho: float
    verdict: str
    method: str
    iterations: int
    converged: bool


def spectral_radius_test(chain: ModeChain, plant: PlantModel, tol: float = 1e-10,
                         max_iter: int = 200_000, method: str = "auto") -> SpectralEstimate:
    """Spectral radius of the second-moment operator and the resulting verdict.

    ``method`` is ``"dense"``, ``"power"`` or ``"auto"`` (dense up to 2000
    unknowns). Power iteration that does not converge within ``max_iter``
    reports ``marginal``.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    size = chain.size * plant.dim**2
    if method == "auto":
        method = "dense" if size <= DENSE_LIMIT else "power"
    if method == "dense":
        op = second_moment_operator(chain, plant).toarray()
        rho = float(np.max(np.abs(np.linalg.eigvals(op)))) if size else 0.0
        return SpectralEstimate(rho, classify(rho), "dense", 0, True)
    if method != "power":
        raise ValueError(f"unknown method {method!r}")
    rho, its, ok = _cone_power_iteration(chain, plant, tol, max_iter)
    if not ok:
        log.warning("power iteration did not converge in %d steps (rho ~ %.12g)", its, rho)
        return SpectralEstimate(rho, MARGINAL, "power", its, False)
    return SpectralEstimate(rho, classify(rho), "power", its, True)


def _stack_trace(q):
    return float(np.trace(q, axis1=1, axis2=2).sum())


def _cone_power_iteration(chain, plant, tol, max_iter, window=64):
    """Shifted power iteration ``Q <- T(Q) + c Q`` starting from identities.

    The Perron eigenvalue of the cone-preserving map ``T`` is real and has a
    PSD eigenvector; shifting by ``c > 0`` makes it strictly dominant even
    when the mode chain is periodic. Trace-sum normalization keeps iterates
    in the cone.
    """
    n = plant.dim
    q = np.broadcast_to(np.eye(n), (chain.size, n, n)).copy()
    q /= _stack_trace(q)
    c = max(_stack_trace(apply_second_moment(chain, plant, q)), 1e-3)
    history = []
    for it in range(1, max_iter + 1):
        tq = apply_second_moment(chain, plant, q)
        est = _stack_trace(tq)  # tr(T q) / tr(q) with tr(q) = 1
        history.append(est)
        q = tq + c * q
        q /= _stack_trace(q)
        if it > window:
            old = history[-window - 1]
            if abs(est - old) <= tol * max(abs(est), 1e-300) and abs(est - history[-2]) <= tol * max(abs(est), 1e-300):
                return est, it, True
    return history[-1], max_iter, False


@dataclass(frozen=True, eq=False)
class LyapunovCertificate:
    """Mode-dependent Lyapunov matrices, normalized so ``R_s >= I``.

    ``slack`` is the largest eigenvalue of ``A_s^T (sum_j psi[j, s] R_j) A_s - R_s``
    over all modes; a valid certificate has ``slack < 0``.
    """

    matrices: np.ndarray
    slack: float
    iterations: int
    method: str

    @property
    def valid(self) -> bool:
        return self.slack < 0 and bool(np.all(np.linalg.eigvalsh(self.matrices)[:, 0] >= 1.0 - 1e-9))


def certificate_slack(chain: ModeChain, plant: PlantModel, r: np.ndarray) -> float:
    """Recompute the worst Lyapunov decrease from scratch."""
    d = apply_adjoint(chain, plant, r) - r
    d = 0.5 * (d + np.transpose(d, (0, 2, 1)))
    return float(np.max(np.linalg.eigvalsh(d)[:, -1]))


def lyapunov_certificate(chain: ModeChain, plant: PlantModel, tol: float = 1e-12,
                         max_iter: int = 5000, growth_cap: float = 1e12) -> Optional[LyapunovCertificate]:
    """Coupled-Lyapunov certificate, or ``None`` when none exists.

    Iterates ``R <- A_s^T (sum_j psi[j, s] R_j) A_s + I`` from ``R = I``. The
    iteration converges exactly when the second-moment operator is stable,
    and its limit solves the coupled Lyapunov equations with right-hand side
    ``I``. If it neither converges nor passes ``growth_cap`` within
    ``max_iter`` steps, the same linear equations are solved directly. Any
    candidate is accepted only if every ``R_s`` is positive definite and the
    recomputed slack is negative.
    """
    n = plant.dim
    eye = np.broadcast_to(np.eye(n), (chain.size, n, n))
    r = eye.copy()
    method = "fixed-point"
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        nxt = apply_adjoint(chain, plant, r) + eye
        scale = np.max(np.abs(nxt))
        if not np.isfinite(scale) or scale > growth_cap:
            return None
        delta = np.max(np.abs(nxt - r))
        r = nxt
        if delta <= tol * scale:
            converged = True
            break
    if not converged:
        r = _solve_coupled_lyapunov(chain, plant)
        method = "linear-solve"
        if r is None:
            return None
    r = 0.5 * (r + np.transpose(r, (0, 2, 1)))
    lo = np.linalg.eigvalsh(r)[:, 0]
    if np.min(lo) <= 0 or not np.all(np.isfinite(r)):
        return None
    r = r / np.min(lo)
    slack = certificate_slack(chain, plant, r)
    if not slack < 0:
        return None
    return LyapunovCertificate(r, slack, it, method)


def _solve_coupled_lyapunov(chain, plant):
    n = plant.dim
    op = second_moment_operator(chain, plant).T.tocsc()
    lhs = sp.identity(op.shape[0], format="csc") - op
    rhs = np.broadcast_to(np.eye(n).reshape(-1), (chain.size, n * n)).reshape(-1)
    try:
        sol = spla.spsolve(lhs, rhs)
    except RuntimeError:
        return None
    if not np.all(np.isfinite(sol)):
        return None
    return sol.reshape(chain.size, n, n)


class DecayConstants(NamedTuple):
    alpha: float
    xi: float
    ultimate_bound: float


def decay_constants(cert: LyapunovCertificate, rho: float) -> DecayConstants:
    """Constants ``(alpha, xi, M)`` of ``E||x(t)||^2 <= alpha xi^t E||x(0)||^2 + M Tr(W)``.

    With ``V(x, s) = x^T R_s x`` the certificate gives
    ``E[V(t+1)] <= (1 - mu_s / lambda_max(R_s)) V(t)`` where ``-mu_s`` is the
    per-mode slack, and the sandwich ``lambda_min V <= ... <= lambda_max V``
    gives ``alpha``. The resulting rate is never below ``rho``; ``xi`` is the
    larger of the two so the bound holds from any initial mode.
    """
    if not rho < 1.0:
        raise ValueError(f"decay constants need rho < 1, got {rho}")
    if cert is None or not cert.valid:
        raise ValueError("decay constants need a valid Lyapunov certificate")
    r = cert.matrices
    ev = np.linalg.eigvalsh(r)
    alpha = float(ev[:, -1].max() / ev[:, 0].min())
    xi_lyap = 1.0 - (-cert.slack) / float(ev[:, -1].max())
    xi = float(min(max(rho, xi_lyap), 1.0 - 1e-15))
    return DecayConstants(alpha, xi, alpha / (1.0 - xi))


@dataclass
class StabilityReport:
    rho: float
    verdict: str
    alpha: Optional[float] = None
    xi: Optional[float] = None
    ultimate_bound: Optional[float] = None
    certificate: Optional[LyapunovCertificate] = field(default=None, repr=False)
    method: str = ""
    iterations: int = 0
    notes: list = field(default_factory=list)

    @property
    def slack(self):
        return None if self.certificate is None else self.certificate.slack

    def to_dict(self) -> dict:
        return {
            "rho": self.rho,
            "verdict": self.verdict,
            "alpha": self.alpha,
            "xi": self.xi,
            "M": self.ultimate_bound,
            "slack": self.slack,
            "iterations": self.iterations,
            "spectral_method": self.method,
            "lyapunov_method": None if self.certificate is None else self.certificate.method,
            "notes": list(self.notes),
        }


def certify(chain: ModeChain, plant: PlantModel, tol: float = 1e-10,
            lyapunov_iter: int = 5000) -> StabilityReport:
    """Run both tests and assemble a :class:`StabilityReport`.

    A stable verdict requires the spectral radius below ``1 - 1e-6`` *and* a
    valid certificate; disagreement is reported as ``marginal``.
    """
    est = spectral_radius_test(chain, plant, tol)
    report = StabilityReport(est.rho, est.verdict, method=est.method, iterations=est.iterations)
    if est.verdict == MARGINAL:
        if not est.converged:
            report.notes.append("power iteration did not converge")
        return report
    cert = lyapunov_certificate(chain, plant, max_iter=lyapunov_iter)
    feasible = cert is not None
    if feasible != (est.verdict == STABLE):
        report.verdict = MARGINAL
        report.notes.append(
            f"spectral verdict {est.verdict} disagrees with Lyapunov feasibility {feasible}"
        )
        return report
    if feasible:
        report.certificate = cert
        report.alpha, report.xi, report.ultimate_bound = decay_constants(cert, est.rho)
    return report
