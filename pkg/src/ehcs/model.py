"""Problem instances: plant, channel, disturbance and the full EHCS tuple."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .harvest import HarvestSource


class EhcsValidationError(ValueError):
    """Raised by :func:`validate_ehcs`; ``errors`` lists every violation."""

    def __init__(self, errors):
        self.errors = list(errors)
        super().__init__("invalid EHCS: " + "; ".join(self.errors))


def _as_matrix(a) -> np.ndarray:
    m = np.atleast_2d(np.asarray(a, dtype=float))
    m.setflags(write=False)
    return m


@dataclass(frozen=True, eq=False)
class PlantModel:
    """Switched linear plant ``x+ = A_c x + w`` (loop closed) or ``A_o x + w``."""

    a_closed: np.ndarray
    a_open: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "a_closed", _as_matrix(self.a_closed))
        object.__setattr__(self, "a_open", _as_matrix(self.a_open))

    @property
    def dim(self) -> int:
        return int(self.a_closed.shape[0])

    def problems(self) -> list[str]:
        errs = []
        for name, a in (("a_closed", self.a_closed), ("a_open", self.a_open)):
            if a.ndim != 2 or a.shape[0] != a.shape[1] or a.shape[0] < 1:
                errs.append(f"plant.{name} must be a nonempty square matrix, got {a.shape}")
            elif not np.all(np.isfinite(a)):
                errs.append(f"plant.{name} has non-finite entries")
        if not errs and self.a_closed.shape != self.a_open.shape:
            errs.append(
                f"dimension mismatch: a_closed is {self.a_closed.shape}, "
                f"a_open is {self.a_open.shape}"
            )
        return errs


@dataclass(frozen=True)
class ChannelModel:
    success_prob: float
    tx_threshold: int

    def problems(self) -> list[str]:
        errs = []
        if not 0.0 <= self.success_prob <= 1.0:
            errs.append(f"channel.lambda must lie in [0, 1], got {self.success_prob}")
        if int(self.tx_threshold) != self.tx_threshold:
            errs.append("channel.tx_threshold must be an integer")
        elif self.tx_threshold < 1:
            errs.append("channel.tx_threshold must be >= 1 (zero makes transmission free)")
        return errs


DISTURBANCE_KINDS = ("none", "uniform", "gaussian")


@dataclass(frozen=True, eq=False)
class DisturbanceModel:
    """I.i.d. zero-mean disturbance.

    ``kind="uniform"`` draws each coordinate from ``[-half_width, half_width]``;
    ``kind="gaussian"`` draws from ``N(0, covariance)``.
    """

    kind: str = "none"
    dim: int = 1
    half_width: float = 0.0
    covariance: Optional[np.ndarray] = None

    @classmethod
    def none(cls, dim=1):
        return cls("none", dim)

    @classmethod
    def uniform(cls, half_width, dim=1):
        return cls("uniform", dim, half_width=float(half_width))

    @classmethod
    def gaussian(cls, covariance):
        cov = _as_matrix(covariance)
        return cls("gaussian", cov.shape[0], covariance=cov)

    @property
    def second_moment(self) -> np.ndarray:
        if self.kind == "uniform":
            return (self.half_width**2 / 3.0) * np.eye(self.dim)
        if self.kind == "gaussian":
            return np.array(self.covariance, dtype=float)
        return np.zeros((self.dim, self.dim))

    def problems(self) -> list[str]:
        if self.kind not in DISTURBANCE_KINDS:
            return [f"disturbance.kind must be one of {DISTURBANCE_KINDS}, got {self.kind!r}"]
        errs = []
        if self.kind == "uniform" and not self.half_width >= 0:
            errs.append("disturbance.half_width must be nonnegative")
        if self.kind == "gaussian":
            w = np.asarray(self.covariance, dtype=float)
            if w.shape != (self.dim, self.dim):
                errs.append("disturbance.covariance must be square")
            elif not np.allclose(w, w.T, atol=1e-12):
                errs.append("disturbance.covariance is not symmetric")
            elif np.linalg.eigvalsh(w).min() < -1e-12:
                errs.append("disturbance.covariance is not positive semidefinite")
        return errs

    def sample(self, rng: np.random.Generator, size: int) -> np.ndarray:
        """``size`` draws stacked as rows."""
        if self.kind == "uniform":
            return rng.uniform(-self.half_width, self.half_width, size=(size, self.dim))
        if self.kind == "gaussian":
            root = _psd_sqrt(self.covariance)
            return rng.standard_normal((size, self.dim)) @ root.T
        return np.zeros((size, self.dim))


def _psd_sqrt(w):
    vals, vecs = np.linalg.eigh(w)
    return vecs @ np.diag(np.sqrt(np.clip(vals, 0, None))) @ vecs.T


@dataclass(frozen=True, eq=False)
class EhcsSpec:
    """The tuple ``(A_c, A_o, h, L, lambda, e_bar, B_cap)`` plus the disturbance."""

    plant: PlantModel
    channel: ChannelModel
    source: HarvestSource
    battery_capacity: int
    disturbance: DisturbanceModel = field(default_factory=DisturbanceModel)

    def replace(self, **changes) -> "EhcsSpec":
        return dataclasses.replace(self, **changes)


@dataclass(frozen=True, eq=False)
class ValidatedEhcs:
    """An :class:`EhcsSpec` that passed :func:`validate_ehcs`.

    Derived constants are cached here; downstream code takes this type.
    """

    spec: EhcsSpec
    warnings: tuple = ()

    @property
    def plant(self) -> PlantModel:
        return self.spec.plant

    @property
    def source(self) -> HarvestSource:
        return self.spec.source

    @property
    def dim(self) -> int:
        return self.spec.plant.dim

    @property
    def lam(self) -> float:
        return float(self.spec.channel.success_prob)

    @property
    def e_bar(self) -> int:
        return int(self.spec.channel.tx_threshold)

    @property
    def b_cap(self) -> int:
        return int(self.spec.battery_capacity)

    @property
    def h(self) -> np.ndarray:
        return self.spec.source.energy_map

    @property
    def h_max(self) -> int:
        return self.spec.source.h_max

    @property
    def n_latent(self) -> int:
        return self.spec.source.n_latent

    @property
    def n_actions(self) -> int:
        """Size of the energy grid ``0..H_max + B_cap``."""
        return self.h_max + self.b_cap + 1

    @property
    def w(self) -> np.ndarray:
        return self.spec.disturbance.second_moment

    def with_battery_capacity(self, b_cap: int) -> "ValidatedEhcs":
        return validate_ehcs(self.spec.replace(battery_capacity=int(b_cap)))


def validate_ehcs(spec) -> ValidatedEhcs:
    """Check every invariant of ``spec`` and return a :class:`ValidatedEhcs`.

    Raises :class:`EhcsValidationError` listing all violations at once.
    A threshold above ``B_cap + H_max`` is only a warning: such a system never
    transmits but can still be certified.
    """
    if isinstance(spec, ValidatedEhcs):
        return spec
    errs = []
    errs += spec.plant.problems()
    errs += spec.channel.problems()
    errs += spec.source.problems()
    errs += spec.disturbance.problems()
    if int(spec.battery_capacity) != spec.battery_capacity:
        errs.append("battery_capacity must be an integer")
    elif spec.battery_capacity < 0:
        errs.append("battery_capacity must be nonnegative")
    if not errs and spec.disturbance.dim != spec.plant.dim:
        errs.append(
            f"disturbance dimension {spec.disturbance.dim} does not match plant "
            f"dimension {spec.plant.dim}"
        )
    if errs:
        raise EhcsValidationError(errs)
    warns = []
    if spec.channel.tx_threshold > spec.battery_capacity + spec.source.h_max:
        warns.append(
            f"transmission never feasible: tx_threshold {spec.channel.tx_threshold} "
            f"exceeds battery_capacity + H_max = {spec.battery_capacity + spec.source.h_max}"
        )
    return ValidatedEhcs(spec, tuple(warns))
