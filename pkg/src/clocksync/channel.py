"""Transit evolution of the exchanged system.

While a subsystem is in the channel its energy sectors pick up phases
phi_e on top of free evolution. Averaging over the phase law multiplies the
block P_e rho P_f by the correlation

    delta[e, f] = E[exp(-i (phi_e - phi_f))]

which is what :func:`apply_transit` does. :func:`sample_transit` draws one
realization of the random unitary instead; the two agree on average.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Union

import numpy as np

from . import kernels
from .hilbert import CompositeState, EnergySpec, Owner, OwnershipError, hermitize

TWO_PI = 2 * math.pi


class ModelError(ValueError):
    pass


@dataclass(frozen=True)
class Noiseless:
    """Deterministic channel: every sector shifted by omega_e * fixed_delay."""

    fixed_delay: float = 0.0
    name = "noiseless"

    def correlation(self, omegas):
        w = np.asarray(omegas, dtype=float) * self.fixed_delay
        return np.exp(-1j * (w[:, None] - w[None, :]))

    def draw(self, omegas, size, rng):
        phis = np.broadcast_to(np.asarray(omegas, dtype=float) * self.fixed_delay, (size, len(omegas)))
        return phis.copy(), np.full(size, float(self.fixed_delay))

    @property
    def mean_lag(self):
        return self.fixed_delay

    def params(self):
        return {"fixed_delay": self.fixed_delay}


@dataclass(frozen=True)
class Mixture:
    """With probability 1-epsilon all sectors share one phase, else independent."""

    epsilon: float
    name = "mixture"
    mean_lag = 0.0

    def __post_init__(self):
        if not 0.0 <= self.epsilon <= 1.0:
            raise ModelError(f"mixture epsilon must lie in [0, 1], got {self.epsilon}")

    def correlation(self, omegas):
        n = len(omegas)
        return ((1 - self.epsilon) * np.ones((n, n)) + self.epsilon * np.eye(n)).astype(complex)

    def draw(self, omegas, size, rng):
        n = len(omegas)
        shared = rng.uniform(0, TWO_PI, size=(size, 1))
        indep = rng.uniform(0, TWO_PI, size=(size, n))
        pick = rng.random(size) < self.epsilon
        phis = np.where(pick[:, None], indep, np.broadcast_to(shared, (size, n)))
        return phis, np.zeros(size)

    def params(self):
        return {"epsilon": self.epsilon}


@dataclass(frozen=True)
class RandomDelay:
    """Random common delay theta: phi_e = omega_e * theta.

    ``sigma`` is the standard deviation of theta for both distributions; the
    uniform law spans [-sigma*sqrt(3), sigma*sqrt(3)].
    """

    sigma: float
    distribution: str = "gaussian"
    name = "random_delay"
    mean_lag = 0.0

    def __post_init__(self):
        if not self.sigma >= 0:
            raise ModelError(f"random_delay sigma must be >= 0, got {self.sigma}")
        if self.distribution not in ("gaussian", "uniform"):
            raise ModelError(f"unknown delay distribution {self.distribution!r} (gaussian|uniform)")

    def correlation(self, omegas):
        w = np.asarray(omegas, dtype=float)
        dw = w[:, None] - w[None, :]
        if self.distribution == "gaussian":
            c = np.exp(-0.5 * (dw * self.sigma) ** 2)
        else:
            c = np.sinc(dw * self.sigma * math.sqrt(3) / math.pi)
        return c.astype(complex)

    def sample_delays(self, size, rng):
        if self.distribution == "gaussian":
            return rng.normal(0.0, self.sigma, size=size)
        half = self.sigma * math.sqrt(3)
        return rng.uniform(-half, half, size=size)

    def draw(self, omegas, size, rng):
        theta = self.sample_delays(size, rng)
        return theta[:, None] * np.asarray(omegas, dtype=float)[None, :], theta

    def params(self):
        return {"sigma": self.sigma, "distribution": self.distribution}


@dataclass(frozen=True)
class FullyRandom:
    """Independent uniform phase per sector: complete dephasing."""

    name = "fully_random"
    mean_lag = 0.0

    def correlation(self, omegas):
        return np.eye(len(omegas), dtype=complex)

    def draw(self, omegas, size, rng):
        return rng.uniform(0, TWO_PI, size=(size, len(omegas))), np.zeros(size)

    def params(self):
        return {}


PhaseModel = Union[Noiseless, Mixture, RandomDelay, FullyRandom]

MODELS = {cls.name: cls for cls in (Noiseless, Mixture, RandomDelay, FullyRandom)}


def model_to_dict(model: PhaseModel) -> dict:
    return {"model": model.name, **model.params()}


def model_from_dict(data: dict) -> PhaseModel:
    data = dict(data)
    name = data.pop("model", None)
    if name not in MODELS:
        raise ModelError(f"unknown channel model {name!r}; expected one of {sorted(MODELS)}")
    try:
        return MODELS[name](**data)
    except TypeError as exc:
        raise ModelError(f"bad parameters for {name}: {exc}") from None


@dataclass(frozen=True)
class DeltaMatrix:
    entries: np.ndarray
    model: PhaseModel
    energies: EnergySpec


def delta_matrix(model: PhaseModel, energies: EnergySpec) -> DeltaMatrix:
    entries = np.array(model.correlation(energies.sector_omegas), dtype=complex)
    np.fill_diagonal(entries, 1.0)
    return DeltaMatrix(entries, model, energies)


def transit_factor(model: PhaseModel, energies: EnergySpec, transit: float) -> np.ndarray:
    """Entrywise multiplier on the subsystem's own indices for one transit."""
    w = energies.omegas
    sec = energies.sector_of
    free = np.exp(-1j * (w[:, None] - w[None, :]) * transit)
    return free * delta_matrix(model, energies).entries[np.ix_(sec, sec)]


def _require_channel(s: CompositeState, sid: str) -> None:
    if s.owner(sid) != Owner.CHANNEL:
        raise OwnershipError(f"{sid!r} is held by {s.owner(sid).value}, not the Channel")


def apply_transit(s: CompositeState, sid: str, model: PhaseModel, transit: float) -> CompositeState:
    """Averaged transit map on subsystem ``sid``, applied inside the full state."""
    _require_channel(s, sid)
    pos = s.position(sid)
    dims = s.dims
    left = int(np.prod(dims[:pos], dtype=int))
    right = int(np.prod(dims[pos + 1:], dtype=int))
    rho = np.ascontiguousarray(s.rho)[None].copy()
    kernels.scale_axis(rho, np.ascontiguousarray(transit_factor(model, s.spec(sid), transit)), left, dims[pos], right)
    return s._with(rho=hermitize(rho[0]))


def _rng(rng):
    return rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)


def sample_phases(model: PhaseModel, energies: EnergySpec, transit: float, size: int, rng):
    """Per-basis-vector total phase for ``size`` transits, and the delays drawn.

    Returns ``(phases, lags)`` with shapes (size, dim) and (size,);
    ``lags`` is zero for models without a delay interpretation.
    """
    phis, lags = model.draw(energies.sector_omegas, size, _rng(rng))
    return energies.omegas[None, :] * transit + phis[:, energies.sector_of], lags


def sample_transit(model: PhaseModel, energies: EnergySpec, transit: float, rng) -> np.ndarray:
    """One realization exp(-i sum_e P_e (omega_e transit + phi_e))."""
    phases, _ = sample_phases(model, energies, transit, 1, rng)
    return np.diag(np.exp(-1j * phases[0]))


def average_trajectories(s: CompositeState, sid: str, model: PhaseModel, transit: float, n: int, rng) -> CompositeState:
    """Mean of ``n`` sampled-unitary evolutions of ``sid``.

    The unitaries are diagonal, so the average acts as an entrywise
    multiplier on the subsystem indices, estimated from the draws.
    """
    _require_channel(s, sid)
    phases, _ = sample_phases(model, s.spec(sid), transit, n, rng)
    factor = kernels.coherence_mean(np.ascontiguousarray(phases))
    pos = s.position(sid)
    dims = s.dims
    rho = np.ascontiguousarray(s.rho)[None].copy()
    left = int(np.prod(dims[:pos], dtype=int))
    right = int(np.prod(dims[pos + 1:], dtype=int))
    kernels.scale_axis(rho, np.ascontiguousarray(factor), left, dims[pos], right)
    return s._with(rho=hermitize(rho[0]))
