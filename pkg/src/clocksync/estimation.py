"""How much timing information a scenario leaves the actors.

Three probes: trace distance between offset-conditioned states (can the
states be told apart at all), quantum Fisher information (best possible
precision), and a maximum-likelihood fit of the offset from sampled runs
(what a concrete protocol achieves).
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .channel import FullyRandom, Mixture, Noiseless, PhaseModel, RandomDelay
from .hilbert import Owner, StateError, check_density, hermitize
from .protocols import ScenarioError, Timeline, measure_labels, outcome_distribution, run_exact, run_sampled_batch

DEFAULT_STEP = 1e-4
DEFAULT_CUTOFF = 1e-12


@dataclass(frozen=True)
class FisherReport:
    parameter: str
    at: float
    qfi: float
    step: float
    cutoff: float


@dataclass(frozen=True, eq=False)
class OffsetEstimate:
    estimate: float
    resolution: float
    grid: np.ndarray
    loglik: np.ndarray
    shots: int
    stderr: float


def trace_distance(a, b) -> float:
    a = np.asarray(a, dtype=complex)
    b = np.asarray(b, dtype=complex)
    if a.shape != b.shape:
        raise StateError(f"dimension mismatch: {a.shape} vs {b.shape}")
    return float(0.5 * np.linalg.svd(a - b, compute_uv=False).sum())


def qfi_from_derivative(rho, drho, cutoff: float = DEFAULT_CUTOFF) -> float:
    """SLD Fisher information 2 sum |<i|drho|j>|^2 / (l_i + l_j) over l_i + l_j > cutoff."""
    lam, vec = np.linalg.eigh(hermitize(rho))
    d = vec.conj().T @ drho @ vec
    den = lam[:, None] + lam[None, :]
    keep = den > cutoff
    return float(2 * np.sum(np.abs(d[keep]) ** 2 / den[keep]))


def qfi(state_of: Callable[[float], np.ndarray], at: float, step: float = DEFAULT_STEP,
        cutoff: float = DEFAULT_CUTOFF, parameter: str = "Delta") -> FisherReport:
    """QFI of the family ``state_of`` at ``at`` with a central-difference derivative."""
    if not step > 0:
        raise ValueError("step must be positive")
    rho = np.asarray(state_of(at), dtype=complex)
    hi = np.asarray(state_of(at + step), dtype=complex)
    lo = np.asarray(state_of(at - step), dtype=complex)
    for m in (rho, hi, lo):
        check_density(m, trace_tol=1e-10)
    drho = hermitize((hi - lo) / (2 * step))
    return FisherReport(parameter, float(at), qfi_from_derivative(rho, drho, cutoff), step, cutoff)


def classical_fisher(prob_of: Callable[[float], dict], at: float, step: float = DEFAULT_STEP) -> float:
    """Fisher information of an outcome distribution, per shot."""
    p = prob_of(at)
    hi, lo = prob_of(at + step), prob_of(at - step)
    total = 0.0
    for k, pk in p.items():
        if pk > 1e-15:
            dp = (hi.get(k, 0.0) - lo.get(k, 0.0)) / (2 * step)
            total += dp * dp / pk
    return total


def _loglik(counts: dict, dist: dict) -> float:
    ll = 0.0
    for key, n in counts.items():
        if n == 0:
            continue
        p = dist.get(key, 0.0)
        if p <= 0:
            return -math.inf
        ll += n * math.log(p)
    return ll


def _joint_counts(batch, labels) -> dict:
    kept = ~batch.discarded
    cols = [np.asarray(batch.outcome_index[lab])[kept] for lab in labels]
    names = [batch.outcome_names[lab] for lab in labels]
    counts: dict = {}
    if not cols:
        return counts
    stacked = np.stack(cols, axis=1)
    keys, n = np.unique(stacked, axis=0, return_counts=True)
    for row, c in zip(keys, n):
        counts[tuple(names[j][k] for j, k in enumerate(row))] = int(c)
    return counts


def mle_offset(t: Timeline, true_delta: float, shots: int, grid: Sequence[float], seed: int,
               step: float = 1e-3) -> OffsetEstimate:
    """Fit the clock offset from ``shots`` sampled runs at ``true_delta``.

    The likelihood of the observed joint outcomes is computed from exact
    outcome probabilities at every grid point; the standard error comes from
    the curvature of the log-likelihood at the estimate (infinite when the
    curve is flat there). Exact ties between grid points are broken at
    random from ``seed``.
    """
    grid = np.asarray(grid, dtype=float)
    if grid.size == 0:
        raise ValueError("grid must be nonempty")
    if shots < 1:
        raise ValueError("shots must be >= 1")
    labels = measure_labels(t)
    if not labels:
        raise ValueError("timeline has no measurement to fit")
    batch = run_sampled_batch(t.with_delta(true_delta), shots, seed)
    counts = _joint_counts(batch, labels)

    def ll_at(d):
        # a candidate under which the schedule cannot even run explains nothing
        try:
            dist = outcome_distribution(t.with_delta(d))
        except ScenarioError:
            return -math.inf
        return _loglik(counts, dist)

    ll = np.array([ll_at(d) for d in grid])
    if not np.isfinite(ll).any():
        raise ValueError("observed outcomes are impossible under every grid candidate")
    # ties (a flat likelihood carries no information) are broken at random
    top = np.max(ll)
    tied = np.flatnonzero(ll >= top - 1e-9 * max(1.0, abs(top)))
    i = int(tied[0]) if len(tied) == 1 else int(np.random.default_rng([seed, 1]).choice(tied))
    est = float(grid[i])
    curv = (ll_at(est + step) - 2 * ll[i] + ll_at(est - step)) / step**2
    stderr = 1 / math.sqrt(-curv) if np.isfinite(curv) and curv < 0 else math.inf
    res = float(np.median(np.diff(np.sort(grid)))) if grid.size > 1 else 0.0
    return OffsetEstimate(est, res, grid, ll, int((~batch.discarded).sum()), stderr)


@dataclass(frozen=True)
class SweepRow:
    noise_value: float
    delta: float
    trace_distance_max: float
    qfi: float
    mle_estimate: float | None = None
    mle_stderr: float | None = None
    shots: int | None = None


NOISE_FAMILIES = {
    "epsilon": lambda x: FullyRandom() if x == 1 else Mixture(x),
    "sigma": lambda x: RandomDelay(x),
    "fixed_delay": lambda x: Noiseless(x),
}


def max_pairwise_distance(states) -> float:
    worst = 0.0
    for i in range(len(states)):
        for j in range(i + 1, len(states)):
            worst = max(worst, trace_distance(states[i], states[j]))
    return worst


def nogo_sweep(t: Timeline, delta_grid: Sequence[float], noise_grid: Sequence[float],
               family: str | Callable[[float], PhaseModel] = "epsilon", observer=Owner.BOB,
               step: float = DEFAULT_STEP) -> list[SweepRow]:
    """Offset distinguishability and QFI of the observer's final state, per noise level.

    ``family`` maps a noise value to a channel model: ``"epsilon"`` (mixture,
    with 1 meaning complete dephasing), ``"sigma"`` (gaussian random delay),
    ``"fixed_delay"`` or any callable. QFI is taken at the middle of the
    delta grid.
    """
    delta_grid = [float(d) for d in delta_grid]
    if not delta_grid or not len(noise_grid):
        raise ValueError("grids must be nonempty")
    make = NOISE_FAMILIES[family] if isinstance(family, str) else family
    mid = (min(delta_grid) + max(delta_grid)) / 2
    rows = []
    for x in sorted(float(v) for v in noise_grid):
        tl = t.with_channel(make(x))

        def state_of(d, tl=tl):
            return run_exact(tl.with_delta(d)).state(observer)

        states = [state_of(d) for d in delta_grid]
        rows.append(SweepRow(x, mid, max_pairwise_distance(states), qfi(state_of, mid, step).qfi))
    return rows
