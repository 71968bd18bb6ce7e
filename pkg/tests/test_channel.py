import math

import numpy as np
import pytest
from scipy import integrate

from clocksync.channel import (
    FullyRandom,
    Mixture,
    ModelError,
    Noiseless,
    RandomDelay,
    apply_transit,
    average_trajectories,
    delta_matrix,
    model_from_dict,
    model_to_dict,
    sample_phases,
    sample_transit,
)
from clocksync.hilbert import (
    CompositeState,
    EnergySpec,
    Owner,
    OwnershipError,
    OwnershipLedger,
    Subsystem,
    check_density,
    free_evolve,
    from_vector,
    partial_trace,
    transfer,
    von_neumann_entropy,
)

A, B, C = Owner.ALICE, Owner.BOB, Owner.CHANNEL


def random_density(dim, rng):
    g = rng.normal(size=(dim, dim)) + 1j * rng.normal(size=(dim, dim))
    rho = g @ g.conj().T
    return rho / np.trace(rho)


def in_channel(rho, spec, sid="c"):
    return CompositeState([Subsystem(sid, spec)], rho, OwnershipLedger({sid: C}))


def random_model(rng):
    kind = rng.integers(4)
    if kind == 0:
        return Noiseless(float(rng.normal(scale=3)))
    if kind == 1:
        return Mixture(float(rng.random()))
    if kind == 2:
        return RandomDelay(float(rng.exponential(2)), ["gaussian", "uniform"][rng.integers(2)])
    return FullyRandom()


# -- delta matrix ----------------------------------------------------------------

def test_mixture_zero_is_all_ones():
    d = delta_matrix(Mixture(0.0), EnergySpec.ladder([0, 1, 3])).entries
    assert np.allclose(d, np.ones((3, 3)))


def test_fully_random_is_identity():
    d = delta_matrix(FullyRandom(), EnergySpec.ladder([0, 1, 3])).entries
    assert np.array_equal(d, np.eye(3))


def test_gaussian_delay_against_quadrature():
    def integrand(theta, part):
        p = math.exp(-theta**2 / 2) / math.sqrt(2 * math.pi)
        return p * (math.cos(theta) if part == 0 else -math.sin(theta))

    re = integrate.quad(integrand, -np.inf, np.inf, args=(0,))[0]
    im = integrate.quad(integrand, -np.inf, np.inf, args=(1,))[0]
    d = delta_matrix(RandomDelay(1.0), EnergySpec.qubit(1.0)).entries
    assert abs(d[0, 1] - complex(re, im)) < 1e-6
    assert abs(d[0, 1] - 0.6065306597126334) < 1e-6


def test_uniform_delay_against_quadrature():
    sigma, dw = 0.8, 1.7
    half = sigma * math.sqrt(3)
    re = integrate.quad(lambda t: math.cos(dw * t) / (2 * half), -half, half)[0]
    d = delta_matrix(RandomDelay(sigma, "uniform"), EnergySpec.qubit(dw)).entries
    assert abs(d[0, 1] - re) < 1e-10


def test_noiseless_delay_phase():
    d = delta_matrix(Noiseless(0.4), EnergySpec.qubit(2.0)).entries
    assert np.isclose(d[1, 0], np.exp(-1j * 0.8))


def test_delta_matrix_psd_over_random_models():
    rng = np.random.default_rng(10)
    for _ in range(100):
        spec = EnergySpec.ladder(np.sort(rng.choice(np.linspace(0, 5, 51), size=rng.integers(1, 5), replace=False)))
        d = delta_matrix(random_model(rng), spec).entries
        assert np.array_equal(np.diag(d), np.ones(len(d)))
        assert np.allclose(d, d.conj().T, atol=1e-15)
        assert np.linalg.eigvalsh(d).min() >= -1e-12


@pytest.mark.parametrize("bad", [lambda: Mixture(1.5), lambda: Mixture(-0.1), lambda: RandomDelay(-1.0),
                                 lambda: RandomDelay(1.0, "cauchy")])
def test_model_parameter_checks(bad):
    with pytest.raises(ModelError):
        bad()


def test_model_dict_round_trip():
    for m in (Noiseless(0.2), Mixture(0.3), RandomDelay(0.5, "uniform"), FullyRandom()):
        assert model_from_dict(model_to_dict(m)) == m
    with pytest.raises(ModelError):
        model_from_dict({"model": "telegraph"})


# -- apply_transit -----------------------------------------------------------------

def test_energy_diagonal_state_unchanged():
    spec = EnergySpec(((0.0, 2), (1.0, 1)))
    rho = np.zeros((3, 3), dtype=complex)
    rho[:2, :2] = [[0.3, 0.1], [0.1, 0.3]]
    rho[2, 2] = 0.4
    for m in (Noiseless(1.0), Mixture(0.6), RandomDelay(2.0), FullyRandom()):
        out = apply_transit(in_channel(rho, spec), "c", m, 3.0)
        assert np.allclose(out.rho, rho, atol=1e-14)


@pytest.mark.parametrize("eps", [0.0, 0.3, 1.0])
def test_mixture_scales_coherence(eps):
    rho = np.full((2, 2), 0.5, dtype=complex)
    out = apply_transit(in_channel(rho, EnergySpec.qubit(1.0)), "c", Mixture(eps), 0.0)
    assert np.isclose(out.rho[0, 1], 0.5 * (1 - eps))
    assert np.isclose(out.rho[0, 0], 0.5)


def test_transit_includes_free_evolution():
    rho = np.full((2, 2), 0.5, dtype=complex)
    out = apply_transit(in_channel(rho, EnergySpec.qubit(2.0)), "c", Noiseless(), 0.3)
    assert np.isclose(out.rho[1, 0], 0.5 * np.exp(-0.6j))


def bell(spec_a, spec_b, owners):
    subs = [Subsystem("a", spec_a), Subsystem("b", spec_b)]
    return from_vector(subs, [1, 0, 0, 1], owners)


def test_degenerate_bell_survives_full_dephasing():
    deg = EnergySpec.degenerate(1.0, 2)
    s = bell(deg, deg, {"a": A, "b": C})
    out = apply_transit(s, "b", FullyRandom(), 2.0)
    assert np.allclose(out.rho, s.rho, atol=1e-12)
    assert abs(von_neumann_entropy(partial_trace(out, ["a"]).rho) - 1) < 1e-10


def test_nondegenerate_bell_loses_coherence():
    q = EnergySpec.qubit(1.0)
    out = apply_transit(bell(q, q, {"a": A, "b": C}), "b", FullyRandom(), 2.0)
    assert out.rho[0, 3] == 0 and out.rho[3, 0] == 0
    assert np.allclose(np.diag(out.rho).real, [0.5, 0, 0, 0.5])


def test_degenerate_transparency_matches_free_evolution():
    spec = EnergySpec(((0.5, 3),))
    rng = np.random.default_rng(11)
    s = in_channel(random_density(3, rng), spec)
    free = free_evolve(transfer(s, "c", B, 0.0), ["c"], 1.7).rho
    for m in (Mixture(0.4), RandomDelay(3.0), FullyRandom()):
        assert np.allclose(apply_transit(s, "c", m, 1.7).rho, free, atol=1e-12)


def test_requires_channel_ownership():
    s = CompositeState([Subsystem("c", EnergySpec.qubit(1.0))], np.eye(2) / 2, OwnershipLedger({"c": A}))
    with pytest.raises(OwnershipError):
        apply_transit(s, "c", FullyRandom(), 1.0)


def test_transit_preserves_trace_and_positivity():
    rng = np.random.default_rng(12)
    for _ in range(100):
        spec = EnergySpec(((0.0, 1), (float(rng.uniform(0.1, 3)), int(rng.integers(1, 3)))))
        partner = EnergySpec.qubit(1.0)
        dim = spec.dim * 2
        s = CompositeState([Subsystem("p", partner), Subsystem("c", spec)], random_density(dim, rng),
                           OwnershipLedger({"p": A, "c": C}))
        out = apply_transit(s, "c", random_model(rng), float(rng.uniform(0, 5)))
        assert abs(np.trace(out.rho) - 1) <= 1e-12
        assert np.linalg.eigvalsh(out.rho).min() >= -1e-10
        check_density(out.rho)


def test_two_full_dephasings_equal_one():
    rng = np.random.default_rng(13)
    s = in_channel(random_density(3, rng), EnergySpec.ladder([0, 1, 2.5]))
    once = apply_transit(s, "c", FullyRandom(), 1.0)
    twice = apply_transit(apply_transit(s, "c", FullyRandom(), 0.4), "c", FullyRandom(), 0.6)
    assert np.allclose(once.rho, twice.rho, atol=1e-14)


def test_composition_stays_block_scaling():
    spec = EnergySpec.ladder([0, 1, 2.5])
    m1, m2 = Mixture(0.3), RandomDelay(0.7)
    rng = np.random.default_rng(14)
    s = in_channel(random_density(3, rng), spec)
    out = apply_transit(apply_transit(s, "c", m1, 0.5), "c", m2, 1.0).rho
    w = spec.omegas
    factor = np.exp(-1j * (w[:, None] - w[None, :]) * 1.5) * delta_matrix(m1, spec).entries * delta_matrix(m2, spec).entries
    assert np.allclose(out, s.rho * factor, atol=1e-12)


# -- sampling ----------------------------------------------------------------------

def test_noiseless_sample_is_identity():
    u = sample_transit(Noiseless(0.0), EnergySpec.ladder([0, 1, 2]), 0.0, 0)
    assert np.allclose(u, np.eye(3))


def test_fully_random_samples_unitary_and_distinct():
    spec = EnergySpec.ladder([0, 1, 2])
    u1 = sample_transit(FullyRandom(), spec, 1.0, 1)
    u2 = sample_transit(FullyRandom(), spec, 1.0, 2)
    for u in (u1, u2):
        assert np.max(np.abs(u @ u.conj().T - np.eye(3))) <= 1e-12
    assert not np.allclose(u1, u2)


@pytest.mark.parametrize("model", [Mixture(0.4), RandomDelay(0.9), RandomDelay(0.9, "uniform"), FullyRandom()])
def test_empirical_correlation_within_three_se(model):
    spec = EnergySpec.ladder([0.0, 1.0, 2.2])
    n = 100_000
    phis, _ = model.draw(spec.sector_omegas, n, np.random.default_rng(15))
    exact = delta_matrix(model, spec).entries
    for e in range(3):
        for f in range(e + 1, 3):
            z = np.exp(-1j * (phis[:, e] - phis[:, f]))
            se_re = z.real.std() / np.sqrt(n) + 1e-12
            se_im = z.imag.std() / np.sqrt(n) + 1e-12
            assert abs(z.real.mean() - exact[e, f].real) <= 3 * se_re
            assert abs(z.imag.mean() - exact[e, f].imag) <= 3 * se_im


def test_random_delay_lags_are_the_delays():
    phases, lags = sample_phases(RandomDelay(0.5), EnergySpec.qubit(2.0), 0.0, 1000, 3)
    assert np.allclose(phases[:, 1], 2.0 * lags)
    assert np.allclose(phases[:, 0], 0.0)


@pytest.mark.parametrize("model", [Mixture(0.5), RandomDelay(1.0)])
def test_trajectory_average_matches_channel(model):
    rng = np.random.default_rng(16)
    s = in_channel(random_density(2, rng), EnergySpec.qubit(1.3))
    exact = apply_transit(s, "c", model, 0.7).rho
    avg = average_trajectories(s, "c", model, 0.7, 100_000, 17).rho
    assert np.max(np.abs(avg - exact)) <= 5e-3


def test_trajectory_average_by_explicit_unitaries():
    rng = np.random.default_rng(18)
    spec = EnergySpec.qubit(1.0)
    rho = random_density(2, rng)
    model = RandomDelay(1.0)
    stream = np.random.default_rng(19)
    acc = np.zeros((2, 2), dtype=complex)
    n = 20_000
    for _ in range(n):
        u = sample_transit(model, spec, 0.5, stream)
        acc += u @ rho @ u.conj().T
    exact = apply_transit(in_channel(rho, spec), "c", model, 0.5).rho
    assert np.max(np.abs(acc / n - exact)) <= 1.5e-2
