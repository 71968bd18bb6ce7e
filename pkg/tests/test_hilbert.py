import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from clocksync.hilbert import (
    CompositeState,
    EnergySpec,
    Owner,
    OwnershipError,
    OwnershipLedger,
    StateError,
    Subsystem,
    basis_state,
    check_density,
    embed_unitary,
    free_evolve,
    from_vector,
    partial_trace,
    permute,
    reduce_matrix,
    replace,
    tensor,
    transfer,
    von_neumann_entropy,
)

A, B, C = Owner.ALICE, Owner.BOB, Owner.CHANNEL
QUBIT = EnergySpec.qubit(1.0)
X = np.array([[0, 1], [1, 0]], dtype=complex)


def random_density(dim, rng, rank=None):
    rank = rank or dim
    g = rng.normal(size=(dim, rank)) + 1j * rng.normal(size=(dim, rank))
    rho = g @ g.conj().T
    return rho / np.trace(rho)


def random_unitary(dim, rng):
    q, r = np.linalg.qr(rng.normal(size=(dim, dim)) + 1j * rng.normal(size=(dim, dim)))
    return q * (np.diag(r) / np.abs(np.diag(r)))


def two_qubits(rho, owners=(A, A)):
    subs = [Subsystem("q1", QUBIT), Subsystem("q2", QUBIT)]
    return CompositeState(subs, rho, OwnershipLedger({"q1": owners[0], "q2": owners[1]}))


def plus_state(sid, owner=A):
    return from_vector([Subsystem(sid, QUBIT)], [1, 1], {sid: owner})


# -- EnergySpec ----------------------------------------------------------------

def test_energy_spec_structure():
    spec = EnergySpec(((0.0, 1), (2.0, 3)))
    assert spec.dim == 4
    assert list(spec.sector_of) == [0, 1, 1, 1]
    assert np.allclose(spec.omegas, [0, 2, 2, 2])
    assert np.allclose(spec.projector(1), np.diag([0, 1, 1, 1]))


@pytest.mark.parametrize("levels", [(), ((1.0, 1), (1.0, 1)), ((2.0, 1), (1.0, 1)), ((0.0, 0),)])
def test_energy_spec_rejects_bad_levels(levels):
    with pytest.raises(StateError):
        EnergySpec(levels)


# -- tensor ----------------------------------------------------------------------

def test_tensor_of_ground_states():
    s = tensor(basis_state("a", QUBIT, A), basis_state("b", QUBIT, B))
    expected = np.zeros((4, 4))
    expected[0, 0] = 1
    assert np.allclose(s.rho, expected)
    assert s.ids == ["a", "b"] and s.owner("b") == B


def test_tensor_with_trivial_factor():
    rho = random_density(2, np.random.default_rng(0))
    s = CompositeState([Subsystem("q", QUBIT)], rho, OwnershipLedger({"q": A}))
    t = tensor(s, basis_state("one", EnergySpec.trivial(), B))
    assert np.allclose(t.rho, rho, atol=1e-12)


def test_tensor_of_plus_states_is_uniform():
    s = tensor(plus_state("a"), plus_state("b"))
    assert np.allclose(s.rho, np.full((4, 4), 0.25), atol=1e-12)


def test_tensor_duplicate_ids():
    with pytest.raises(StateError):
        tensor(plus_state("a"), plus_state("a"))


# -- partial trace --------------------------------------------------------------

def test_partial_trace_bell():
    s = from_vector([Subsystem("q1", QUBIT), Subsystem("q2", QUBIT)], [1, 0, 0, 1], {"q1": A, "q2": A})
    assert np.allclose(partial_trace(s, ["q2"]).rho, np.eye(2) / 2, atol=1e-12)


def test_partial_trace_of_product():
    rng = np.random.default_rng(1)
    ra, rb = random_density(2, rng), random_density(3, rng)
    s = CompositeState([Subsystem("a", QUBIT), Subsystem("b", EnergySpec.ladder([0, 1, 2]))],
                       np.kron(ra, rb), OwnershipLedger({"a": A, "b": B}))
    assert np.allclose(partial_trace(s, ["a"]).rho, ra, atol=1e-12)
    assert np.allclose(partial_trace(s, ["b"]).rho, rb, atol=1e-12)


def index_sum_keep_first(rho, d1, d2):
    out = np.zeros((d1, d1), dtype=complex)
    for i in range(d1):
        for j in range(d1):
            for k in range(d2):
                out[i, j] += rho[i * d2 + k, j * d2 + k]
    return out


def test_partial_trace_matches_index_sum():
    rng = np.random.default_rng(2)
    for _ in range(20):
        rho = random_density(4, rng)
        got = partial_trace(two_qubits(rho), ["q1"]).rho
        assert np.max(np.abs(got - index_sum_keep_first(rho, 2, 2))) <= 1e-12


def test_partial_trace_keeps_original_order():
    rng = np.random.default_rng(3)
    dims = [2, 3, 2]
    rho = random_density(12, rng)
    ref = reduce_matrix(rho, dims, [0, 2])
    subs = [Subsystem("a", QUBIT), Subsystem("b", EnergySpec.ladder([0, 1, 2])), Subsystem("c", QUBIT)]
    s = CompositeState(subs, rho, OwnershipLedger({"a": A, "b": A, "c": B}))
    red = partial_trace(s, ["c", "a"])
    assert red.ids == ["a", "c"]
    assert np.allclose(red.rho, ref, atol=1e-12)
    assert abs(np.trace(red.rho) - 1) < 1e-12


def test_partial_trace_unknown_id():
    with pytest.raises(StateError):
        partial_trace(plus_state("a"), ["zz"])


# -- embed_unitary ----------------------------------------------------------------

def test_identity_unitary_leaves_state():
    s = plus_state("a")
    assert np.allclose(embed_unitary(s, ["a"], np.eye(2)).rho, s.rho)


def test_x_on_first_qubit():
    s = tensor(basis_state("q1", QUBIT, A), basis_state("q2", QUBIT, A))
    out = embed_unitary(s, ["q1"], X)
    expected = np.zeros((4, 4))
    expected[2, 2] = 1  # |10>
    assert np.allclose(out.rho, expected)


def test_target_order_is_respected():
    cnot = np.array([[1, 0, 0, 0], [0, 1, 0, 0], [0, 0, 0, 1], [0, 0, 1, 0]])
    s = tensor(basis_state("q1", QUBIT, A), basis_state("q2", QUBIT, A, index=1))
    out = embed_unitary(s, ["q2", "q1"], cnot)  # q2 controls q1
    assert np.isclose(out.rho[3, 3], 1)


def test_local_unitaries_commute():
    rng = np.random.default_rng(4)
    for _ in range(50):
        s = two_qubits(random_density(4, rng), (A, B))
        ua, ub = random_unitary(2, rng), random_unitary(2, rng)
        ab = embed_unitary(embed_unitary(s, ["q1"], ua, A), ["q2"], ub, B)
        ba = embed_unitary(embed_unitary(s, ["q2"], ub, B), ["q1"], ua, A)
        assert np.max(np.abs(ab.rho - ba.rho)) <= 1e-12


def test_embed_unitary_errors():
    s = two_qubits(np.eye(4) / 4, (A, B))
    with pytest.raises(StateError):
        embed_unitary(s, ["q1"], np.array([[1, 1], [0, 1]]))
    with pytest.raises(OwnershipError):
        embed_unitary(s, ["q1", "q2"], np.eye(4))
    with pytest.raises(OwnershipError):
        embed_unitary(s, ["q1"], X, actor=B)
    with pytest.raises(OwnershipError):
        embed_unitary(transfer(s, "q1", C, 0.0), ["q1"], X)


# -- free evolution ---------------------------------------------------------------

def test_free_evolve_zero_time():
    s = plus_state("a")
    assert np.allclose(free_evolve(s, ["a"], 0.0).rho, s.rho)


def test_free_evolve_half_period_flips_plus():
    w1 = 2.5
    s = from_vector([Subsystem("a", EnergySpec.qubit(w1))], [1, 1], {"a": A})
    out = free_evolve(s, ["a"], np.pi / w1)
    assert np.allclose(out.rho, np.array([[1, -1], [-1, 1]]) / 2, atol=1e-12)


def test_free_evolve_fixes_diagonal_states():
    spec = EnergySpec(((0.0, 1), (1.3, 2)))
    rho = np.diag([0.2, 0.5, 0.3]).astype(complex)
    s = CompositeState([Subsystem("a", spec)], rho, OwnershipLedger({"a": A}))
    assert np.allclose(free_evolve(s, ["a"], 7.1).rho, rho)


@settings(max_examples=60, deadline=None)
@given(st.floats(-5, 5), st.floats(-5, 5), st.integers(0, 2**32 - 1))
def test_free_evolution_group_law(t1, t2, seed):
    rng = np.random.default_rng(seed)
    spec = EnergySpec.ladder([0.0, 0.7, 1.9])
    s = CompositeState([Subsystem("a", spec), Subsystem("b", QUBIT)], random_density(6, rng),
                       OwnershipLedger({"a": A, "b": B}))
    two = free_evolve(free_evolve(s, ["a", "b"], t1), ["a", "b"], t2)
    one = free_evolve(s, ["a", "b"], t1 + t2)
    assert np.max(np.abs(two.rho - one.rho)) <= 1e-12


# -- ownership ---------------------------------------------------------------------

def test_three_spin_hand_over():
    s = tensor(tensor(plus_state("s1"), plus_state("s2")), plus_state("s3"))
    s = transfer(s, "s2", C, 1.0)
    assert s.owner("s2") == C and s.ledger.owned_by(A) == ["s1", "s3"]
    s = transfer(s, "s2", B, 2.5)
    assert s.owner("s2") == B
    assert [(t.time, t.old, t.new) for t in s.ledger.history] == [(1.0, A, C), (2.5, C, B)]


def test_arrival_before_departure_rejected():
    s = transfer(plus_state("s"), "s", C, 2.0)
    with pytest.raises(OwnershipError):
        transfer(s, "s", B, 1.0)


def test_direct_hand_over_rejected():
    with pytest.raises(OwnershipError):
        transfer(plus_state("s"), "s", B, 0.0)


def test_transfer_leaves_rho():
    s = plus_state("s")
    assert np.array_equal(transfer(s, "s", C, 0.0).rho, s.rho)


# -- misc ------------------------------------------------------------------------

def test_replace_is_local():
    rng = np.random.default_rng(5)
    ra, rb = random_density(2, rng), random_density(2, rng)
    s = two_qubits(np.kron(ra, rb), (A, B))
    out = replace(s, ["q2"], np.diag([0, 1]), actor=B)
    assert np.allclose(out.rho, np.kron(ra, np.diag([0, 1])), atol=1e-12)


def test_permute_round_trip():
    rng = np.random.default_rng(6)
    s = two_qubits(random_density(4, rng))
    back = permute(permute(s, ["q2", "q1"]), ["q1", "q2"])
    assert np.allclose(back.rho, s.rho)


def test_check_density_rejects():
    with pytest.raises(StateError):
        check_density(np.diag([1.5, -0.5]))
    with pytest.raises(StateError):
        check_density(np.array([[0.5, 1], [0, 0.5]]))
    with pytest.raises(StateError):
        check_density(np.eye(2))


def test_entropy_of_bell_half():
    assert np.isclose(von_neumann_entropy(np.eye(2) / 2), 1.0)
    assert abs(von_neumann_entropy(np.diag([1.0, 0.0]))) < 1e-12


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_operations_keep_valid_state(seed):
    rng = np.random.default_rng(seed)
    s = two_qubits(random_density(4, rng), (A, B))
    s = embed_unitary(s, ["q1"], random_unitary(2, rng))
    s = free_evolve(s, ["q1", "q2"], rng.normal())
    s = transfer(s, "q1", C, 0.0)
    check_density(s.rho, trace_tol=1e-10)
    check_density(partial_trace(s, ["q2"]).rho, trace_tol=1e-10)
