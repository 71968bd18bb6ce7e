"""Multipartite density matrices with an ownership ledger.

Every subsystem belongs to exactly one of Alice, Bob or the Channel at any
instant. Local operations check ownership so that an actor can only touch
what they hold, and hand-overs must pass through the channel.

Conventions: hbar = 1, frequencies in rad/time, dense matrices, basis of
each subsystem ordered by energy sector then degeneracy label.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, Mapping, Sequence

import numpy as np

from . import kernels

HERMITIAN_TOL = 1e-12
TRACE_TOL = 1e-12
PSD_TOL = 1e-10
UNITARY_TOL = 1e-10


class Owner(str, Enum):
    ALICE = "Alice"
    CHANNEL = "Channel"
    BOB = "Bob"


ACTORS = (Owner.ALICE, Owner.BOB)

_LEGAL_MOVES = {
    (Owner.ALICE, Owner.CHANNEL),
    (Owner.CHANNEL, Owner.BOB),
    (Owner.BOB, Owner.CHANNEL),
    (Owner.CHANNEL, Owner.ALICE),
}


class StateError(ValueError):
    """Invalid density matrix, dimension mismatch or unknown subsystem."""


class OwnershipError(ValueError):
    """An operation violated who-holds-what at the time it was attempted."""


@dataclass(frozen=True)
class EnergySpec:
    """Energy eigenstructure of one subsystem.

    ``levels`` lists ``(omega, degeneracy)`` pairs with strictly increasing
    ``omega``. The basis index runs over sectors in that order and, inside a
    sector, over the degeneracy label.
    """

    levels: tuple[tuple[float, int], ...]

    def __post_init__(self):
        levels = tuple((float(w), int(g)) for w, g in self.levels)
        if not levels:
            raise StateError("EnergySpec needs at least one level")
        if any(g < 1 for _, g in levels):
            raise StateError("degeneracies must be positive")
        omegas = [w for w, _ in levels]
        if any(b <= a for a, b in zip(omegas, omegas[1:])):
            raise StateError(f"level frequencies must be strictly increasing, got {omegas}")
        object.__setattr__(self, "levels", levels)

    @classmethod
    def qubit(cls, omega: float) -> EnergySpec:
        """Two nondegenerate levels at 0 and ``omega``."""
        return cls(((0.0, 1), (omega, 1)))

    @classmethod
    def degenerate(cls, omega: float, degeneracy: int) -> EnergySpec:
        return cls(((omega, degeneracy),))

    @classmethod
    def ladder(cls, omegas: Iterable[float]) -> EnergySpec:
        return cls(tuple((w, 1) for w in omegas))

    @classmethod
    def trivial(cls) -> EnergySpec:
        return cls(((0.0, 1),))

    @property
    def dim(self) -> int:
        return sum(g for _, g in self.levels)

    @property
    def n_sectors(self) -> int:
        return len(self.levels)

    @property
    def sector_omegas(self) -> np.ndarray:
        return np.array([w for w, _ in self.levels])

    @property
    def sector_of(self) -> np.ndarray:
        """Sector index of each basis vector."""
        return np.repeat(np.arange(self.n_sectors), [g for _, g in self.levels])

    @property
    def omegas(self) -> np.ndarray:
        """Frequency of each basis vector."""
        return self.sector_omegas[self.sector_of]

    def projector(self, sector: int) -> np.ndarray:
        return np.diag((self.sector_of == sector).astype(complex))


@dataclass(frozen=True)
class Transfer:
    time: float
    subsystem: str
    old: Owner
    new: Owner


@dataclass(frozen=True)
class OwnershipLedger:
    assignments: Mapping[str, Owner]
    history: tuple[Transfer, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "assignments", {k: Owner(v) for k, v in self.assignments.items()})

    def owner(self, sid: str) -> Owner:
        try:
            return self.assignments[sid]
        except KeyError:
            raise StateError(f"unknown subsystem {sid!r}") from None

    def owned_by(self, owner: Owner) -> list[str]:
        return [k for k, v in self.assignments.items() if v == owner]

    def last_move(self, sid: str) -> Transfer | None:
        for t in reversed(self.history):
            if t.subsystem == sid:
                return t
        return None

    def transfer(self, sid: str, new_owner: Owner, at: float) -> OwnershipLedger:
        new_owner = Owner(new_owner)
        old = self.owner(sid)
        if (old, new_owner) not in _LEGAL_MOVES:
            raise OwnershipError(
                f"illegal transfer of {sid!r}: {old.value} -> {new_owner.value}"
                " (hand-overs must pass through the Channel)"
            )
        prev = self.last_move(sid)
        if prev is not None and at < prev.time:
            raise OwnershipError(
                f"transfer of {sid!r} at t={at} precedes its previous move at t={prev.time}"
            )
        assignments = dict(self.assignments)
        assignments[sid] = new_owner
        return OwnershipLedger(assignments, self.history + (Transfer(at, sid, old, new_owner),))

    def merge(self, other: OwnershipLedger) -> OwnershipLedger:
        clash = set(self.assignments) & set(other.assignments)
        if clash:
            raise StateError(f"duplicate subsystem ids: {sorted(clash)}")
        history = tuple(sorted(self.history + other.history, key=lambda t: t.time))
        return OwnershipLedger({**self.assignments, **other.assignments}, history)

    def restrict(self, keep: Iterable[str]) -> OwnershipLedger:
        keep = set(keep)
        return OwnershipLedger(
            {k: v for k, v in self.assignments.items() if k in keep},
            tuple(t for t in self.history if t.subsystem in keep),
        )


@dataclass(frozen=True)
class Subsystem:
    id: str
    spec: EnergySpec

    @property
    def dim(self) -> int:
        return self.spec.dim


def check_density(rho: np.ndarray, *, trace_tol: float = TRACE_TOL) -> None:
    """Raise StateError unless ``rho`` is Hermitian, unit trace and PSD."""
    rho = np.asarray(rho)
    if rho.ndim != 2 or rho.shape[0] != rho.shape[1]:
        raise StateError(f"density matrix must be square, got shape {rho.shape}")
    herm = np.max(np.abs(rho - rho.conj().T)) if rho.size else 0.0
    if herm > HERMITIAN_TOL:
        raise StateError(f"density matrix not Hermitian (deviation {herm:.3g})")
    tr = np.trace(rho).real
    if abs(tr - 1) > trace_tol:
        raise StateError(f"density matrix trace {tr!r} differs from 1")
    lam = np.linalg.eigvalsh((rho + rho.conj().T) / 2).min()
    if lam < -PSD_TOL:
        raise StateError(f"density matrix has negative eigenvalue {lam:.3g}")


def hermitize(rho: np.ndarray) -> np.ndarray:
    return (rho + np.swapaxes(rho.conj(), -1, -2)) / 2


class CompositeState:
    """Density matrix over an ordered list of subsystems plus their owners.

    Treated as a value: every operation below returns a new instance.
    """

    def __init__(self, subsystems: Sequence[Subsystem], rho, ledger: OwnershipLedger, *, check=True):
        self.subsystems = tuple(subsystems)
        ids = [s.id for s in self.subsystems]
        if len(set(ids)) != len(ids):
            raise StateError(f"duplicate subsystem ids in {ids}")
        if set(ids) != set(ledger.assignments):
            raise StateError("ledger does not cover exactly the subsystems of the state")
        self.rho = np.array(rho, dtype=complex)
        if self.rho.shape != (self.dim, self.dim):
            raise StateError(f"rho has shape {self.rho.shape}, expected {(self.dim, self.dim)}")
        self.ledger = ledger
        if check:
            check_density(self.rho)

    @property
    def ids(self) -> list[str]:
        return [s.id for s in self.subsystems]

    @property
    def dims(self) -> list[int]:
        return [s.dim for s in self.subsystems]

    @property
    def dim(self) -> int:
        return int(np.prod(self.dims, dtype=int))

    def position(self, sid: str) -> int:
        try:
            return self.ids.index(sid)
        except ValueError:
            raise StateError(f"unknown subsystem {sid!r}") from None

    def spec(self, sid: str) -> EnergySpec:
        return self.subsystems[self.position(sid)].spec

    def owner(self, sid: str) -> Owner:
        return self.ledger.owner(sid)

    def _with(self, rho=None, ledger=None, check=False) -> CompositeState:
        return CompositeState(
            self.subsystems,
            self.rho if rho is None else rho,
            self.ledger if ledger is None else ledger,
            check=check,
        )

    def __repr__(self):
        parts = ", ".join(f"{s.id}:{s.dim}@{self.owner(s.id).value}" for s in self.subsystems)
        return f"CompositeState({parts})"


# -- constructors ----------------------------------------------------------

def from_vector(subsystems: Sequence[Subsystem], vector, owners: Mapping[str, Owner]) -> CompositeState:
    psi = np.asarray(vector, dtype=complex).ravel()
    norm = np.linalg.norm(psi)
    if norm == 0:
        raise StateError("zero state vector")
    psi = psi / norm
    return CompositeState(subsystems, np.outer(psi, psi.conj()), OwnershipLedger(dict(owners)))


def basis_state(sid: str, spec: EnergySpec, owner: Owner, index: int = 0) -> CompositeState:
    psi = np.zeros(spec.dim)
    psi[index] = 1.0
    return from_vector([Subsystem(sid, spec)], psi, {sid: owner})


def trivial_state() -> np.ndarray:
    return np.ones((1, 1), dtype=complex)


# -- array helpers (batch-aware: a leading axis is allowed) ----------------

def lift_index(dims: Sequence[int], pos: int) -> np.ndarray:
    """Local basis index of subsystem ``pos`` for every full-space index."""
    stride = int(np.prod(dims[pos + 1:], dtype=int))
    return (np.arange(int(np.prod(dims, dtype=int))) // stride) % dims[pos]


def reduce_matrix(rho: np.ndarray, dims: Sequence[int], keep: Sequence[int]) -> np.ndarray:
    """Partial trace keeping the subsystem positions ``keep`` (original order)."""
    keep = sorted(set(keep))
    n = len(dims)
    batch = rho.shape[:-2]
    t = rho.reshape(batch + tuple(dims) + tuple(dims))
    letters = "abcdefghijklmnopqrstuvwxyz"
    rows = list(letters[:n])
    cols = [letters[n + i] if i in keep else rows[i] for i in range(n)]
    out = "".join(rows[i] for i in keep) + "".join(cols[i] for i in keep)
    expr = "..." + "".join(rows) + "".join(cols) + "->..." + out
    kd = int(np.prod([dims[i] for i in keep], dtype=int))
    return np.einsum(expr, t).reshape(batch + (kd, kd))


def embed_operator(dims: Sequence[int], positions: Sequence[int], op: np.ndarray) -> np.ndarray:
    """Lift ``op`` acting on ``positions`` (in that order) to the full space."""
    n = len(dims)
    positions = list(positions)
    rest = [i for i in range(n) if i not in positions]
    perm = positions + rest
    rest_dim = int(np.prod([dims[i] for i in rest], dtype=int))
    full = np.kron(op, np.eye(rest_dim))
    pdims = [dims[i] for i in perm]
    inv = [perm.index(i) for i in range(n)]
    t = full.reshape(pdims + pdims).transpose(inv + [n + i for i in inv])
    d = int(np.prod(dims, dtype=int))
    return t.reshape(d, d)


def energy_vector(dims: Sequence[int], specs: Sequence[EnergySpec], positions: Iterable[int]) -> np.ndarray:
    """Total frequency of each full-space basis vector, summed over ``positions``."""
    e = np.zeros(int(np.prod(dims, dtype=int)))
    for p in positions:
        e += specs[p].omegas[lift_index(dims, p)]
    return e


def is_unitary(u: np.ndarray, tol: float = UNITARY_TOL) -> bool:
    u = np.asarray(u)
    return u.ndim == 2 and u.shape[0] == u.shape[1] and np.allclose(u @ u.conj().T, np.eye(len(u)), atol=tol, rtol=0)


def von_neumann_entropy(rho: np.ndarray, base: float = 2.0) -> float:
    lam = np.linalg.eigvalsh(hermitize(np.asarray(rho)))
    lam = lam[lam > 1e-15]
    return float(-(lam * np.log(lam)).sum() / np.log(base))


# -- operations --------------------------------------------------------------

def tensor(a: CompositeState, b: CompositeState) -> CompositeState:
    ledger = a.ledger.merge(b.ledger)
    return CompositeState(a.subsystems + b.subsystems, np.kron(a.rho, b.rho), ledger, check=False)


def partial_trace(s: CompositeState, keep: Iterable[str]) -> CompositeState:
    keep = list(keep)
    if not keep:
        raise StateError("keep must name at least one subsystem")
    pos = sorted(s.position(k) for k in keep)
    rho = reduce_matrix(s.rho, s.dims, pos)
    subs = [s.subsystems[p] for p in pos]
    return CompositeState(subs, rho, s.ledger.restrict(x.id for x in subs), check=False)


def _common_owner(s: CompositeState, targets: Sequence[str], actor: Owner | None) -> Owner:
    owners = {s.owner(t) for t in targets}
    if len(owners) != 1:
        raise OwnershipError(f"targets {list(targets)} are held by different parties: {sorted(o.value for o in owners)}")
    owner = owners.pop()
    if owner == Owner.CHANNEL:
        raise OwnershipError(f"targets {list(targets)} are in transit; no party can act on them")
    if actor is not None and owner != Owner(actor):
        raise OwnershipError(f"{Owner(actor).value} cannot act on {list(targets)} held by {owner.value}")
    return owner


def embed_unitary(s: CompositeState, targets: Sequence[str], u, actor: Owner | None = None) -> CompositeState:
    """Apply ``u`` to ``targets`` (in the given order), identity elsewhere."""
    targets = list(targets)
    if len(set(targets)) != len(targets):
        raise StateError(f"repeated target in {targets}")
    u = np.asarray(u, dtype=complex)
    pos = [s.position(t) for t in targets]
    need = int(np.prod([s.dims[p] for p in pos], dtype=int))
    if u.shape != (need, need):
        raise StateError(f"unitary of shape {u.shape} does not match target dimension {need}")
    if not is_unitary(u):
        raise StateError("operator is not unitary within 1e-10")
    _common_owner(s, targets, actor)
    full = embed_operator(s.dims, pos, u)
    return s._with(rho=full @ s.rho @ full.conj().T)


def free_evolve(s: CompositeState, targets: Iterable[str], dt: float, actor: Owner | None = None) -> CompositeState:
    """Apply exp(-i sum_e P_e omega_e dt) on each target."""
    targets = list(targets)
    if actor is not None and targets:
        _common_owner(s, targets, actor)
    pos = [s.position(t) for t in targets]
    specs = [x.spec for x in s.subsystems]
    e = energy_vector(s.dims, specs, pos)
    rho = s.rho.copy()[None]
    kernels.phase_conjugate(rho, np.ascontiguousarray((e * dt)[None]))
    return s._with(rho=rho[0])


def transfer(s: CompositeState, sid: str, new_owner: Owner, at: float) -> CompositeState:
    return s._with(ledger=s.ledger.transfer(sid, new_owner, at))


def permute(s: CompositeState, order: Sequence[str]) -> CompositeState:
    order = list(order)
    if sorted(order) != sorted(s.ids):
        raise StateError(f"{order} is not a permutation of {s.ids}")
    perm = [s.position(k) for k in order]
    n = len(perm)
    dims = s.dims
    t = s.rho.reshape(dims + dims).transpose(perm + [n + p for p in perm])
    subs = [s.subsystems[p] for p in perm]
    return CompositeState(subs, t.reshape(s.dim, s.dim), s.ledger, check=False)


def replace(s: CompositeState, targets: Sequence[str], sigma, actor: Owner | None = None) -> CompositeState:
    """Discard ``targets`` and put them in the fresh joint state ``sigma``.

    This is a local preparation: the rest of the system is untouched.
    """
    targets = list(targets)
    _common_owner(s, targets, actor)
    sigma = np.asarray(sigma, dtype=complex)
    pos = [s.position(t) for t in targets]
    need = int(np.prod([s.dims[p] for p in pos], dtype=int))
    if sigma.shape != (need, need):
        raise StateError(f"prepared state has shape {sigma.shape}, expected {(need, need)}")
    check_density(sigma, trace_tol=1e-10)
    rest = [i for i in range(len(s.dims)) if i not in pos]
    order = [s.subsystems[p] for p in rest] + [s.subsystems[p] for p in pos]
    rest_rho = reduce_matrix(s.rho, s.dims, rest) if rest else trivial_state()
    joined = CompositeState(order, np.kron(rest_rho, sigma), s.ledger, check=False)
    return permute(joined, s.ids)
