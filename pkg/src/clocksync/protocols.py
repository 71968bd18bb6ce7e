"""Synchronization scenarios and the engine that runs them.

Actors schedule actions in their own proper time (PTI). The engine turns
PTIs into absolute times using the hidden clock origins in
:class:`ClockFrame`, interleaves both actors' events, free-evolves every
subsystem between events and applies the channel to whatever is in
transit. What comes out, a :class:`RunRecord`, only ever carries PTIs.

Two modes share one engine:

* exact: the channel is the averaged map, measurements contribute their
  full Born distribution, and outcome-dependent feed-forward splits the run
  into weighted branches;
* sampled: a batch of independent shots, each with its own transit phases
  and sampled outcomes, evolved in lockstep.

Events can be pinned to a PTI or anchored to the arrival of a subsystem
(``after=<id>``), in which case ``proper_time`` is an offset from that
arrival. Receive events are always anchored.
"""
from __future__ import annotations

import heapq
import itertools
from dataclasses import dataclass, field, replace as dc_replace
from typing import Any, Iterable, Mapping, Sequence, Union

import numpy as np

from . import kernels
from .channel import FullyRandom, Noiseless, PhaseModel, transit_factor
from .gates import basis_projectors, resolve_basis, resolve_state, resolve_unitary
from .hilbert import (
    CompositeState,
    EnergySpec,
    Owner,
    OwnershipError,
    OwnershipLedger,
    StateError,
    Subsystem,
    embed_operator,
    energy_vector,
    hermitize,
    lift_index,
    reduce_matrix,
)

CHUNK = 8192
IMPOSSIBLE = 1e-14


class ScenarioError(RuntimeError):
    """A timeline that cannot be run; carries the offending event if known."""

    def __init__(self, message, event_index=None, actor=None):
        where = ""
        if event_index is not None:
            where = f"event {event_index}"
            if actor is not None:
                where += f" ({Owner(actor).value})"
            where += ": "
        super().__init__(where + message)
        self.event_index = event_index
        self.actor = actor


@dataclass(frozen=True)
class ClockFrame:
    """Absolute origins of the two clocks; never visible to the actors."""

    t0_A: float = 0.0
    t0_B: float = 0.0

    @classmethod
    def from_delta(cls, delta: float, t0_A: float = 0.0) -> ClockFrame:
        return cls(t0_A, t0_A + delta)

    @property
    def delta(self) -> float:
        return self.t0_B - self.t0_A

    def origin(self, actor: Owner) -> float:
        return self.t0_A if Owner(actor) == Owner.ALICE else self.t0_B

    def shifted(self, by: float) -> ClockFrame:
        return ClockFrame(self.t0_A + by, self.t0_B + by)


# -- actions ---------------------------------------------------------------

@dataclass(frozen=True)
class Prepare:
    targets: tuple
    state: Any = "ground"


@dataclass(frozen=True)
class ApplyLocal:
    targets: tuple
    unitary: Any
    condition: tuple | None = None  # (measurement label, outcome name)


@dataclass(frozen=True)
class Send:
    subsystem: str
    transit: float
    abandon: bool = False


@dataclass(frozen=True)
class Receive:
    subsystem: str


@dataclass(frozen=True)
class Measure:
    """Projective measurement; several bases means one is picked at random.

    With ``bases=("X", "Y")`` each basis is used with probability 1/2, which
    is the two-outcome-per-basis POVM a clock reader uses to get both
    quadratures from single shots.
    """

    target: str
    bases: tuple = ("Z",)
    label: str = "m"


@dataclass(frozen=True)
class PostSelect:
    target: str
    outcome: int
    basis: Any = "Z"
    label: str = "postselect"


Action = Union[Prepare, ApplyLocal, Send, Receive, Measure, PostSelect]


@dataclass(frozen=True)
class Event:
    actor: Owner
    proper_time: float
    action: Action
    after: str | None = None
    occurrence: int = 0

    def __post_init__(self):
        object.__setattr__(self, "actor", Owner(self.actor))
        if self.actor == Owner.CHANNEL:
            raise ScenarioError("the Channel is not an actor")
        if isinstance(self.action, Receive) and self.after is None:
            object.__setattr__(self, "after", self.action.subsystem)


@dataclass(frozen=True)
class SubsystemDecl:
    id: str
    spec: EnergySpec
    owner: Owner

    def __post_init__(self):
        object.__setattr__(self, "owner", Owner(self.owner))


@dataclass(frozen=True)
class Timeline:
    subsystems: tuple
    events: tuple
    channel: PhaseModel = Noiseless()
    frame: ClockFrame = ClockFrame()
    horizon_A: float | None = None
    horizon_B: float | None = None

    def __post_init__(self):
        object.__setattr__(self, "subsystems", tuple(self.subsystems))
        object.__setattr__(self, "events", tuple(self.events))

    def with_delta(self, delta: float) -> Timeline:
        return dc_replace(self, frame=ClockFrame.from_delta(delta, self.frame.t0_A))

    def with_channel(self, model: PhaseModel) -> Timeline:
        return dc_replace(self, channel=model)

    def with_frame(self, frame: ClockFrame) -> Timeline:
        return dc_replace(self, frame=frame)

    def horizon(self, actor: Owner) -> float | None:
        return self.horizon_A if Owner(actor) == Owner.ALICE else self.horizon_B

    def decl(self, sid: str) -> SubsystemDecl:
        for d in self.subsystems:
            if d.id == sid:
                return d
        raise ScenarioError(f"unknown subsystem {sid!r}")

    def labels(self) -> list[str]:
        return [e.action.label for e in self.events if isinstance(e.action, (Measure, PostSelect))]

    def validate(self) -> None:
        """Raise ScenarioError listing every structural problem found."""
        problems = []
        ids = [d.id for d in self.subsystems]
        if len(set(ids)) != len(ids):
            problems.append(f"duplicate subsystem ids in {ids}")
        known = set(ids)
        last_time = {}
        labels = set()
        measure_labels = {}
        for i, ev in enumerate(self.events):
            a = ev.action
            touched = _touched(a)
            for sid in touched:
                if sid not in known:
                    problems.append(f"event {i}: unknown subsystem {sid!r}")
            if ev.after is not None and ev.after not in known:
                problems.append(f"event {i}: anchor {ev.after!r} is not a subsystem")
            if not ev.proper_time >= 0:
                problems.append(f"event {i}: proper time / offset must be >= 0, got {ev.proper_time}")
            if ev.after is None:
                prev = last_time.get(ev.actor)
                if prev is not None and ev.proper_time < prev:
                    problems.append(
                        f"event {i}: {ev.actor.value}'s proper times must be non-decreasing"
                        f" ({ev.proper_time} after {prev})"
                    )
                last_time[ev.actor] = ev.proper_time
            if isinstance(a, Send) and not a.transit >= 0:
                problems.append(f"event {i}: negative transit duration {a.transit}")
            if isinstance(a, (Measure, PostSelect)):
                if a.label in labels:
                    problems.append(f"event {i}: duplicate record label {a.label!r}")
                labels.add(a.label)
            if isinstance(a, Measure):
                measure_labels[a.label] = i
        for i, ev in enumerate(self.events):
            cond = getattr(ev.action, "condition", None)
            if cond is not None:
                lab = cond[0]
                if lab not in measure_labels:
                    problems.append(f"event {i}: condition refers to unknown measurement {lab!r}")
                elif measure_labels[lab] > i:
                    problems.append(f"event {i}: condition on {lab!r} which is listed later")
        # every non-abandoned send has exactly one matching receive by the other actor
        for sid in known:
            for sender in (Owner.ALICE, Owner.BOB):
                receiver = _other(sender)
                n_send = sum(
                    1 for e in self.events
                    if e.actor == sender and isinstance(e.action, Send)
                    and e.action.subsystem == sid and not e.action.abandon
                )
                recv = [e for e in self.events if e.actor == receiver and isinstance(e.action, Receive) and e.action.subsystem == sid]
                if len(recv) != n_send:
                    problems.append(
                        f"{sid!r}: {n_send} send(s) by {sender.value} but {len(recv)} receive(s) by {receiver.value}"
                    )
                occ = sorted(e.occurrence for e in recv)
                if occ != list(range(len(recv))):
                    problems.append(f"{sid!r}: receive occurrences by {receiver.value} must be 0..{len(recv) - 1}")
        if problems:
            raise ScenarioError("; ".join(problems))


def _other(actor: Owner) -> Owner:
    return Owner.BOB if actor == Owner.ALICE else Owner.ALICE


def _touched(action) -> list[str]:
    if isinstance(action, (Prepare, ApplyLocal)):
        return list(action.targets)
    if isinstance(action, (Send, Receive)):
        return [action.subsystem]
    return [action.target]


# -- records -----------------------------------------------------------------

@dataclass(frozen=True)
class OutcomeRow:
    actor: str
    label: str
    pti: float
    outcome: str
    probability: float


@dataclass(frozen=True)
class Stamp:
    actor: str
    label: str
    pti: float


@dataclass(frozen=True, eq=False)
class RunRecord:
    """What the actors end up with: PTIs, outcomes and their own states.

    No absolute time and no clock offset appears here by construction.
    """

    outcomes: tuple
    stamps: tuple
    rho_A: np.ndarray
    rho_B: np.ndarray
    ids_A: tuple
    ids_B: tuple
    survival_probability: float = 1.0
    discarded: bool = False

    def distribution(self, label: str) -> dict:
        return {r.outcome: r.probability for r in self.outcomes if r.label == label}

    def outcome(self, label: str) -> str:
        rows = [r for r in self.outcomes if r.label == label]
        if len(rows) != 1:
            raise KeyError(f"{label!r} has {len(rows)} rows; use distribution() for exact runs")
        return rows[0].outcome

    def stamp(self, actor, label: str) -> float:
        actor = Owner(actor).value
        for s in self.stamps:
            if s.actor == actor and s.label == label:
                return s.pti
        raise KeyError(f"no stamp {label!r} for {actor}")

    def state(self, actor) -> np.ndarray:
        return self.rho_A if Owner(actor) == Owner.ALICE else self.rho_B

    def to_dict(self) -> dict:
        return {
            "outcomes": [vars(r) for r in self.outcomes],
            "stamps": [vars(s) for s in self.stamps],
            "rho_A": {"ids": list(self.ids_A), "matrix": _pairs(self.rho_A)},
            "rho_B": {"ids": list(self.ids_B), "matrix": _pairs(self.rho_B)},
            "survival_probability": self.survival_probability,
            "discarded": self.discarded,
        }


def _pairs(m):
    return [[[float(z.real), float(z.imag)] for z in row] for row in np.asarray(m)]


@dataclass(frozen=True, eq=False)
class ShotBatch:
    """Columnar results of a sampled run (one entry per shot)."""

    outcome_names: Mapping[str, tuple]
    outcome_index: Mapping[str, np.ndarray]
    outcome_prob: Mapping[str, np.ndarray]
    outcome_meta: Mapping[str, tuple]  # label -> (actor, pti array)
    stamps: tuple  # (actor, label, pti array)
    rho_A: np.ndarray
    rho_B: np.ndarray
    ids_A: tuple
    ids_B: tuple
    survival: np.ndarray
    discarded: np.ndarray

    @property
    def shots(self) -> int:
        return len(self.survival)

    def outcomes(self, label: str) -> list[str]:
        names = self.outcome_names[label]
        return [names[k] for k in self.outcome_index[label]]

    def counts(self, label: str, kept_only: bool = True) -> dict:
        names = self.outcome_names[label]
        idx = self.outcome_index[label]
        if kept_only:
            idx = idx[~self.discarded]
        c = np.bincount(idx, minlength=len(names))
        return {n: int(k) for n, k in zip(names, c)}

    def stamp(self, actor, label: str) -> np.ndarray:
        actor = Owner(actor).value
        for a, lab, arr in self.stamps:
            if a == actor and lab == label:
                return arr
        raise KeyError(f"no stamp {label!r} for {actor}")

    def records(self) -> list[RunRecord]:
        out = []
        for b in range(self.shots):
            rows = []
            for lab, names in self.outcome_names.items():
                actor, pti = self.outcome_meta[lab]
                rows.append(OutcomeRow(actor, lab, float(pti[b]), names[self.outcome_index[lab][b]], float(self.outcome_prob[lab][b])))
            stamps = tuple(Stamp(a, lab, float(arr[b])) for a, lab, arr in self.stamps)
            out.append(RunRecord(tuple(rows), stamps, self.rho_A[b], self.rho_B[b], self.ids_A, self.ids_B,
                                 float(self.survival[b]), bool(self.discarded[b])))
        return out


# -- engine ------------------------------------------------------------------

@dataclass
class _Transit:
    sender: Owner
    receiver: Owner
    t_send: float
    phis: np.ndarray | None  # (B, dim) sampled extra phases per basis vector
    lag: np.ndarray  # (B,) cumulative lag once arrived
    arrived: bool = False


class _Engine:
    def __init__(self, tl: Timeline, *, sampled: bool, batch: int = 1, rng=None,
                 tie_break: str = "alice_first", branch_all: bool = False):
        tl.validate()
        self.tl = tl
        self.sampled = sampled
        self.rng = rng
        self.branch_all = branch_all
        self.subs = [Subsystem(d.id, d.spec) for d in tl.subsystems]
        self.ids = [s.id for s in self.subs]
        self.dims = [s.dim for s in self.subs]
        self.specs = [s.spec for s in self.subs]
        self.D = int(np.prod(self.dims, dtype=int))
        self.B = batch
        self.rho = np.zeros((batch, self.D, self.D), dtype=complex)
        self.rho[:, 0, 0] = 1.0
        self.weights = np.ones(batch) / batch if not sampled else np.ones(batch)
        self.ledger = OwnershipLedger({d.id: d.owner for d in tl.subsystems})
        self.now = None
        self.transits: dict[str, _Transit] = {}
        self.lags = {sid: np.zeros(batch) for sid in self.ids}
        self.arrivals: dict[tuple, int] = {}
        self.anchor_lag: dict[tuple, np.ndarray] = {}
        ranks = {Owner.ALICE: 2, Owner.BOB: 3} if tie_break == "alice_first" else {Owner.ALICE: 3, Owner.BOB: 2}
        self.ranks = ranks
        self.queue = []
        self.seq = itertools.count()
        self.pending_anchor: dict[tuple, list] = {}
        self.executed = set()
        self.remaining = {Owner.ALICE: 0, Owner.BOB: 0}
        # results
        self.out_names: dict[str, tuple] = {}
        self.out_index: dict[str, np.ndarray] = {}
        self.out_prob: dict[str, np.ndarray] = {}
        self.out_meta: dict[str, tuple] = {}
        self.exact_rows: list[OutcomeRow] = []
        self.stamps: list[tuple] = []
        self.snap: dict[Owner, tuple] = {}
        self.survival = np.ones(batch)
        self.discarded = np.zeros(batch, dtype=bool)
        self.referenced = {e.action.condition[0] for e in tl.events
                           if isinstance(e.action, ApplyLocal) and e.action.condition is not None}
        self._evec_cache = {}
        self._schedule()

    # scheduling
    def _push(self, time, rank, kind, payload):
        heapq.heappush(self.queue, (time, rank, next(self.seq), kind, payload))

    def _schedule(self):
        tl = self.tl
        for i, ev in enumerate(tl.events):
            self.remaining[ev.actor] += 1
            if ev.after is None:
                t = tl.frame.origin(ev.actor) + ev.proper_time
                self._push(t, self.ranks[ev.actor], "event", i)
            else:
                key = (ev.after, ev.actor, ev.occurrence)
                self.pending_anchor.setdefault(key, []).append(i)
        for actor in (Owner.ALICE, Owner.BOB):
            h = tl.horizon(actor)
            if h is not None:
                self._push(tl.frame.origin(actor) + h, 1, "snapshot", actor)
            elif self.remaining[actor] == 0:
                self._push(tl.frame.origin(actor), 1, "snapshot", actor)

    # state helpers
    def _evec(self):
        key = tuple(self.ledger.owner(s) == Owner.CHANNEL for s in self.ids)
        if key not in self._evec_cache:
            pos = [i for i, in_ch in enumerate(key) if not in_ch]
            self._evec_cache[key] = energy_vector(self.dims, self.specs, pos)
        return self._evec_cache[key]

    def _advance(self, t):
        if self.now is None:
            self.now = t
            return
        dt = t - self.now
        if dt < 0:
            raise ScenarioError(f"time went backwards ({self.now} -> {t})")
        if dt > 0:
            ph = np.broadcast_to(self._evec() * dt, (self.rho.shape[0], self.D))
            kernels.phase_conjugate(self.rho, np.ascontiguousarray(ph))
        self.now = t

    def _pti(self, actor, lag=None):
        base = self.now - self.tl.frame.origin(actor)
        if lag is None:
            return np.full(self.rho.shape[0], base)
        return base + lag

    def _full(self, targets, op):
        return embed_operator(self.dims, [self.ids.index(t) for t in targets], op)

    def _check_owner(self, idx, actor, targets):
        for t in targets:
            own = self.ledger.owner(t)
            if own != actor:
                where = "in transit" if own == Owner.CHANNEL else f"held by {own.value}"
                raise ScenarioError(f"{actor.value} cannot act on {t!r}: it is {where}", idx, actor)

    def _reduced(self, actor):
        pos = [i for i, s in enumerate(self.ids) if self.ledger.owner(s) == actor]
        red = reduce_matrix(self.rho, self.dims, pos)
        return red, tuple(self.ids[p] for p in pos)

    def _take_snapshot(self, actor):
        red, ids = self._reduced(actor)
        if self.sampled:
            self.snap[actor] = (red, ids)
        else:
            self.snap[actor] = (hermitize(np.einsum("b,bij->ij", self.weights, red)), ids)

    # main loop
    def run(self):
        while self.queue:
            t, _, _, kind, payload = heapq.heappop(self.queue)
            self._advance(t)
            if kind == "arrival":
                self._arrive(*payload)
            elif kind == "snapshot":
                self._take_snapshot(payload)
            else:
                self._execute(payload)
        missing = [i for i, e in enumerate(self.tl.events) if i not in self.executed]
        if missing:
            i = missing[0]
            ev = self.tl.events[i]
            raise ScenarioError(
                f"never executed: waits for arrival #{ev.occurrence} of {ev.after!r} at {ev.actor.value}", i, ev.actor
            )
        for actor in (Owner.ALICE, Owner.BOB):
            if actor not in self.snap:
                self._take_snapshot(actor)
        return self

    def _arrive(self, sid, receiver):
        tr = self.transits[sid]
        tr.arrived = True
        k = self.arrivals.get((sid, receiver), 0)
        self.arrivals[(sid, receiver)] = k + 1
        key = (sid, receiver, k)
        self.anchor_lag[key] = tr.lag
        for i in self.pending_anchor.pop(key, []):
            ev = self.tl.events[i]
            self._push(self.now + ev.proper_time, self.ranks[ev.actor], "event", (i, key))

    def _execute(self, payload):
        if isinstance(payload, tuple):
            idx, anchor = payload
            lag = self.anchor_lag[anchor]
        else:
            idx, lag = payload, None
        ev = self.tl.events[idx]
        a = ev.action
        try:
            if isinstance(a, Prepare):
                self._prepare(idx, ev, a)
            elif isinstance(a, ApplyLocal):
                self._apply(idx, ev, a)
            elif isinstance(a, Send):
                self._send(idx, ev, a, lag)
            elif isinstance(a, Receive):
                self._receive(idx, ev, a)
            elif isinstance(a, Measure):
                self._measure(idx, ev, a, lag)
            elif isinstance(a, PostSelect):
                self._postselect(idx, ev, a, lag)
        except (StateError, OwnershipError) as exc:
            raise ScenarioError(str(exc), idx, ev.actor) from exc
        self.executed.add(idx)
        self.remaining[ev.actor] -= 1
        if self.remaining[ev.actor] == 0 and self.tl.horizon(ev.actor) is None:
            self._take_snapshot(ev.actor)

    # actions
    def _prepare(self, idx, ev, a):
        targets = list(a.targets)
        self._check_owner(idx, ev.actor, targets)
        pos = [self.ids.index(t) for t in targets]
        need = int(np.prod([self.dims[p] for p in pos], dtype=int))
        sigma = resolve_state(a.state, need)
        rest = [i for i in range(len(self.dims)) if i not in pos]
        rest_rho = reduce_matrix(self.rho, self.dims, rest)
        nb = self.rho.shape[0]
        joint = np.einsum("bij,kl->bikjl", rest_rho, sigma).reshape(nb, self.D, self.D)
        order = rest + pos
        n = len(order)
        odims = [self.dims[i] for i in order]
        inv = [order.index(i) for i in range(n)]
        t = joint.reshape((nb,) + tuple(odims) * 2).transpose([0] + [1 + i for i in inv] + [1 + n + i for i in inv])
        self.rho = np.ascontiguousarray(t.reshape(nb, self.D, self.D))

    def _apply(self, idx, ev, a):
        targets = list(a.targets)
        self._check_owner(idx, ev.actor, targets)
        need = int(np.prod([self.dims[self.ids.index(t)] for t in targets], dtype=int))
        full = self._full(targets, resolve_unitary(a.unitary, need))
        if a.condition is None:
            self.rho = full @ self.rho @ full.conj().T
            return
        label, outcome = a.condition
        names = self.out_names.get(label)
        if names is None or label not in self.out_index:
            raise ScenarioError(f"condition on {label!r} before it was measured", idx, ev.actor)
        if outcome not in names:
            raise ScenarioError(f"condition outcome {outcome!r} not among {list(names)}", idx, ev.actor)
        mask = self.out_index[label] == names.index(outcome)
        if mask.any():
            self.rho[mask] = full @ self.rho[mask] @ full.conj().T

    def _send(self, idx, ev, a, lag):
        sid = a.subsystem
        self._check_owner(idx, ev.actor, [sid])
        receiver = _other(ev.actor)
        self.ledger = self.ledger.transfer(sid, Owner.CHANNEL, self.now)
        self.stamps.append((ev.actor.value, f"send:{sid}", self._pti(ev.actor, lag)))
        nb = self.rho.shape[0]
        model = self.tl.channel
        spec = self.specs[self.ids.index(sid)]
        if self.sampled:
            phis, leg_lag = model.draw(spec.sector_omegas, nb, self.rng)
            phis = phis[:, spec.sector_of]
        else:
            phis, leg_lag = None, np.full(nb, float(model.mean_lag))
        self.transits[sid] = _Transit(ev.actor, receiver, self.now, phis, self.lags[sid] + leg_lag)
        if not a.abandon:
            self._push(self.now + a.transit, 0, "arrival", (sid, receiver))

    def _receive(self, idx, ev, a):
        sid = a.subsystem
        tr = self.transits.get(sid)
        if tr is None or not tr.arrived or self.ledger.owner(sid) != Owner.CHANNEL:
            raise ScenarioError(f"{sid!r} is not waiting in the channel", idx, ev.actor)
        residence = self.now - tr.t_send
        pos = self.ids.index(sid)
        spec = self.specs[pos]
        if self.sampled:
            local = spec.omegas[None, :] * residence + tr.phis
            full = local[:, lift_index(self.dims, pos)]
            kernels.phase_conjugate(self.rho, np.ascontiguousarray(full))
        else:
            left = int(np.prod(self.dims[:pos], dtype=int))
            right = int(np.prod(self.dims[pos + 1:], dtype=int))
            factor = np.ascontiguousarray(transit_factor(self.tl.channel, spec, residence))
            kernels.scale_axis(self.rho, factor, left, self.dims[pos], right)
            self.rho = hermitize(self.rho)
        self.ledger = self.ledger.transfer(sid, ev.actor, self.now)
        self.lags[sid] = tr.lag
        del self.transits[sid]
        self.stamps.append((ev.actor.value, f"receive:{sid}", self._pti(ev.actor, tr.lag)))

    def _effects(self, target, bases):
        dim = self.dims[self.ids.index(target)]
        names, projs = [], []
        w = 1.0 / len(bases)
        for spec in bases:
            bname, cols = resolve_basis(spec, dim)
            for k, p in enumerate(basis_projectors(cols)):
                names.append(f"{bname}:{k}")
                projs.append(self._full([target], p))
        return names, projs, w

    def _born(self, projs):
        # p[b, k] = tr(P_k rho_b); projectors are Hermitian
        return np.stack([np.einsum("ij,bji->b", p, self.rho).real for p in projs], axis=1)

    def _measure(self, idx, ev, a, lag):
        self._check_owner(idx, ev.actor, [a.target])
        names, projs, w = self._effects(a.target, a.bases)
        p = np.clip(self._born(projs) * w, 0.0, None)
        pti = self._pti(ev.actor, lag)
        nb = self.rho.shape[0]
        self.out_names[a.label] = tuple(names)
        self.out_meta[a.label] = (ev.actor.value, pti)
        if self.sampled:
            k = kernels.categorical_sample(np.ascontiguousarray(p), self.rng.random(nb))
            pk = p[np.arange(nb), k]
            new = np.empty_like(self.rho)
            for j, P in enumerate(projs):
                m = k == j
                if m.any():
                    new[m] = P @ self.rho[m] @ P / (pk[m, None, None] / w)
            self.rho = hermitize(new)
            self.out_index[a.label] = k
            self.out_prob[a.label] = pk
            return
        marg = self.weights @ p
        for j, name in enumerate(names):
            self.exact_rows.append(OutcomeRow(ev.actor.value, a.label, float(pti[0]), name, float(marg[j])))
        if a.label in self.referenced or self.branch_all:
            rhos, ws, ks = [], [], []
            for j, P in enumerate(projs):
                keep = p[:, j] > IMPOSSIBLE
                if not keep.any():
                    continue
                sub = P @ self.rho[keep] @ P / (p[keep, j][:, None, None] / w)
                rhos.append(sub)
                ws.append(self.weights[keep] * p[keep, j])
                ks.append((np.nonzero(keep)[0], j))
            self._rebranch(rhos, ws, ks, a.label)
        else:
            new = np.zeros_like(self.rho)
            for P in projs:
                new += w * (P @ self.rho @ P)
            self.rho = hermitize(new)

    def _rebranch(self, rhos, ws, ks, label):
        parents = np.concatenate([src for src, _ in ks])
        child = np.concatenate([np.full(len(src), j) for src, j in ks])
        self.rho = np.ascontiguousarray(np.concatenate(rhos))
        self.weights = np.concatenate(ws)
        self.weights = self.weights / self.weights.sum()
        for lab in list(self.out_index):
            self.out_index[lab] = self.out_index[lab][parents]
        self.survival = self.survival[parents]
        self.discarded = self.discarded[parents]
        self.lags = {k: v[parents] for k, v in self.lags.items()}
        for tr in self.transits.values():
            tr.lag = tr.lag[parents]
        self.anchor_lag = {k: v[parents] for k, v in self.anchor_lag.items()}
        self.stamps = [(a, lab, arr[parents]) for a, lab, arr in self.stamps]
        self.out_meta = {k: (a, arr[parents]) for k, (a, arr) in self.out_meta.items()}
        self.out_index[label] = child

    def _postselect(self, idx, ev, a, lag):
        self._check_owner(idx, ev.actor, [a.target])
        dim = self.dims[self.ids.index(a.target)]
        bname, cols = resolve_basis(a.basis, dim)
        if not 0 <= a.outcome < dim:
            raise ScenarioError(f"outcome {a.outcome} out of range for dimension {dim}", idx, ev.actor)
        P = self._full([a.target], basis_projectors(cols)[a.outcome])
        p = np.clip(self._born([P])[:, 0], 0.0, None)
        pti = self._pti(ev.actor, lag)
        name = f"{bname}:{a.outcome}"
        if self.sampled:
            alive = p > IMPOSSIBLE
            if not alive.any():
                raise ScenarioError(f"post-selection on {name} has zero probability in every shot", idx, ev.actor)
            survive = self.rng.random(len(p)) < p
            self.discarded |= ~survive
            self.survival *= p
            self.rho[alive] = P @ self.rho[alive] @ P / p[alive, None, None]
            self.rho = hermitize(self.rho)
            self.out_names[a.label] = (name,)
            self.out_index[a.label] = np.zeros(len(p), dtype=np.int64)
            self.out_prob[a.label] = p
            self.out_meta[a.label] = (ev.actor.value, pti)
            return
        total = float(self.weights @ p)
        if total <= IMPOSSIBLE:
            raise ScenarioError(f"post-selection on {name} is an impossible branch (probability {total:.3g})", idx, ev.actor)
        keep = p > IMPOSSIBLE
        self.rho = P @ self.rho[keep] @ P / p[keep, None, None]
        self.rho = np.ascontiguousarray(hermitize(self.rho))
        w = self.weights[keep] * p[keep]
        self.weights = w / w.sum()
        parents = np.nonzero(keep)[0]
        for lab in list(self.out_index):
            self.out_index[lab] = self.out_index[lab][parents]
        self.lags = {k: v[parents] for k, v in self.lags.items()}
        for tr in self.transits.values():
            tr.lag = tr.lag[parents]
        self.anchor_lag = {k: v[parents] for k, v in self.anchor_lag.items()}
        self.stamps = [(x, lab, arr[parents]) for x, lab, arr in self.stamps]
        self.out_meta = {k: (x, arr[parents]) for k, (x, arr) in self.out_meta.items()}
        self.survival = self.survival[parents] * total
        self.discarded = self.discarded[parents]
        self.exact_rows.append(OutcomeRow(ev.actor.value, a.label, float(pti[0]), name, total))

    # results
    def record(self) -> RunRecord:
        rho_A, ids_A = self.snap[Owner.ALICE]
        rho_B, ids_B = self.snap[Owner.BOB]
        stamps = tuple(Stamp(a, lab, float(arr[0])) for a, lab, arr in self.stamps)
        return RunRecord(tuple(self.exact_rows), stamps, rho_A, rho_B, ids_A, ids_B,
                         float(self.survival[0]) if len(self.survival) else 0.0)

    def batch(self) -> ShotBatch:
        rho_A, ids_A = self.snap[Owner.ALICE]
        rho_B, ids_B = self.snap[Owner.BOB]
        return ShotBatch(dict(self.out_names), dict(self.out_index), dict(self.out_prob), dict(self.out_meta),
                         tuple(self.stamps), rho_A, rho_B, ids_A, ids_B, self.survival, self.discarded)

    def composite(self) -> CompositeState:
        rho = hermitize(np.einsum("b,bij->ij", self.weights, self.rho))
        return CompositeState(self.subs, rho, self.ledger, check=False)


# -- public entry points -----------------------------------------------------

def run_exact(tl: Timeline, *, tie_break: str = "alice_first") -> RunRecord:
    """Averaged-channel run: full outcome distributions, no sampling."""
    return _Engine(tl, sampled=False, tie_break=tie_break).run().record()


def final_state(tl: Timeline, *, tie_break: str = "alice_first") -> CompositeState:
    """Global state at the last scheduled instant of an exact run.

    This is an engine-side view (it mixes both actors' systems at one
    absolute time), useful for checking what the actors ended up sharing.
    """
    return _Engine(tl, sampled=False, tie_break=tie_break).run().composite()


def outcome_distribution(tl: Timeline) -> dict:
    """Joint distribution of all measurement outcomes (post-selected runs renormalized).

    Keys are tuples of outcome names, one per Measure event in event-list
    order (not execution order, which can change with the frame).
    """
    eng = _Engine(tl, sampled=False, branch_all=True).run()
    labels = measure_labels(tl)
    dist: dict = {}
    for b, w in enumerate(eng.weights):
        key = tuple(eng.out_names[lab][eng.out_index[lab][b]] for lab in labels)
        dist[key] = dist.get(key, 0.0) + float(w)
    return dist


def measure_labels(tl: Timeline) -> list[str]:
    return [e.action.label for e in tl.events if isinstance(e.action, Measure)]


def _chunk_rng(seed, chunk):
    return np.random.default_rng(np.random.SeedSequence([int(seed), int(chunk)]))


def run_sampled_batch(tl: Timeline, shots: int, seed: int, *, tie_break: str = "alice_first") -> ShotBatch:
    """Sampled run returned column-wise; shots are drawn in fixed-size chunks
    whose random streams derive from ``(seed, chunk index)``."""
    if shots < 1:
        raise ValueError("shots must be >= 1")
    parts = []
    for c, start in enumerate(range(0, shots, CHUNK)):
        n = min(CHUNK, shots - start)
        eng = _Engine(tl, sampled=True, batch=n, rng=_chunk_rng(seed, c), tie_break=tie_break).run()
        parts.append(eng.batch())
    return _concat(parts)


def _concat(parts: Sequence[ShotBatch]) -> ShotBatch:
    if len(parts) == 1:
        return parts[0]
    p0 = parts[0]
    cat = np.concatenate
    return ShotBatch(
        p0.outcome_names,
        {k: cat([p.outcome_index[k] for p in parts]) for k in p0.outcome_index},
        {k: cat([p.outcome_prob[k] for p in parts]) for k in p0.outcome_prob},
        {k: (p0.outcome_meta[k][0], cat([p.outcome_meta[k][1] for p in parts])) for k in p0.outcome_meta},
        tuple((a, lab, cat([p.stamps[i][2] for p in parts])) for i, (a, lab, _) in enumerate(p0.stamps)),
        cat([p.rho_A for p in parts]),
        cat([p.rho_B for p in parts]),
        p0.ids_A,
        p0.ids_B,
        cat([p.survival for p in parts]),
        cat([p.discarded for p in parts]),
    )


def run_sampled(tl: Timeline, shots: int, seed: int, *, tie_break: str = "alice_first") -> list[RunRecord]:
    """``shots`` independent trajectories, each with sampled transit phases and outcomes."""
    return run_sampled_batch(tl, shots, seed, tie_break=tie_break).records()


# -- scenario builders -------------------------------------------------------

def scenario_eddington(omega: float, transit: float, measure_delay: float, *,
                       channel: PhaseModel = Noiseless(), delta: float = 0.0) -> Timeline:
    """Slow clock transfer: Alice ships a qubit clock, Bob reads it.

    Alice prepares (|0> + |1>)/sqrt(2) at her PTI 0 and sends it; Bob reads
    both quadratures (X or Y, chosen at random per shot) at his PTI
    ``measure_delay``. Under a noiseless channel Bob's Bloch phase is
    ``omega * (measure_delay + delta + fixed_delay)``, so delta is
    identifiable within one phase period. Bob must already hold the clock,
    i.e. ``measure_delay >= transit - delta``.
    """
    if not (omega > 0 and transit > 0 and measure_delay > 0):
        raise ValueError("omega, transit and measure_delay must be positive")
    A, B = Owner.ALICE, Owner.BOB
    events = (
        Event(A, 0.0, Prepare(("clock",), "plus")),
        Event(A, 0.0, Send("clock", transit)),
        Event(B, 0.0, Receive("clock")),
        Event(B, measure_delay, Measure("clock", ("X", "Y"), "clock")),
    )
    return Timeline((SubsystemDecl("clock", EnergySpec.qubit(omega), A),), events, channel,
                    ClockFrame.from_delta(delta), horizon_B=measure_delay)


def scenario_einstein(transit_out: float, transit_back: float, *, omega: float = 1.0, send_at: float = 0.0,
                      dwell: float = 0.0, channel: PhaseModel = Noiseless(), delta: float = 0.0) -> Timeline:
    """Round trip: Alice sends a qubit probe, Bob bounces it after ``dwell``.

    Alice's estimate of the one-way time is half her round-trip PTI minus
    Bob's dwell; see :func:`einstein_estimate`.
    """
    if not (transit_out > 0 and transit_back > 0):
        raise ValueError("transit durations must be positive")
    if dwell < 0:
        raise ValueError("dwell must be >= 0")
    A, B = Owner.ALICE, Owner.BOB
    events = (
        Event(A, 0.0, Prepare(("probe",), "plus")),
        Event(A, send_at, Send("probe", transit_out)),
        Event(B, 0.0, Receive("probe")),
        Event(B, dwell, Send("probe", transit_back), after="probe"),
        Event(A, 0.0, Receive("probe")),
    )
    return Timeline((SubsystemDecl("probe", EnergySpec.qubit(omega), A),), events, channel,
                    ClockFrame.from_delta(delta))


def einstein_estimate(record) -> float:
    """One-way transit estimate (tau_r - tau_s - Bob's dwell) / 2 from PTIs."""
    out = record.stamp(Owner.ALICE, "send:probe")
    back = record.stamp(Owner.ALICE, "receive:probe")
    dwell = record.stamp(Owner.BOB, "send:probe") - record.stamp(Owner.BOB, "receive:probe")
    return (back - out - dwell) / 2


def einstein_offset(record) -> float:
    """Clock offset estimate: Alice's send PTI + one-way time - Bob's receive PTI."""
    return record.stamp(Owner.ALICE, "send:probe") + einstein_estimate(record) - record.stamp(Owner.BOB, "receive:probe")


def scenario_entangled_distribution(chi, *, a_levels: EnergySpec | None = None, b_levels: EnergySpec | None = None,
                                    transit: float = 1.0, readout: float | None = None,
                                    channel: PhaseModel = Noiseless(), delta: float = 0.0) -> Timeline:
    """Alice prepares sum chi[a, b] |a>|b> and ships the second factor to Bob.

    Both actors' states are read at their PTI ``readout`` (default
    ``2 * transit``), which must come after Bob's receipt.
    """
    chi = np.asarray(chi, dtype=complex)
    if chi.ndim != 2:
        raise ValueError("chi must be a 2-d coefficient array chi[a, b]")
    norm = float(np.sum(np.abs(chi) ** 2))
    if abs(norm - 1) > 1e-10:
        raise ValueError(f"chi must be normalized: sum |chi|^2 = {norm!r}")
    da, db = chi.shape
    a_levels = a_levels or EnergySpec.ladder(range(da))
    b_levels = b_levels or EnergySpec.ladder(range(db))
    if a_levels.dim != da or b_levels.dim != db:
        raise ValueError("level specs do not match the shape of chi")
    readout = 2 * transit if readout is None else readout
    A, B = Owner.ALICE, Owner.BOB
    events = (
        Event(A, 0.0, Prepare(("a", "b"), chi.ravel())),
        Event(A, 0.0, Send("b", transit)),
        Event(B, 0.0, Receive("b")),
    )
    subs = (SubsystemDecl("a", a_levels, A), SubsystemDecl("b", b_levels, A))
    return Timeline(subs, events, channel, ClockFrame.from_delta(delta), horizon_A=readout, horizon_B=readout)


def scenario_postselect(base: Timeline, actor, target: str, outcome: int, proper_time: float, *,
                        basis="Z", label: str = "postselect") -> Timeline:
    """Insert a post-selection by ``actor`` at its PTI ``proper_time``.

    The event goes after every fixed-time event of that actor at or before
    ``proper_time``.
    """
    actor = Owner(actor)
    events = list(base.events)
    pos = 0
    for i, e in enumerate(events):
        if e.actor == actor and e.after is None and e.proper_time <= proper_time:
            pos = i + 1
    events.insert(pos, Event(actor, proper_time, PostSelect(target, outcome, basis, label)))
    return dc_replace(base, events=tuple(events))


def scenario_postselected_eddington(omega: float, transit: float, measure_delay: float, *, basis="Y",
                                    outcome: int = 0, channel: PhaseModel = Noiseless(),
                                    delta: float = 0.0) -> Timeline:
    """Eddington transfer where Alice entangles the clock with an ancilla she
    keeps, then post-selects the ancilla right after sending the clock."""
    base = scenario_eddington(omega, transit, measure_delay, channel=channel, delta=delta)
    A = Owner.ALICE
    events = (
        Event(A, 0.0, Prepare(("clock",), "plus")),
        Event(A, 0.0, Prepare(("anc",), "zero")),
        Event(A, 0.0, ApplyLocal(("clock", "anc"), "CNOT")),
    ) + base.events[1:]
    base = dc_replace(base, subsystems=base.subsystems + (SubsystemDecl("anc", EnergySpec.qubit(omega), A),),
                      events=events)
    return scenario_postselect(base, A, "anc", outcome, 0.0, basis=basis)


def compose(first: Timeline, second: Timeline, *, shift_A: float, shift_B: float) -> Timeline:
    """Run ``second`` after ``first``: its PTIs are shifted per actor.

    Shared subsystem ids must be declared identically; anchored events of
    ``second`` are renumbered past the arrivals already used by ``first``.
    """
    decls = {d.id: d for d in first.subsystems}
    subs = list(first.subsystems)
    for d in second.subsystems:
        if d.id in decls:
            if decls[d.id].spec != d.spec:
                raise ScenarioError(f"subsystem {d.id!r} declared with different levels")
        else:
            subs.append(d)
    used = {}
    for e in first.events:
        if isinstance(e.action, Receive):
            used[(e.action.subsystem, e.actor)] = used.get((e.action.subsystem, e.actor), 0) + 1
    shift = {Owner.ALICE: shift_A, Owner.BOB: shift_B}
    events = list(first.events)
    for e in second.events:
        if e.after is None:
            events.append(dc_replace(e, proper_time=e.proper_time + shift[e.actor]))
        else:
            events.append(dc_replace(e, occurrence=e.occurrence + used.get((e.after, e.actor), 0)))
    h_A = None if second.horizon_A is None else second.horizon_A + shift_A
    h_B = None if second.horizon_B is None else second.horizon_B + shift_B
    return Timeline(tuple(subs), tuple(events), first.channel, first.frame, h_A, h_B)


def bloch_phase(rho) -> float:
    """Phase phi of a qubit state with rho[1, 0] proportional to exp(-i phi)."""
    return float(-np.angle(np.asarray(rho)[1, 0]))


BUILTINS = {
    "eddington": scenario_eddington,
    "einstein": scenario_einstein,
    "entangled": scenario_entangled_distribution,
    "postselected_eddington": scenario_postselected_eddington,
}
