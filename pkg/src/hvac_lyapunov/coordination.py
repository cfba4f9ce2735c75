"""
Distributed solution of the per-slot allocation between a central EMS and zone agents.

Only the multiplier rho (EMS -> agents) and each zone's air rate
(agent -> EMS) cross the wire.  Comfort targets, disturbances, discomfort
weights, indoor temperatures and queues stay with the agents.  Public slot
data (price, outdoor temperature) reach the agents out of band at slot start.

Wire format, little-endian, one frame per message::

    u32 payload_length | u8 tag | fields
    tag 1 Broadcast: u32 iteration, f64 rho
    tag 2 Reply:     u32 zone_id,   f64 m
    tag 3 Final:     u32 n_zones,   n_zones * f64 m

The EMS runs the same ``DualSearch`` as the centralized solver, so the
sequence of broadcast rho values and the final decision are identical.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from typing import Callable, Iterable

import numpy as np

from .errors import CoordinationTimeout, PrivacyViolation
from .solver import (
    EPS_SUM,
    MAX_ITER,
    Allocation,
    DualSearch,
    TuningBundle,
    ZoneState,
    clamped_rate,
    rate_terms,
)
from .thermal import Building, BuildingConfig, SlotObservation, ZoneParams

TAG_BROADCAST = 1
TAG_REPLY = 2
TAG_FINAL = 3

_HEAD = struct.Struct("<IB")
_SCALAR_BODY = struct.Struct("<Id")


@dataclass(frozen=True)
class Broadcast:
    iteration: int
    rho: float


@dataclass(frozen=True)
class Reply:
    zone_id: int
    m: float


@dataclass(frozen=True)
class Final:
    decision: tuple


def encode(msg) -> bytes:
    if isinstance(msg, Broadcast):
        tag, body = TAG_BROADCAST, _SCALAR_BODY.pack(msg.iteration, msg.rho)
    elif isinstance(msg, Reply):
        tag, body = TAG_REPLY, _SCALAR_BODY.pack(msg.zone_id, msg.m)
    elif isinstance(msg, Final):
        n = len(msg.decision)
        tag, body = TAG_FINAL, struct.pack(f"<I{n}d", n, *msg.decision)
    else:
        raise TypeError(f"cannot encode {type(msg).__name__}")
    return _HEAD.pack(1 + len(body), tag) + body


def decode(frame: bytes):
    """Parse one frame, rejecting anything that does not match the schema exactly."""
    if len(frame) < _HEAD.size:
        raise PrivacyViolation("truncated frame")
    length, tag = _HEAD.unpack_from(frame)
    if length != len(frame) - 4:
        raise PrivacyViolation(f"length prefix {length} does not match frame size {len(frame)}")
    body = frame[_HEAD.size:]
    if tag in (TAG_BROADCAST, TAG_REPLY):
        if len(body) != _SCALAR_BODY.size:
            raise PrivacyViolation(f"tag {tag} frame carries {len(body)} body bytes")
        a, x = _SCALAR_BODY.unpack(body)
        return Broadcast(a, x) if tag == TAG_BROADCAST else Reply(a, x)
    if tag == TAG_FINAL:
        (n,) = struct.unpack_from("<I", body)
        if len(body) != 4 + 8 * n:
            raise PrivacyViolation("final frame size does not match its zone count")
        return Final(struct.unpack_from(f"<{n}d", body, 4))
    raise PrivacyViolation(f"unknown tag {tag}")


@dataclass(frozen=True)
class PublicSlotData:
    price: float
    t_out: float


class ZoneAgent:
    """Holds one zone's private measurements and answers broadcasts locally."""

    def __init__(self, zone_id: int, params: ZoneParams, cfg: BuildingConfig):
        self.zone_id = zone_id
        self.params = params
        self.cfg = cfg
        self._num = None
        self._den = None
        self.decision = None

    def begin_slot(self, t_in: float, queue: float, t_ref: float, q: float,
                   public: PublicSlotData, v: float) -> None:
        state = ZoneState(np.float64(t_in), np.float64(queue))
        obs = SlotObservation(public.price, public.t_out, np.float64(t_ref), np.float64(q))
        self._num, self._den = rate_terms(state, obs, self.params, self.cfg, v)
        self.decision = None

    def respond(self, broadcast: Broadcast) -> Reply:
        if broadcast.rho < 0:
            raise ValueError("rho must be non-negative")
        m = clamped_rate(self._num, self._den, broadcast.rho, self.params.m_min, self.params.m_max)
        return Reply(self.zone_id, float(m))

    def handle(self, frame: bytes):
        msg = decode(frame)
        if isinstance(msg, Broadcast):
            return encode(self.respond(msg))
        if isinstance(msg, Final):
            self.decision = msg.decision[self.zone_id]
            return None
        raise PrivacyViolation("agents only accept Broadcast and Final frames")


class Coordinator:
    """Central EMS: broadcasts rho, sums replies, decides when to stop."""

    def __init__(self, n_zones: int, cap: float, eps: float = EPS_SUM, max_iter: int = MAX_ITER):
        self.n_zones = n_zones
        self.cap = cap
        self.eps = eps
        self.max_iter = max_iter
        self.search = None

    def start_slot(self) -> bytes:
        self.search = DualSearch(self.cap, 1, self.eps, self.max_iter)
        return encode(Broadcast(1, 0.0))

    def coordinator_round(self, replies: Iterable[bytes]) -> bytes:
        """Consume one iteration's replies; return the next Broadcast or the Final frame."""
        rates = {}
        for frame in replies:
            msg = decode(frame)
            if not isinstance(msg, Reply):
                raise PrivacyViolation("coordinator expected Reply frames")
            rates[msg.zone_id] = msg.m
        for zone in range(self.n_zones):
            if zone not in rates:
                raise CoordinationTimeout(zone)
        # summation order is zone order regardless of arrival order
        m = np.array([rates[z] for z in range(self.n_zones)])
        self.search.observe(m[None, :])
        if not self.search.active[0]:
            return encode(Final(tuple(float(x) for x in self.search.decision[0])))
        return encode(Broadcast(int(self.search.iterations[0]) + 1, float(self.search.rho[0])))

    @property
    def iterations(self) -> int:
        return int(self.search.iterations[0])


class InProcessTransport:
    """Delivers frames to in-process agents; every frame passes through ``monitors``.

    Broadcast and Final frames are counted once per recipient.
    """

    def __init__(self, agents: list[ZoneAgent], monitors: list[Callable[[bytes], None]] | None = None):
        self.agents = agents
        self.monitors = list(monitors or [])
        self.frames = 0

    def _see(self, frame: bytes) -> None:
        self.frames += 1
        for mon in self.monitors:
            mon(frame)

    def broadcast(self, frame: bytes) -> list[bytes]:
        replies = []
        for agent in self.agents:
            self._see(frame)
            reply = agent.handle(frame)
            if reply is not None:
                self._see(reply)
                replies.append(reply)
        return replies

    def deliver_final(self, frame: bytes) -> None:
        for agent in self.agents:
            self._see(frame)
            agent.handle(frame)


@dataclass(frozen=True)
class DistributedResult:
    decision: np.ndarray
    iterations: int
    frames: int
    rho: float


def run_distributed_slot(coordinator: Coordinator, transport: InProcessTransport) -> DistributedResult:
    """Run the broadcast / reply / check loop until the EMS emits Final."""
    start = transport.frames
    frame = coordinator.start_slot()
    while True:
        replies = transport.broadcast(frame)
        frame = coordinator.coordinator_round(replies)
        if decode(frame).__class__ is Final:
            break
    transport.deliver_final(frame)
    decision = np.array(decode(frame).decision)
    return DistributedResult(decision, coordinator.iterations, transport.frames - start,
                             float(coordinator.search.rho[0]))


class PrivacyAuditor:
    """Frame monitor asserting the public schema and absence of private values.

    Private values are registered per slot; a frame fails if it does not
    decode under the schema, or if the 8-byte encoding of a private value
    appears anywhere in it other than as a coincidentally equal public field.
    """

    def __init__(self, raise_on_violation: bool = True):
        self.raise_on_violation = raise_on_violation
        self.frames_checked = 0
        self.violations: list[str] = []
        self._patterns: dict[bytes, str] = {}

    def set_private(self, **fields) -> None:
        self._patterns = {}
        for name, values in fields.items():
            for v in np.atleast_1d(np.asarray(values, dtype=float)):
                self._patterns[struct.pack("<d", float(v))] = name

    def __call__(self, frame: bytes) -> None:
        self.frames_checked += 1
        try:
            msg = decode(frame)
        except PrivacyViolation as exc:
            self._flag(str(exc))
            return
        if isinstance(msg, Broadcast):
            public = {msg.rho}
        elif isinstance(msg, Reply):
            public = {msg.m}
        else:
            public = set(msg.decision)
        allowed = {struct.pack("<d", float(x)) for x in public}
        for pattern, name in self._patterns.items():
            if pattern in allowed:
                continue
            if pattern in frame:
                self._flag(f"{name} value found in {type(msg).__name__} frame")

    def _flag(self, why: str) -> None:
        self.violations.append(why)
        if self.raise_on_violation:
            raise PrivacyViolation(why)


class DistributedAllocator:
    """Drop-in replacement for ``solve_p3`` that runs the EMS/agent protocol.

    Each call hands every agent its own slice of the state and observation
    (standing in for local sensing), then runs the protocol.  States may
    carry a leading batch axis of size one.
    """

    def __init__(self, building: Building, auditor: PrivacyAuditor | None = None,
                 eps: float = EPS_SUM, max_iter: int = MAX_ITER):
        self.building = building
        self.agents = [ZoneAgent(i, zp, building.cfg) for i, zp in enumerate(building.zones)]
        self.auditor = auditor
        self.transport = InProcessTransport(self.agents, [auditor] if auditor else [])
        self.coordinator = Coordinator(building.n_zones, building.cfg.m_total_cap, eps, max_iter)
        self.slots = 0
        self.total_frames = 0
        self.expected_frames = 0
        self.last: DistributedResult | None = None

    def __call__(self, state: ZoneState, obs: SlotObservation, building: Building,
                 tuning: TuningBundle) -> Allocation:
        n = building.n_zones
        shape = np.shape(state.t_in)
        t_in = np.asarray(state.t_in, dtype=float).reshape(-1, n)
        if t_in.shape[0] != 1:
            raise ValueError("the distributed protocol runs one building at a time")
        t_in = t_in[0]
        queue = np.asarray(state.queue, dtype=float).reshape(n)
        t_ref = np.broadcast_to(obs.t_ref, shape).reshape(n)
        q = np.broadcast_to(obs.q, shape).reshape(n)
        if self.auditor is not None:
            phi = building.stacked.phi
            self.auditor.set_private(t_ref=t_ref, q=q, phi=phi[phi != 0], t_in=t_in, queue=queue)
        public = PublicSlotData(float(obs.price), float(obs.t_out))
        for i, agent in enumerate(self.agents):
            agent.begin_slot(t_in[i], queue[i], t_ref[i], q[i], public, tuning.v)
        result = run_distributed_slot(self.coordinator, self.transport)
        self.slots += 1
        self.total_frames += result.frames
        self.expected_frames += 2 * n * result.iterations + n
        self.last = result
        m = result.decision.reshape(shape)
        batch = shape[:-1]
        return Allocation(m=m, rho=np.full(batch, result.rho),
                          iterations=np.full(batch, result.iterations),
                          residual=building.cfg.m_total_cap - m.sum(axis=-1))
