"""Deterministic discrete-event transport with trace recording and faults.

Links are per-(sender, recipient) FIFO queues; each node processes at most
one envelope per tick. With equal seeds two runs produce byte-identical
traces, which makes the recorded trace the single source of truth for
end-to-end assertions. The seeded-shuffle policy perturbs only which link a
node drains first, never the order within a link.
"""

from __future__ import annotations

import json
import random
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path

from .certs import canonical_json_bytes
from .errors import ConfigError, SchemaError, StorageError
from .nodes import DEFAULT_TICKET_TTL, NodeBehavior
from .protocol import Envelope, decode_envelope, encode_envelope

FAULT_KINDS = ("drop_node", "delay_link", "revoke_subject", "expire_tickets")


@dataclass(frozen=True)
class FaultSpec:
    """One injected fault, triggered at a tick or right after a message type."""

    kind: str
    at_tick: int | None = None
    after_type: str | None = None
    occurrence: int = 1  # with after_type: fire on the n-th such message
    address: str | None = None  # drop_node
    link_from: str | None = None  # delay_link
    link_to: str | None = None
    delay: int = 0
    subject: str | None = None  # revoke_subject
    jump: int | None = None  # expire_tickets

    def __post_init__(self):
        if self.kind not in FAULT_KINDS:
            raise ConfigError(f"unknown fault kind {self.kind!r}")
        if (self.at_tick is None) == (self.after_type is None):
            raise ConfigError("fault needs exactly one of at_tick or after_type")
        if self.occurrence < 1:
            raise ConfigError("fault occurrence must be >= 1")


@dataclass
class SimConfig:
    seed: int = 0
    tick_limit: int = 10_000
    delivery: str = "in-order"  # or "seeded-shuffle"
    faults: list[FaultSpec] = field(default_factory=list)

    def __post_init__(self):
        if self.tick_limit <= 0:
            raise ConfigError("tick_limit must be positive")
        if self.delivery not in ("in-order", "seeded-shuffle"):
            raise ConfigError(f"unknown delivery policy {self.delivery!r}")
        for fault in self.faults:
            if fault.at_tick is not None and fault.at_tick >= self.tick_limit:
                raise ConfigError("fault at_tick beyond tick_limit")


@dataclass(frozen=True)
class TraceEntry:
    tick: int
    envelope: Envelope


class Trace:
    """Recorded (tick, envelope) emissions plus terminal node summaries."""

    def __init__(self):
        self.entries: list[TraceEntry] = []
        self.final_states: dict[str, dict] = {}
        self.tick_limit_hit = False

    def append(self, tick: int, envelope: Envelope) -> None:
        if self.entries and tick < self.entries[-1].tick:
            raise ValueError("trace ticks must be nondecreasing")
        self.entries.append(TraceEntry(tick, envelope))

    def message_types(self) -> list[str]:
        return [e.envelope.msg_type for e in self.entries]

    def contains_subsequence(self, types: list[str]) -> bool:
        it = iter(self.message_types())
        return all(t in it for t in types)

    def link_projection(self, sender: str, recipient: str) -> list[Envelope]:
        return [
            e.envelope
            for e in self.entries
            if e.envelope.sender == sender and e.envelope.recipient == recipient
        ]

    def links(self) -> set[tuple[str, str]]:
        return {(e.envelope.sender, e.envelope.recipient) for e in self.entries}

    def to_bytes(self) -> bytes:
        chunks = [
            str(entry.tick).encode() + b"\t" + encode_envelope(entry.envelope)
            for entry in self.entries
        ]
        if self.final_states:
            chunks.append(
                b"#states\t" + canonical_json_bytes(self.final_states) + b"\n"
            )
        if self.tick_limit_hit:
            chunks.append(b"#tick_limit\t1\n")
        return b"".join(chunks)

    @classmethod
    def from_bytes(cls, data: bytes) -> "Trace":
        trace = cls()
        for lineno, line in enumerate(data.split(b"\n"), start=1):
            if not line:
                continue
            if line.startswith(b"#states\t"):
                try:
                    states = json.loads(line.split(b"\t", 1)[1].decode("utf-8"))
                except (UnicodeDecodeError, json.JSONDecodeError) as exc:
                    raise SchemaError(f"trace line {lineno}: bad states: {exc}") from exc
                if not isinstance(states, dict):
                    raise SchemaError(f"trace line {lineno}: states must be an object")
                trace.final_states = states
                continue
            if line.startswith(b"#tick_limit\t"):
                trace.tick_limit_hit = True
                continue
            tick_part, sep, env_part = line.partition(b"\t")
            if not sep or not tick_part.isdigit():
                raise SchemaError(f"trace line {lineno}: missing tick prefix")
            trace.append(int(tick_part), decode_envelope(env_part))
        return trace

    def __eq__(self, other) -> bool:
        return isinstance(other, Trace) and self.to_bytes() == other.to_bytes()

    def __len__(self) -> int:
        return len(self.entries)


def dump_trace(trace: Trace, path: str | Path) -> None:
    try:
        Path(path).write_bytes(trace.to_bytes())
    except OSError as exc:
        raise StorageError(f"cannot write trace {path}: {exc}") from exc


def load_trace(path: str | Path) -> Trace:
    try:
        data = Path(path).read_bytes()
    except OSError as exc:
        raise StorageError(f"cannot read trace {path}: {exc}") from exc
    return Trace.from_bytes(data)


def trace_diff(a: Trace, b: Trace) -> str | None:
    """Describe the first divergence between two traces, or None if equal."""
    for idx, (ea, eb) in enumerate(zip(a.entries, b.entries)):
        line_a = str(ea.tick).encode() + b"\t" + encode_envelope(ea.envelope)
        line_b = str(eb.tick).encode() + b"\t" + encode_envelope(eb.envelope)
        if line_a != line_b:
            return (
                f"entry {idx}: {line_a.decode().rstrip()}"
                f" != {line_b.decode().rstrip()}"
            )
    if len(a.entries) != len(b.entries):
        longer = a if len(a.entries) > len(b.entries) else b
        which = "first" if longer is a else "second"
        idx = min(len(a.entries), len(b.entries))
        extra = longer.entries[idx]
        return f"entry {idx}: only in {which} trace: {extra.envelope.msg_type}"
    if a.final_states != b.final_states:
        return "terminal node states differ"
    if a.tick_limit_hit != b.tick_limit_hit:
        return "tick-limit flags differ"
    return None


class _QueuedEnvelope:
    __slots__ = ("ready_tick", "seq", "envelope")

    def __init__(self, ready_tick, seq, envelope):
        self.ready_tick = ready_tick
        self.seq = seq
        self.envelope = envelope


class Simulation:
    """Single-threaded scheduler binding node behaviors together."""

    def __init__(self, behaviors: list[NodeBehavior], cfg: SimConfig | None = None):
        self.cfg = cfg or SimConfig()
        self.nodes: dict[str, NodeBehavior] = {}
        for behavior in behaviors:
            self.add_node(behavior)
        self.tick = 0
        self.trace = Trace()
        self.rng = random.Random(self.cfg.seed)
        self.links: dict[tuple[str, str], deque[_QueuedEnvelope]] = {}
        self.extra_delay: dict[tuple[str, str], int] = {}
        self.dropped: set[str] = set()
        self._seq = 0
        self._seen_ids: dict[str, set[int]] = {}
        self._type_counts: dict[str, int] = {}
        self._faults: list[FaultSpec] = []
        self._fired: set[int] = set()
        self._pending_jump = 0
        for fault in self.cfg.faults:
            self.add_fault(fault)

    def add_node(self, behavior: NodeBehavior) -> None:
        if behavior.address in self.nodes:
            raise ConfigError(f"duplicate node address {behavior.address!r}")
        self.nodes[behavior.address] = behavior

    def add_fault(self, fault: FaultSpec) -> None:
        self._faults.append(fault)

    def inject(self, envelopes: list[Envelope], at_tick: int | None = None) -> None:
        tick = self.tick if at_tick is None else max(at_tick, self.tick)
        for env in envelopes:
            self._record_and_queue(env, tick, hop_delay=0)

    def _record_and_queue(self, env: Envelope, tick: int, hop_delay: int = 1) -> None:
        encode_envelope(env)  # reject malformed output early
        seen = self._seen_ids.setdefault(env.sender, set())
        if env.msg_id in seen:
            raise ValueError(f"{env.sender} reused msg_id {env.msg_id}")
        seen.add(env.msg_id)
        self.trace.append(tick, env)
        count = self._type_counts.get(env.msg_type, 0) + 1
        self._type_counts[env.msg_type] = count
        for idx, fault in enumerate(self._faults):
            if (
                idx not in self._fired
                and fault.after_type == env.msg_type
                and fault.occurrence == count
            ):
                self._fired.add(idx)
                self._fire(fault)
        if env.recipient in self.dropped:
            return
        link = (env.sender, env.recipient)
        delay = hop_delay + self.extra_delay.get(link, 0)
        queue = self.links.setdefault(link, deque())
        self._seq += 1
        queue.append(_QueuedEnvelope(tick + delay, self._seq, env))

    def _fire(self, fault: FaultSpec) -> None:
        if fault.kind == "drop_node":
            self.dropped.add(fault.address)
            for (sender, recipient), queue in self.links.items():
                if recipient == fault.address:
                    queue.clear()
        elif fault.kind == "delay_link":
            self.extra_delay[(fault.link_from, fault.link_to)] = fault.delay
        elif fault.kind == "revoke_subject":
            ca = next(
                (b for b in self.nodes.values() if hasattr(b, "revoke_subject")),
                None,
            )
            if ca is None:
                raise ConfigError("revoke_subject fault needs a CA node")
            for env in ca.revoke_subject(fault.subject):
                self._record_and_queue(env, self.tick)
        elif fault.kind == "expire_tickets":
            self._pending_jump += (
                fault.jump if fault.jump is not None else DEFAULT_TICKET_TTL + 1
            )

    def _deliverable(self, addr: str) -> list[tuple[str, str]]:
        return sorted(
            link
            for link, queue in self.links.items()
            if link[1] == addr and queue and queue[0].ready_tick <= self.tick
        )

    def _step_tick(self) -> None:
        for idx, fault in enumerate(self._faults):
            if (
                idx not in self._fired
                and fault.at_tick is not None
                and fault.at_tick <= self.tick
            ):
                self._fired.add(idx)
                self._fire(fault)
        for addr in sorted(self.nodes):
            if addr in self.dropped:
                continue
            candidates = self._deliverable(addr)
            if not candidates:
                continue
            if self.cfg.delivery == "seeded-shuffle":
                link = self.rng.choice(candidates)
            else:
                link = min(candidates, key=lambda l: self.links[l][0].seq)
            env = self.links[link].popleft().envelope
            for out in self.nodes[addr].step(env, self.tick):
                self._record_and_queue(out, self.tick)
        for addr in sorted(self.nodes):
            if addr in self.dropped:
                continue
            for out in self.nodes[addr].poll(self.tick):
                self._record_and_queue(out, self.tick)
        jump = self._pending_jump
        self._pending_jump = 0
        if jump:
            # synchronize node clocks to the latest one before jumping, so
            # every outstanding ticket is past its window afterwards
            horizon = max(node.clock for node in self.nodes.values()) + jump
            for addr in sorted(self.nodes):
                node = self.nodes[addr]
                node.advance_clock(horizon - node.clock)
        self.tick += 1 + jump

    def quiescent(self) -> bool:
        if any(queue for queue in self.links.values()):
            return False
        return not any(
            node.pending_work()
            for addr, node in self.nodes.items()
            if addr not in self.dropped
        )

    def run(self) -> Trace:
        """Advance until quiescence or the tick limit; returns the trace."""
        while not self.quiescent():
            if self.tick >= self.cfg.tick_limit:
                self.trace.tick_limit_hit = True
                break
            self._step_tick()
        self.trace.final_states = {
            addr: self.nodes[addr].summary() for addr in sorted(self.nodes)
        }
        return self.trace


def run(behaviors: list[NodeBehavior], script: list[Envelope], cfg: SimConfig) -> Trace:
    """One-shot convenience: inject a script and run to quiescence."""
    sim = Simulation(behaviors, cfg)
    sim.inject(script)
    return sim.run()
