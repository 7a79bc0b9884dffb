"""Event-driven behaviors for the six grid roles.

Each node is a deterministic state machine: ``step(envelope, now)`` consumes
one envelope and returns the envelopes to send. Nodes share nothing but
messages, so the same behaviors run unchanged under the serialized
simulator and the socket transport.

Two clocks are in play. ``now`` is transport time (the simulator's global
tick, or a per-node counter under sockets) and drives scheduling concerns
such as hold-window deadlines. ``self.clock`` counts envelopes this node
has processed and supplies every timestamp that ends up inside a payload;
because it advances identically under any transport, recorded flows stay
byte-comparable across transports. Validity windows (ticket TTL, replay
window) are sized to absorb the small skew between the two.
"""

from __future__ import annotations

import random

from .certs import (
    CertificateAuthority,
    Repository,
    SubjectKind,
    VerifyStatus,
    cert_from_json,
    cert_to_json,
    verify_certificate,
)
from .errors import (
    E_AUTH,
    E_BAD_PEER_CERT,
    E_CERT,
    E_NO_NODE,
    E_NO_SESSION,
    E_NOT_AUTHORIZED,
    GridError,
    UnknownSubjectError,
)
from .policy import (
    GridConfig,
    PolicyTable,
    ServiceSet,
    StateSet,
    VoFilterConfig,
    check_states,
    effective_state,
    policy_map,
)
from .protocol import (
    Envelope,
    Ticket,
    TicketStatus,
    auth_proof_bytes,
    forward_proof_bytes,
    sign_ticket,
    validate_ticket,
)
from .signers import KeyPair, Signer

DEFAULT_VALIDITY_TICKS = 10_000
DEFAULT_TICKET_TTL = 100
DEFAULT_REPLAY_WINDOW = 50
DEFAULT_HOLD_WINDOW = 10
DEFAULT_HELD_CAPACITY = 64


class NodeBehavior:
    kind = "node"

    def __init__(self, address: str):
        self.address = address
        self.clock = 0
        self._next_msg_id = 1

    def make(
        self,
        recipient: str,
        msg_type: str,
        payload: dict,
        correlation_id: int | None = None,
    ) -> Envelope:
        env = Envelope(
            msg_id=self._next_msg_id,
            sender=self.address,
            recipient=recipient,
            msg_type=msg_type,
            payload=payload,
            correlation_id=correlation_id,
        )
        self._next_msg_id += 1
        return env

    def error_to(self, env: Envelope, code: str, detail: str = "") -> Envelope:
        return self.make(
            env.sender,
            "ERROR",
            {"code": code, "detail": detail},
            correlation_id=env.msg_id,
        )

    def step(self, env: Envelope, now: int) -> list[Envelope]:
        self.clock += 1
        return self.handle(env, now)

    def handle(self, env: Envelope, now: int) -> list[Envelope]:
        raise NotImplementedError

    def poll(self, now: int) -> list[Envelope]:
        """Timer hook; the transport calls this every tick."""
        return []

    def pending_work(self) -> bool:
        return False

    def advance_clock(self, delta: int) -> None:
        self.clock += delta

    def summary(self) -> dict:
        return {"kind": self.kind}


class CaNode(NodeBehavior):
    """Certification authority: registration, state-change reissue, revocation."""

    kind = "ca"

    def __init__(
        self,
        address: str,
        authority: CertificateAuthority,
        monitor_addr: str,
        repository_addr: str,
        validity_ticks: int = DEFAULT_VALIDITY_TICKS,
    ):
        super().__init__(address)
        self.authority = authority
        self.monitor_addr = monitor_addr
        self.repository_addr = repository_addr
        self.validity_ticks = validity_ticks
        self._pending_reg: dict[int, Envelope] = {}

    def handle(self, env: Envelope, now: int) -> list[Envelope]:
        if env.msg_type == "REG_USER":
            return self._on_reg_user(env)
        if env.msg_type in ("REG_DISC", "REG_SERV"):
            kind = (
                SubjectKind.DISCOVERY
                if env.msg_type == "REG_DISC"
                else SubjectKind.SERVICE
            )
            return self._issue_and_ack(env, kind, StateSet())
        if env.msg_type == "STATE_RESPONSE":
            return self._on_state_response(env)
        if env.msg_type == "STATE_CHANGE":
            return self._on_state_change(env)
        return []

    def _on_reg_user(self, env: Envelope) -> list[Envelope]:
        name = env.payload["subject_name"]
        existing = self.authority.current.get(name)
        if existing is not None and existing.serial not in self.authority.crl:
            return [self.error_to(env, "E_DUPLICATE_SUBJECT", name)]
        query = self.make(self.monitor_addr, "STATE_QUERY", {"subject_name": name})
        self._pending_reg[query.msg_id] = env
        return [query]

    def _on_state_response(self, env: Envelope) -> list[Envelope]:
        request = self._pending_reg.pop(env.correlation_id, None)
        if request is None:
            return []
        return self._issue_and_ack(request, SubjectKind.USER, env.payload["states"])

    def _issue_and_ack(
        self, request: Envelope, kind: SubjectKind, states: StateSet
    ) -> list[Envelope]:
        try:
            cert = self.authority.issue(
                request.payload["subject_name"],
                kind,
                request.payload["public_key"],
                states,
                now=self.clock,
                validity_ticks=self.validity_ticks,
            )
        except GridError as exc:
            return [self.error_to(request, exc.code, exc.detail)]
        return [
            self.make(
                request.sender, "REG_ACK", {"cert": cert}, correlation_id=request.msg_id
            ),
            self.make(self.repository_addr, "STORE_CERT", {"cert": cert}),
        ]

    def _on_state_change(self, env: Envelope) -> list[Envelope]:
        try:
            cert = self.authority.reissue(
                env.payload["user"],
                env.payload["new_states"],
                now=self.clock,
                validity_ticks=self.validity_ticks,
            )
        except GridError as exc:
            return [self.error_to(env, exc.code, exc.detail)]
        return [
            self.make(self.repository_addr, "STORE_CERT", {"cert": cert}),
            self.make(
                self.repository_addr,
                "CRL_UPDATE",
                {"crl": self.authority.crl.snapshot()},
            ),
        ]

    def revoke_subject(self, subject_name: str) -> list[Envelope]:
        """Administrative revocation without replacement (fault injection)."""
        self.authority.revoke_subject(subject_name, now=self.clock)
        return [
            self.make(
                self.repository_addr,
                "CRL_UPDATE",
                {"crl": self.authority.crl.snapshot()},
            )
        ]

    def summary(self) -> dict:
        return {
            "kind": self.kind,
            "next_serial": self.authority.next_serial,
            "revoked": sorted(self.authority.crl.serials),
        }


class MonitorNode(NodeBehavior):
    """Authoritative source for subject states; its changes rotate certificates."""

    kind = "monitor"

    def __init__(
        self,
        address: str,
        ca_addr: str,
        cfg: GridConfig,
        default_states: StateSet,
    ):
        super().__init__(address)
        self.ca_addr = ca_addr
        self.cfg = cfg
        self.default_states = check_states(default_states, cfg)
        self.states: dict[str, StateSet] = {}

    def handle(self, env: Envelope, now: int) -> list[Envelope]:
        if env.msg_type == "STATE_QUERY":
            name = env.payload["subject_name"]
            if name not in self.states:
                self.states[name] = self.default_states
            return [
                self.make(
                    env.sender,
                    "STATE_RESPONSE",
                    {"subject_name": name, "states": self.states[name]},
                    correlation_id=env.msg_id,
                )
            ]
        return []

    def seed_states(self, subject_name: str, states: StateSet) -> None:
        """Pre-assign states ahead of registration (admin path, no messages)."""
        self.states[subject_name] = check_states(states, self.cfg)

    def set_states(self, subject_name: str, states: StateSet) -> list[Envelope]:
        """Change a registered subject's states; signals the CA to reissue."""
        check_states(states, self.cfg)
        if subject_name not in self.states:
            raise UnknownSubjectError(f"{subject_name!r} is not registered")
        self.states[subject_name] = states
        return [
            self.make(
                self.ca_addr,
                "STATE_CHANGE",
                {"user": subject_name, "new_states": states},
            )
        ]

    def to_state(self) -> dict:
        return {name: s.to_list() for name, s in sorted(self.states.items())}

    def restore_state(self, state: dict) -> None:
        self.states = {name: StateSet(vals) for name, vals in state.items()}

    def summary(self) -> dict:
        return {
            "kind": self.kind,
            "states": {name: s.to_list() for name, s in sorted(self.states.items())},
        }


class RepositoryNode(NodeBehavior):
    """Serves the newest certificate per subject plus the CRL."""

    kind = "repository"

    def __init__(self, address: str, repository: Repository):
        super().__init__(address)
        self.repository = repository

    def handle(self, env: Envelope, now: int) -> list[Envelope]:
        if env.msg_type == "GET_CERT":
            try:
                cert = self.repository.get_cert(env.payload["subject_name"])
            except GridError as exc:
                return [self.error_to(env, exc.code, exc.detail)]
            return [
                self.make(
                    env.sender,
                    "CERT_RESPONSE",
                    {"cert": cert, "crl": self.repository.get_crl()},
                    correlation_id=env.msg_id,
                )
            ]
        if env.msg_type == "STORE_CERT":
            try:
                self.repository.store_cert(env.payload["cert"], now=self.clock)
            except GridError as exc:
                return [self.error_to(env, exc.code, exc.detail)]
            return []
        if env.msg_type == "CRL_UPDATE":
            self.repository.update_crl(env.payload["crl"])
            return []
        return []

    def summary(self) -> dict:
        return {
            "kind": self.kind,
            "subjects": sorted(self.repository.certs),
            "revoked": sorted(self.repository.crl.serials),
        }


class DiscoveryNode(NodeBehavior):
    """VO entry point: level-1 authentication, FILTER/IMPOSE, node selection."""

    kind = "discovery"

    def __init__(
        self,
        address: str,
        signer: Signer,
        keypair: KeyPair,
        vo_filter: VoFilterConfig,
        ca_pub: bytes,
        ca_addr: str,
        repository_addr: str,
        ticket_ttl: int = DEFAULT_TICKET_TTL,
        replay_window: int = DEFAULT_REPLAY_WINDOW,
        rng: random.Random | None = None,
        roster: list[str] | None = None,
        assume_free: bool = False,
    ):
        super().__init__(address)
        self.signer = signer
        self.keypair = keypair
        self.vo_filter = vo_filter
        self.ca_pub = ca_pub
        self.ca_addr = ca_addr
        self.repository_addr = repository_addr
        self.ticket_ttl = ticket_ttl
        self.replay_window = replay_window
        self.rng = rng or random.Random(0)
        self.roster: list[str] = list(roster or [])
        self.free: set[str] = set(self.roster) if assume_free else set()
        self.rr_cursor = -1
        self.own_cert = None
        self._pending: dict[int, Envelope] = {}

    def registration_envelopes(self) -> list[Envelope]:
        return [
            self.make(
                self.ca_addr,
                "REG_DISC",
                {"subject_name": self.address, "public_key": self.keypair.public},
            )
        ]

    def handle(self, env: Envelope, now: int) -> list[Envelope]:
        if env.msg_type == "REG_ACK":
            self.own_cert = env.payload["cert"]
            return []
        if env.msg_type == "NODE_STATUS":
            if env.sender not in self.roster:
                self.roster.append(env.sender)
            if env.payload["free"]:
                self.free.add(env.sender)
            else:
                self.free.discard(env.sender)
            return []
        if env.msg_type == "GET_NODE":
            fetch = self.make(
                self.repository_addr,
                "GET_CERT",
                {"subject_name": env.payload["user"]},
            )
            self._pending[fetch.msg_id] = env
            return [fetch]
        if env.msg_type == "CERT_RESPONSE":
            request = self._pending.pop(env.correlation_id, None)
            if request is None:
                return []
            return self._authorize(request, env)
        if env.msg_type == "ERROR":
            request = self._pending.pop(env.correlation_id, None)
            if request is None:
                return []
            return [self.error_to(request, E_CERT, env.payload["detail"])]
        return []

    def _authorize(self, request: Envelope, response: Envelope) -> list[Envelope]:
        cert = response.payload["cert"]
        crl = response.payload["crl"]
        user = request.payload["user"]
        status = verify_certificate(cert, self.ca_pub, self.clock, crl, self.signer)
        if status is not VerifyStatus.OK:
            return [self.error_to(request, E_CERT, status.value)]
        if cert.subject_name != user or cert.serial != request.payload["cert_serial"]:
            return [self.error_to(request, E_AUTH, "certificate mismatch")]
        timestamp = request.payload["timestamp"]
        proof = auth_proof_bytes(user, timestamp, self.address)
        if not self.signer.verify(
            cert.public_key, proof, request.payload["user_signature"]
        ):
            return [self.error_to(request, E_AUTH, "bad auth proof")]
        if self.clock - timestamp > self.replay_window:
            return [self.error_to(request, E_AUTH, "stale auth proof")]
        effective = effective_state(cert.state_list, self.vo_filter, user)
        node = self._pick_free()
        if node is None:
            return [self.error_to(request, E_NO_NODE, "no free service node")]
        ticket = sign_ticket(
            Ticket(
                ticket_id=f"{self.rng.getrandbits(128):032x}",
                user=user,
                issued_at=self.clock,
                ttl_ticks=self.ticket_ttl,
            ),
            self.signer,
            self.keypair.private,
        )
        return [
            self.make(
                request.sender,
                "SEND_NODE",
                {"service_node_addr": node, "ticket": ticket},
                correlation_id=request.msg_id,
            ),
            self.make(
                node,
                "SEND_EFF_STATE",
                {"user": user, "effective_states": effective, "ticket": ticket},
            ),
        ]

    def _pick_free(self) -> str | None:
        """Round-robin over the roster, skipping busy nodes."""
        if not self.roster:
            return None
        n = len(self.roster)
        for offset in range(1, n + 1):
            idx = (self.rr_cursor + offset) % n
            if self.roster[idx] in self.free:
                self.rr_cursor = idx
                return self.roster[idx]
        return None

    def to_state(self) -> dict:
        return {"roster": list(self.roster), "rr_cursor": self.rr_cursor}

    def restore_state(self, state: dict) -> None:
        self.roster = list(state["roster"])
        self.free = set(self.roster)
        self.rr_cursor = state["rr_cursor"]

    def summary(self) -> dict:
        return {
            "kind": self.kind,
            "roster": list(self.roster),
            "rr_cursor": self.rr_cursor,
        }


class ServiceNode(NodeBehavior):
    """Level-2 authentication, POLICY_MAP, rendering and forwarding."""

    kind = "service"

    def __init__(
        self,
        address: str,
        signer: Signer,
        keypair: KeyPair,
        policy_table: PolicyTable,
        ca_pub: bytes,
        discovery_pub: bytes,
        ca_addr: str,
        repository_addr: str,
        discovery_addr: str,
        service_names: dict[int, str] | None = None,
        hold_window: int = DEFAULT_HOLD_WINDOW,
        held_capacity: int = DEFAULT_HELD_CAPACITY,
        forward_map: dict[int, str] | None = None,
    ):
        super().__init__(address)
        self.signer = signer
        self.keypair = keypair
        self.policy_table = policy_table
        self.ca_pub = ca_pub
        self.discovery_pub = discovery_pub
        self.ca_addr = ca_addr
        self.repository_addr = repository_addr
        self.discovery_addr = discovery_addr
        self.service_names = service_names or {}
        self.hold_window = hold_window
        self.held_capacity = held_capacity
        self.forward_map = forward_map or {}
        self.own_cert = None
        # ticket_id -> (ticket, user, effective StateSet)
        self.records: dict[str, tuple[Ticket, str, StateSet]] = {}
        self.granted: dict[str, ServiceSet] = {}
        self.held: list[tuple[Envelope, int]] = []
        self._pending_cert: dict[int, Envelope] = {}
        self._pending_fwd: dict[int, Envelope] = {}
        self._fwd_relay: dict[int, tuple[str, int]] = {}

    def registration_envelopes(self) -> list[Envelope]:
        return [
            self.make(
                self.ca_addr,
                "REG_SERV",
                {"subject_name": self.address, "public_key": self.keypair.public},
            )
        ]

    def _purge(self) -> None:
        """Drop session records whose ticket no longer validates."""
        stale = [
            tid
            for tid, (ticket, _, _) in self.records.items()
            if validate_ticket(ticket, self.discovery_pub, self.clock, self.signer)
            is not TicketStatus.OK
        ]
        for tid in stale:
            del self.records[tid]
            self.granted.pop(tid, None)

    def handle(self, env: Envelope, now: int) -> list[Envelope]:
        if env.msg_type == "REG_ACK":
            self.own_cert = env.payload["cert"]
            return [self.make(self.discovery_addr, "NODE_STATUS", {"free": True})]
        if env.msg_type == "SEND_EFF_STATE":
            return self._on_eff_state(env, now)
        if env.msg_type == "SERV_REQ":
            return self._on_serv_req(env, now)
        if env.msg_type == "CERT_RESPONSE":
            if env.correlation_id in self._pending_cert:
                return self._finish_serv_req(self._pending_cert.pop(env.correlation_id), env)
            if env.correlation_id in self._pending_fwd:
                return self._finish_forward(self._pending_fwd.pop(env.correlation_id), env)
            return []
        if env.msg_type == "ERROR":
            return self._on_error(env)
        if env.msg_type == "SERVICE_INVOKE":
            return self._on_invoke(env)
        if env.msg_type == "FORWARD_REQ":
            return self._on_forward_req(env)
        if env.msg_type == "SERVICE_RESULT":
            relay = self._fwd_relay.pop(env.correlation_id, None)
            if relay is None:
                return []
            requester, invoke_id = relay
            return [
                self.make(
                    requester,
                    "SERVICE_RESULT",
                    dict(env.payload),
                    correlation_id=invoke_id,
                )
            ]
        return []

    def _on_eff_state(self, env: Envelope, now: int) -> list[Envelope]:
        ticket = env.payload["ticket"]
        if (
            validate_ticket(ticket, self.discovery_pub, self.clock, self.signer)
            is not TicketStatus.OK
        ):
            return []
        self.records[ticket.ticket_id] = (
            ticket,
            env.payload["user"],
            env.payload["effective_states"],
        )
        out: list[Envelope] = []
        still_held = []
        for held_env, deadline in self.held:
            if held_env.payload["ticket"].ticket_id == ticket.ticket_id:
                out.extend(self._accept_serv_req(held_env))
            else:
                still_held.append((held_env, deadline))
        self.held = still_held
        return out

    def _on_serv_req(self, env: Envelope, now: int) -> list[Envelope]:
        self._purge()
        ticket = env.payload["ticket"]
        if (
            validate_ticket(ticket, self.discovery_pub, self.clock, self.signer)
            is not TicketStatus.OK
        ):
            return [self.error_to(env, E_NO_SESSION, "invalid ticket")]
        if ticket.ticket_id in self.records:
            return self._accept_serv_req(env)
        if len(self.held) >= self.held_capacity:
            return [self.error_to(env, E_NO_SESSION, "hold buffer full")]
        self.held.append((env, now + self.hold_window))
        return []

    def _accept_serv_req(self, env: Envelope) -> list[Envelope]:
        fetch = self.make(
            self.repository_addr, "GET_CERT", {"subject_name": env.payload["user"]}
        )
        self._pending_cert[fetch.msg_id] = env
        return [fetch, self.make(self.discovery_addr, "NODE_STATUS", {"free": False})]

    def _finish_serv_req(self, request: Envelope, response: Envelope) -> list[Envelope]:
        cert = response.payload["cert"]
        crl = response.payload["crl"]
        user = request.payload["user"]
        ticket = request.payload["ticket"]
        done = [self.make(self.discovery_addr, "NODE_STATUS", {"free": True})]
        status = verify_certificate(cert, self.ca_pub, self.clock, crl, self.signer)
        if status is not VerifyStatus.OK:
            return [self.error_to(request, E_CERT, status.value)] + done
        if cert.subject_name != user or cert.serial != request.payload["cert_serial"]:
            return [self.error_to(request, E_CERT, "certificate mismatch")] + done
        record = self.records.get(ticket.ticket_id)
        if record is None or record[1] != user:
            return [self.error_to(request, E_NO_SESSION, "no effective state")] + done
        services = policy_map(record[2], self.policy_table)
        self.granted[ticket.ticket_id] = services
        return [
            self.make(
                request.sender,
                "SERVICE_LIST",
                {"services": services, "ticket": ticket},
                correlation_id=request.msg_id,
            )
        ] + done

    def _on_error(self, env: Envelope) -> list[Envelope]:
        if env.correlation_id in self._pending_cert:
            request = self._pending_cert.pop(env.correlation_id)
            return [
                self.error_to(request, E_CERT, env.payload["detail"]),
                self.make(self.discovery_addr, "NODE_STATUS", {"free": True}),
            ]
        if env.correlation_id in self._pending_fwd:
            request = self._pending_fwd.pop(env.correlation_id)
            return [self.error_to(request, E_AUTH, "origin certificate unavailable")]
        relay = self._fwd_relay.pop(env.correlation_id, None)
        if relay is not None:
            requester, invoke_id = relay
            return [
                self.make(
                    requester,
                    "ERROR",
                    dict(env.payload),
                    correlation_id=invoke_id,
                )
            ]
        return []

    def _on_invoke(self, env: Envelope) -> list[Envelope]:
        self._purge()
        ticket = env.payload["ticket"]
        service_id = env.payload["service_id"]
        if (
            validate_ticket(ticket, self.discovery_pub, self.clock, self.signer)
            is not TicketStatus.OK
            or ticket.ticket_id not in self.granted
        ):
            return [self.error_to(env, E_NO_SESSION, "no session for ticket")]
        services = self.granted[ticket.ticket_id]
        if service_id not in services:
            return [self.error_to(env, E_NOT_AUTHORIZED, f"service {service_id}")]
        next_node = self.forward_map.get(service_id)
        if next_node is not None:
            record = self.records[ticket.ticket_id]
            proof = forward_proof_bytes(
                ticket.ticket_id, record[2], self.address, next_node, service_id
            )
            forward = self.make(
                next_node,
                "FORWARD_REQ",
                {
                    "ticket": ticket,
                    "effective_states": record[2],
                    "origin_node": self.address,
                    "origin_signature": self.signer.sign(self.keypair.private, proof),
                    "service_id": service_id,
                },
            )
            self._fwd_relay[forward.msg_id] = (env.sender, env.msg_id)
            return [forward]
        return [self._render(env, service_id)]

    def _render(self, request: Envelope, service_id: int) -> Envelope:
        body = self.service_names.get(service_id, f"service {service_id}")
        return self.make(
            request.sender,
            "SERVICE_RESULT",
            {"service_id": service_id, "body": body},
            correlation_id=request.msg_id,
        )

    def _on_forward_req(self, env: Envelope) -> list[Envelope]:
        ticket = env.payload["ticket"]
        status = validate_ticket(ticket, self.discovery_pub, self.clock, self.signer)
        if status is TicketStatus.BAD_SIGNATURE:
            return [self.error_to(env, E_AUTH, "invalid ticket")]
        if status is TicketStatus.EXPIRED:
            return [self.error_to(env, E_NO_SESSION, "expired ticket")]
        fetch = self.make(
            self.repository_addr,
            "GET_CERT",
            {"subject_name": env.payload["origin_node"]},
        )
        self._pending_fwd[fetch.msg_id] = env
        return [fetch]

    def _finish_forward(self, request: Envelope, response: Envelope) -> list[Envelope]:
        cert = response.payload["cert"]
        crl = response.payload["crl"]
        origin = request.payload["origin_node"]
        status = verify_certificate(cert, self.ca_pub, self.clock, crl, self.signer)
        if (
            status is not VerifyStatus.OK
            or cert.subject_name != origin
            or cert.kind is not SubjectKind.SERVICE
        ):
            return [self.error_to(request, E_AUTH, "bad origin certificate")]
        proof = forward_proof_bytes(
            request.payload["ticket"].ticket_id,
            request.payload["effective_states"],
            origin,
            self.address,
            request.payload["service_id"],
        )
        if not self.signer.verify(
            cert.public_key, proof, request.payload["origin_signature"]
        ):
            return [self.error_to(request, E_AUTH, "bad origin signature")]
        services = policy_map(request.payload["effective_states"], self.policy_table)
        service_id = request.payload["service_id"]
        if service_id not in services:
            return [self.error_to(request, E_NOT_AUTHORIZED, f"service {service_id}")]
        return [self._render(request, service_id)]

    def poll(self, now: int) -> list[Envelope]:
        out: list[Envelope] = []
        still_held = []
        for env, deadline in self.held:
            if now >= deadline:
                out.append(self.error_to(env, E_NO_SESSION, "no effective state"))
            else:
                still_held.append((env, deadline))
        self.held = still_held
        return out

    def pending_work(self) -> bool:
        return bool(self.held)

    def summary(self) -> dict:
        return {"kind": self.kind, "sessions": len(self.records)}


class UserAgentNode(NodeBehavior):
    """User-side agent: registration, access requests, service activation.

    Activated interfaces always equal the most recent SERVICE_LIST; invoking
    anything outside it is refused locally without touching the network.
    """

    kind = "user"

    def __init__(
        self,
        address: str,
        signer: Signer,
        keypair: KeyPair,
        ca_pub: bytes,
        ca_addr: str,
        repository_addr: str,
        discovery_addr: str,
    ):
        super().__init__(address)
        self.signer = signer
        self.keypair = keypair
        self.ca_pub = ca_pub
        self.ca_addr = ca_addr
        self.repository_addr = repository_addr
        self.discovery_addr = discovery_addr
        self.own_cert = None
        self.ticket: Ticket | None = None
        self.service_addr: str | None = None
        self.active_services = None
        self.results: list[tuple[int, str]] = []
        self.failures: list[tuple[str, str]] = []
        self.desired: int | None = None
        self._pending: dict[int, str] = {}

    def registration_envelopes(self) -> list[Envelope]:
        return [
            self.make(
                self.ca_addr,
                "REG_USER",
                {"subject_name": self.address, "public_key": self.keypair.public},
            )
        ]

    def request_access(self, invoke: int | None = None) -> list[Envelope]:
        if self.own_cert is None:
            raise ValueError(f"{self.address!r} is not registered")
        self.ticket = None
        self.service_addr = None
        self.active_services = None
        self.results = []
        self.failures = []
        self.desired = invoke
        fetch = self.make(
            self.repository_addr, "GET_CERT", {"subject_name": self.discovery_addr}
        )
        self._pending[fetch.msg_id] = "disc_cert"
        return [fetch]

    def handle(self, env: Envelope, now: int) -> list[Envelope]:
        if env.msg_type == "REG_ACK":
            self.own_cert = env.payload["cert"]
            return []
        if env.msg_type == "CERT_RESPONSE":
            purpose = self._pending.pop(env.correlation_id, None)
            if purpose == "disc_cert":
                return self._on_disc_cert(env)
            if purpose == "svc_cert":
                return self._on_svc_cert(env)
            return []
        if env.msg_type == "SEND_NODE":
            return self._on_send_node(env)
        if env.msg_type == "SERVICE_LIST":
            return self._on_service_list(env)
        if env.msg_type == "SERVICE_RESULT":
            self.results.append(
                (env.payload["service_id"], env.payload["body"])
            )
            return []
        if env.msg_type == "ERROR":
            self.failures.append((env.payload["code"], env.payload["detail"]))
            return []
        return []

    def _verify_peer(self, env: Envelope, expected_subject: str) -> bool:
        cert = env.payload["cert"]
        status = verify_certificate(
            cert, self.ca_pub, self.clock, env.payload["crl"], self.signer
        )
        if status is not VerifyStatus.OK or cert.subject_name != expected_subject:
            self.failures.append(
                (E_BAD_PEER_CERT, f"{expected_subject}: {status.value}")
            )
            return False
        return True

    def _on_disc_cert(self, env: Envelope) -> list[Envelope]:
        if not self._verify_peer(env, self.discovery_addr):
            return []
        timestamp = self.clock
        signature = self.signer.sign(
            self.keypair.private,
            auth_proof_bytes(self.address, timestamp, self.discovery_addr),
        )
        return [
            self.make(
                self.discovery_addr,
                "GET_NODE",
                {
                    "user": self.address,
                    "cert_serial": self.own_cert.serial,
                    "timestamp": timestamp,
                    "user_signature": signature,
                },
            )
        ]

    def _on_send_node(self, env: Envelope) -> list[Envelope]:
        self.ticket = env.payload["ticket"]
        self.service_addr = env.payload["service_node_addr"]
        fetch = self.make(
            self.repository_addr, "GET_CERT", {"subject_name": self.service_addr}
        )
        self._pending[fetch.msg_id] = "svc_cert"
        return [fetch]

    def _on_svc_cert(self, env: Envelope) -> list[Envelope]:
        if not self._verify_peer(env, self.service_addr):
            return []
        return [
            self.make(
                self.service_addr,
                "SERV_REQ",
                {
                    "user": self.address,
                    "ticket": self.ticket,
                    "cert_serial": self.own_cert.serial,
                },
            )
        ]

    def _on_service_list(self, env: Envelope) -> list[Envelope]:
        self.active_services = env.payload["services"]
        if self.desired is None:
            return []
        if self.desired not in self.active_services:
            self.failures.append(
                (E_NOT_AUTHORIZED, f"service {self.desired} not in service list")
            )
            return []
        return [
            self.make(
                self.service_addr,
                "SERVICE_INVOKE",
                {"service_id": self.desired, "ticket": self.ticket},
            )
        ]

    def to_state(self) -> dict:
        return {"cert": cert_to_json(self.own_cert) if self.own_cert else None}

    def restore_state(self, state: dict) -> None:
        self.own_cert = cert_from_json(state["cert"]) if state["cert"] else None

    def summary(self) -> dict:
        return {
            "kind": self.kind,
            "active_services": (
                self.active_services.to_list() if self.active_services else []
            ),
            "results": [list(r) for r in self.results],
            "failures": [list(f) for f in self.failures],
        }
