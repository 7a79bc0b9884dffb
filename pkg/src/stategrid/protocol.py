"""Message vocabulary and wire encoding.

One envelope per line: canonical JSON (sorted keys, compact separators,
ASCII-escaped), UTF-8, terminated by LF. The same codec backs both the
in-memory simulator and the socket transport, so recorded traces from
either can be compared byte for byte. Integers are decimal, byte strings
base64, and every payload is validated strictly against the catalog on
both encode and decode.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, replace
from enum import Enum

from .certs import (
    Certificate,
    Crl,
    canonical_json_bytes,
    cert_from_json,
    cert_to_json,
    crl_from_json,
    crl_to_json,
    _b64,
    _unb64,
)
from .errors import SchemaError, UnknownTypeError, VersionError
from .policy import ServiceSet, StateSet
from .signers import Signer

WIRE_VERSION = 1


@dataclass(frozen=True)
class Ticket:
    """Discovery-issued session correlator.

    Binds the effective state pushed to a service node to the user's later
    service request; valid strictly before ``issued_at + ttl_ticks``.
    """

    ticket_id: str  # 128-bit nonce, 32 hex digits
    user: str
    issued_at: int
    ttl_ticks: int
    discovery_signature: bytes = b""


class TicketStatus(str, Enum):
    OK = "ok"
    EXPIRED = "expired"
    BAD_SIGNATURE = "bad_signature"


def ticket_to_json(ticket: Ticket, *, with_signature: bool = True) -> dict:
    doc = {
        "ticket_id": ticket.ticket_id,
        "user": ticket.user,
        "issued_at": ticket.issued_at,
        "ttl_ticks": ticket.ttl_ticks,
    }
    if with_signature:
        doc["discovery_signature"] = _b64(ticket.discovery_signature)
    return doc


def ticket_from_json(doc) -> Ticket:
    fields = {"ticket_id", "user", "issued_at", "ttl_ticks", "discovery_signature"}
    if not isinstance(doc, dict) or set(doc) != fields:
        raise SchemaError("ticket fields missing or extra")
    tid = doc["ticket_id"]
    if not isinstance(tid, str) or len(tid) != 32 or any(
        c not in "0123456789abcdef" for c in tid
    ):
        raise SchemaError(f"ticket_id must be 32 lowercase hex digits, got {tid!r}")
    if not isinstance(doc["user"], str):
        raise SchemaError("ticket user must be a string")
    for field in ("issued_at", "ttl_ticks"):
        value = doc[field]
        if isinstance(value, bool) or not isinstance(value, int):
            raise SchemaError(f"ticket {field} must be an integer")
    if doc["ttl_ticks"] <= 0:
        raise SchemaError("ticket ttl_ticks must be positive")
    return Ticket(
        ticket_id=tid,
        user=doc["user"],
        issued_at=doc["issued_at"],
        ttl_ticks=doc["ttl_ticks"],
        discovery_signature=_unb64(doc["discovery_signature"]),
    )


def ticket_signing_bytes(ticket: Ticket) -> bytes:
    return canonical_json_bytes(ticket_to_json(ticket, with_signature=False))


def sign_ticket(ticket: Ticket, signer: Signer, private: bytes) -> Ticket:
    return replace(
        ticket, discovery_signature=signer.sign(private, ticket_signing_bytes(ticket))
    )


def validate_ticket(
    ticket: Ticket, discovery_public: bytes, now: int, signer: Signer
) -> TicketStatus:
    """Bad signature beats expiry: a forged ticket is never merely stale."""
    if not signer.verify(
        discovery_public, ticket_signing_bytes(ticket), ticket.discovery_signature
    ):
        return TicketStatus.BAD_SIGNATURE
    if now >= ticket.issued_at + ticket.ttl_ticks:
        return TicketStatus.EXPIRED
    return TicketStatus.OK


def auth_proof_bytes(user: str, timestamp: int, recipient: str) -> bytes:
    """Bytes a user signs to authenticate a GET_NODE to one recipient."""
    return canonical_json_bytes(
        {"user": user, "timestamp": timestamp, "recipient": recipient}
    )


def forward_proof_bytes(
    ticket_id: str,
    effective_states: StateSet,
    origin_node: str,
    recipient: str,
    service_id: int,
) -> bytes:
    """Bytes a forwarding node signs so the next node can check provenance."""
    return canonical_json_bytes(
        {
            "ticket_id": ticket_id,
            "effective_states": effective_states.to_list(),
            "origin_node": origin_node,
            "recipient": recipient,
            "service_id": service_id,
        }
    )


# Payload field kinds.
_STR = "str"
_INT = "int"
_BOOL = "bool"
_BYTES = "bytes"
_STATES = "state_set"
_SERVICES = "service_set"
_CERT = "cert"
_CRL = "crl"
_TICKET = "ticket"

# msg_type -> {field: kind}. STATE_QUERY/STATE_RESPONSE carry the
# authority's consultation of the monitor at registration time, and
# CRL_UPDATE pushes revocations to the repository; the rest realize the
# user/discovery/service exchange and its administration.
CATALOG: dict[str, dict[str, str]] = {
    "REG_USER": {"subject_name": _STR, "public_key": _BYTES},
    "REG_DISC": {"subject_name": _STR, "public_key": _BYTES},
    "REG_SERV": {"subject_name": _STR, "public_key": _BYTES},
    "REG_ACK": {"cert": _CERT},
    "GET_CERT": {"subject_name": _STR},
    "CERT_RESPONSE": {"cert": _CERT, "crl": _CRL},
    "GET_NODE": {
        "user": _STR,
        "cert_serial": _INT,
        "timestamp": _INT,
        "user_signature": _BYTES,
    },
    "SEND_NODE": {"service_node_addr": _STR, "ticket": _TICKET},
    "SEND_EFF_STATE": {"user": _STR, "effective_states": _STATES, "ticket": _TICKET},
    "SERV_REQ": {"user": _STR, "ticket": _TICKET, "cert_serial": _INT},
    "SERVICE_LIST": {"services": _SERVICES, "ticket": _TICKET},
    "SERVICE_INVOKE": {"service_id": _INT, "ticket": _TICKET},
    "SERVICE_RESULT": {"service_id": _INT, "body": _STR},
    "FORWARD_REQ": {
        "ticket": _TICKET,
        "effective_states": _STATES,
        "origin_node": _STR,
        "origin_signature": _BYTES,
        "service_id": _INT,
    },
    "STATE_CHANGE": {"user": _STR, "new_states": _STATES},
    "STATE_QUERY": {"subject_name": _STR},
    "STATE_RESPONSE": {"subject_name": _STR, "states": _STATES},
    "STORE_CERT": {"cert": _CERT},
    "CRL_UPDATE": {"crl": _CRL},
    "NODE_STATUS": {"free": _BOOL},
    "ERROR": {"code": _STR, "detail": _STR},
}


@dataclass(frozen=True)
class Envelope:
    msg_id: int
    sender: str
    recipient: str
    msg_type: str
    payload: dict
    correlation_id: int | None = None
    version: int = WIRE_VERSION


def _encode_field(kind: str, value, field: str):
    if kind == _STR:
        if not isinstance(value, str):
            raise SchemaError(f"{field} must be a string")
        return value
    if kind == _INT:
        if isinstance(value, bool) or not isinstance(value, int):
            raise SchemaError(f"{field} must be an integer")
        return value
    if kind == _BOOL:
        if not isinstance(value, bool):
            raise SchemaError(f"{field} must be a boolean")
        return value
    if kind == _BYTES:
        if not isinstance(value, bytes):
            raise SchemaError(f"{field} must be bytes")
        return _b64(value)
    if kind == _STATES:
        if not isinstance(value, StateSet):
            raise SchemaError(f"{field} must be a StateSet")
        return value.to_list()
    if kind == _SERVICES:
        if not isinstance(value, ServiceSet):
            raise SchemaError(f"{field} must be a ServiceSet")
        return value.to_list()
    if kind == _CERT:
        if not isinstance(value, Certificate):
            raise SchemaError(f"{field} must be a Certificate")
        return cert_to_json(value)
    if kind == _CRL:
        if not isinstance(value, Crl):
            raise SchemaError(f"{field} must be a Crl")
        return crl_to_json(value)
    if kind == _TICKET:
        if not isinstance(value, Ticket):
            raise SchemaError(f"{field} must be a Ticket")
        return ticket_to_json(value)
    raise AssertionError(f"unhandled field kind {kind}")


def _decode_id_list(value, field: str) -> list[int]:
    if not isinstance(value, list):
        raise SchemaError(f"{field} must be a list")
    for item in value:
        if isinstance(item, bool) or not isinstance(item, int) or item < 1:
            raise SchemaError(f"{field} contains bad id {item!r}")
    if value != sorted(set(value)):
        raise SchemaError(f"{field} must be sorted and duplicate-free")
    return value


def _decode_field(kind: str, value, field: str):
    if kind == _STR:
        if not isinstance(value, str):
            raise SchemaError(f"{field} must be a string")
        return value
    if kind == _INT:
        if isinstance(value, bool) or not isinstance(value, int):
            raise SchemaError(f"{field} must be an integer")
        return value
    if kind == _BOOL:
        if not isinstance(value, bool):
            raise SchemaError(f"{field} must be a boolean")
        return value
    if kind == _BYTES:
        return _unb64(value)
    if kind == _STATES:
        return StateSet(_decode_id_list(value, field))
    if kind == _SERVICES:
        return ServiceSet(_decode_id_list(value, field))
    if kind == _CERT:
        return cert_from_json(value)
    if kind == _CRL:
        return crl_from_json(value)
    if kind == _TICKET:
        return ticket_from_json(value)
    raise AssertionError(f"unhandled field kind {kind}")


def encode_envelope(env: Envelope) -> bytes:
    """Canonical single-line encoding, LF-terminated."""
    if env.version != WIRE_VERSION:
        raise VersionError(f"cannot encode version {env.version}")
    schema = CATALOG.get(env.msg_type)
    if schema is None:
        raise UnknownTypeError(f"unknown msg_type {env.msg_type!r}")
    if isinstance(env.msg_id, bool) or not isinstance(env.msg_id, int) or env.msg_id < 0:
        raise SchemaError(f"msg_id must be a non-negative integer, got {env.msg_id!r}")
    if env.correlation_id is not None and (
        isinstance(env.correlation_id, bool)
        or not isinstance(env.correlation_id, int)
        or env.correlation_id < 0
    ):
        raise SchemaError(f"bad correlation_id {env.correlation_id!r}")
    for name in ("sender", "recipient"):
        if not isinstance(getattr(env, name), str) or not getattr(env, name):
            raise SchemaError(f"{name} must be a non-empty string")
    if set(env.payload) != set(schema):
        raise SchemaError(
            f"{env.msg_type} payload fields "
            f"{sorted(set(env.payload) ^ set(schema))} missing or extra"
        )
    doc = {
        "version": env.version,
        "msg_id": env.msg_id,
        "correlation_id": env.correlation_id,
        "sender": env.sender,
        "recipient": env.recipient,
        "msg_type": env.msg_type,
        "payload": {
            field: _encode_field(kind, env.payload[field], field)
            for field, kind in schema.items()
        },
    }
    return canonical_json_bytes(doc) + b"\n"


_ENVELOPE_FIELDS = {
    "version",
    "msg_id",
    "correlation_id",
    "sender",
    "recipient",
    "msg_type",
    "payload",
}


def decode_envelope(data: bytes) -> Envelope:
    if not isinstance(data, bytes):
        raise SchemaError("envelope must be bytes")
    line = data[:-1] if data.endswith(b"\n") else data
    if b"\n" in line:
        raise SchemaError("envelope must be a single line")
    try:
        doc = json.loads(line.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise SchemaError(f"bad envelope JSON: {exc}") from exc
    if not isinstance(doc, dict) or set(doc) != _ENVELOPE_FIELDS:
        raise SchemaError("envelope fields missing or extra")
    version = doc["version"]
    if isinstance(version, bool) or not isinstance(version, int):
        raise SchemaError("version must be an integer")
    if version != WIRE_VERSION:
        raise VersionError(f"unsupported wire version {version}")
    msg_type = doc["msg_type"]
    if not isinstance(msg_type, str):
        raise SchemaError("msg_type must be a string")
    schema = CATALOG.get(msg_type)
    if schema is None:
        raise UnknownTypeError(f"unknown msg_type {msg_type!r}")
    msg_id = doc["msg_id"]
    if isinstance(msg_id, bool) or not isinstance(msg_id, int) or msg_id < 0:
        raise SchemaError(f"bad msg_id {msg_id!r}")
    correlation = doc["correlation_id"]
    if correlation is not None and (
        isinstance(correlation, bool) or not isinstance(correlation, int) or correlation < 0
    ):
        raise SchemaError(f"bad correlation_id {correlation!r}")
    for name in ("sender", "recipient"):
        if not isinstance(doc[name], str) or not doc[name]:
            raise SchemaError(f"{name} must be a non-empty string")
    raw_payload = doc["payload"]
    if not isinstance(raw_payload, dict) or set(raw_payload) != set(schema):
        raise SchemaError(f"{msg_type} payload fields missing or extra")
    payload = {
        field: _decode_field(kind, raw_payload[field], field)
        for field, kind in schema.items()
    }
    return Envelope(
        msg_id=msg_id,
        sender=doc["sender"],
        recipient=doc["recipient"],
        msg_type=msg_type,
        payload=payload,
        correlation_id=correlation,
        version=version,
    )
