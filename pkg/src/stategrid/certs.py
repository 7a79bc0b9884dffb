"""State-carrying certificates, issuance, revocation and storage.

Certificates are simplified signed records rather than X.509 blobs: the
subject's current state set rides in a first-class field, timestamps are
logical ticks, and the signature covers a canonical JSON serialization.
A monitor-triggered state change always rotates the certificate: the
authority issues a replacement under a fresh serial and retires the old
serial through the revocation list.
"""

from __future__ import annotations

import base64
import json
from dataclasses import dataclass, replace
from enum import Enum

from .errors import (
    DuplicateSubjectError,
    InvalidCertError,
    NotFoundError,
    SchemaError,
    UnknownSubjectError,
)
from .policy import GridConfig, StateSet, check_states
from .signers import KeyPair, Signer


class SubjectKind(str, Enum):
    USER = "user"
    DISCOVERY = "discovery"
    SERVICE = "service"


class VerifyStatus(str, Enum):
    OK = "ok"
    EXPIRED = "expired"
    BAD_SIGNATURE = "bad_signature"
    REVOKED = "revoked"


@dataclass(frozen=True)
class Certificate:
    serial: int
    subject_name: str
    kind: SubjectKind
    public_key: bytes
    state_list: StateSet
    issued_at: int
    expires_at: int
    issuer: str
    signature: bytes = b""
    policy_blob: bytes | None = None  # reserved, unused

    def __post_init__(self):
        if self.issued_at >= self.expires_at:
            raise SchemaError(
                f"certificate lifetime empty: issued_at {self.issued_at} "
                f">= expires_at {self.expires_at}"
            )


def _b64(data: bytes) -> str:
    return base64.b64encode(data).decode("ascii")


def _unb64(text: str) -> bytes:
    if not isinstance(text, str):
        raise SchemaError(f"expected base64 string, got {type(text).__name__}")
    try:
        return base64.b64decode(text.encode("ascii"), validate=True)
    except Exception as exc:
        raise SchemaError(f"bad base64: {exc}") from exc


def canonical_json_bytes(obj) -> bytes:
    return json.dumps(obj, sort_keys=True, separators=(",", ":")).encode("utf-8")


def cert_to_json(cert: Certificate, *, with_signature: bool = True) -> dict:
    doc = {
        "serial": cert.serial,
        "subject_name": cert.subject_name,
        "kind": cert.kind.value,
        "public_key": _b64(cert.public_key),
        "state_list": cert.state_list.to_list(),
        "issued_at": cert.issued_at,
        "expires_at": cert.expires_at,
        "issuer": cert.issuer,
        "policy_blob": _b64(cert.policy_blob) if cert.policy_blob is not None else None,
    }
    if with_signature:
        doc["signature"] = _b64(cert.signature)
    return doc


_CERT_FIELDS = {
    "serial",
    "subject_name",
    "kind",
    "public_key",
    "state_list",
    "issued_at",
    "expires_at",
    "issuer",
    "policy_blob",
    "signature",
}


def cert_from_json(doc) -> Certificate:
    if not isinstance(doc, dict):
        raise SchemaError("certificate must be an object")
    if set(doc) != _CERT_FIELDS:
        raise SchemaError(
            f"certificate fields {sorted(set(doc) ^ _CERT_FIELDS)} missing or extra"
        )
    for field in ("serial", "issued_at", "expires_at"):
        value = doc[field]
        if isinstance(value, bool) or not isinstance(value, int):
            raise SchemaError(f"certificate {field} must be an integer")
    if doc["serial"] < 0:
        raise SchemaError("certificate serial must be non-negative")
    for field in ("subject_name", "issuer"):
        if not isinstance(doc[field], str):
            raise SchemaError(f"certificate {field} must be a string")
    try:
        kind = SubjectKind(doc["kind"])
    except ValueError:
        raise SchemaError(f"unknown subject kind {doc['kind']!r}") from None
    states = doc["state_list"]
    if not isinstance(states, list) or states != sorted(set(states)):
        raise SchemaError("state_list must be a sorted list of unique integers")
    for s in states:
        if isinstance(s, bool) or not isinstance(s, int) or s < 1:
            raise SchemaError(f"bad state {s!r} in state_list")
    blob = doc["policy_blob"]
    return Certificate(
        serial=doc["serial"],
        subject_name=doc["subject_name"],
        kind=kind,
        public_key=_unb64(doc["public_key"]),
        state_list=StateSet(states),
        issued_at=doc["issued_at"],
        expires_at=doc["expires_at"],
        issuer=doc["issuer"],
        signature=_unb64(doc["signature"]),
        policy_blob=_unb64(blob) if blob is not None else None,
    )


def canonical_bytes(cert: Certificate) -> bytes:
    """Deterministic serialization of everything except the signature."""
    return canonical_json_bytes(cert_to_json(cert, with_signature=False))


def verify_certificate(
    cert: Certificate,
    ca_public: bytes,
    now: int,
    crl: "Crl",
    signer: Signer,
) -> VerifyStatus:
    """Check a certificate; precedence is revoked > expired > bad signature.

    Revocation is the strongest administrative signal, so it wins even over
    a tampered or stale certificate.
    """
    if cert.serial in crl.serials:
        return VerifyStatus.REVOKED
    if now >= cert.expires_at:
        return VerifyStatus.EXPIRED
    if not signer.verify(ca_public, canonical_bytes(cert), cert.signature):
        return VerifyStatus.BAD_SIGNATURE
    return VerifyStatus.OK


class Crl:
    """Certificate revocation list; serials are only ever added."""

    def __init__(self, serials: set[int] | None = None, issued_at: int = 0):
        self.serials: set[int] = set(serials or ())
        self.issued_at = issued_at

    def add(self, serial: int, now: int) -> None:
        self.serials.add(serial)
        self.issued_at = max(self.issued_at, now)

    def merge(self, other: "Crl") -> None:
        self.serials |= other.serials
        self.issued_at = max(self.issued_at, other.issued_at)

    def snapshot(self) -> "Crl":
        return Crl(set(self.serials), self.issued_at)

    def __contains__(self, serial: int) -> bool:
        return serial in self.serials

    def __eq__(self, other) -> bool:
        return (
            isinstance(other, Crl)
            and self.serials == other.serials
            and self.issued_at == other.issued_at
        )

    def __repr__(self) -> str:
        return f"Crl({sorted(self.serials)!r}, issued_at={self.issued_at})"


def crl_to_json(crl: Crl) -> dict:
    return {"revoked_serials": sorted(crl.serials), "issued_at": crl.issued_at}


def crl_from_json(doc) -> Crl:
    if not isinstance(doc, dict) or set(doc) != {"revoked_serials", "issued_at"}:
        raise SchemaError("crl must be an object with revoked_serials and issued_at")
    serials = doc["revoked_serials"]
    if not isinstance(serials, list) or serials != sorted(set(serials)):
        raise SchemaError("revoked_serials must be a sorted list of unique integers")
    for s in serials:
        if isinstance(s, bool) or not isinstance(s, int) or s < 0:
            raise SchemaError(f"bad serial {s!r} in revoked_serials")
    issued = doc["issued_at"]
    if isinstance(issued, bool) or not isinstance(issued, int):
        raise SchemaError("crl issued_at must be an integer")
    return Crl(set(serials), issued)


class CertificateAuthority:
    """Issues, rotates and revokes certificates for one grid.

    Single-writer: all mutations go through one command stream. Serials
    increase strictly across issue and reissue, so the repository can always
    pick the newest certificate per subject by serial alone.
    """

    def __init__(self, name: str, signer: Signer, keypair: KeyPair, cfg: GridConfig):
        self.name = name
        self.signer = signer
        self.keypair = keypair
        self.cfg = cfg
        self.next_serial = 1
        self.current: dict[str, Certificate] = {}
        self.crl = Crl()

    @property
    def public_key(self) -> bytes:
        return self.keypair.public

    def _sign(self, cert: Certificate) -> Certificate:
        signature = self.signer.sign(self.keypair.private, canonical_bytes(cert))
        return replace(cert, signature=signature)

    def issue(
        self,
        subject_name: str,
        kind: SubjectKind,
        public_key: bytes,
        state_list: StateSet,
        now: int,
        validity_ticks: int,
    ) -> Certificate:
        if not subject_name:
            raise ValueError("subject_name must be non-empty")
        if validity_ticks <= 0:
            raise ValueError("validity_ticks must be positive")
        check_states(state_list, self.cfg)
        existing = self.current.get(subject_name)
        if existing is not None and existing.serial not in self.crl:
            raise DuplicateSubjectError(
                f"{subject_name!r} already holds certificate {existing.serial}"
            )
        cert = self._sign(
            Certificate(
                serial=self.next_serial,
                subject_name=subject_name,
                kind=kind,
                public_key=public_key,
                state_list=state_list,
                issued_at=now,
                expires_at=now + validity_ticks,
                issuer=self.name,
            )
        )
        self.next_serial += 1
        self.current[subject_name] = cert
        return cert

    def reissue(
        self,
        subject_name: str,
        new_state_list: StateSet,
        now: int,
        validity_ticks: int,
    ) -> Certificate:
        """Rotate a subject's certificate; the old serial joins the CRL.

        Rotation happens even when the state list is unchanged: a state
        change signal always produces a fresh certificate.
        """
        old = self.current.get(subject_name)
        if old is None:
            raise UnknownSubjectError(f"no certificate on file for {subject_name!r}")
        check_states(new_state_list, self.cfg)
        if validity_ticks <= 0:
            raise ValueError("validity_ticks must be positive")
        self.crl.add(old.serial, now)
        cert = self._sign(
            Certificate(
                serial=self.next_serial,
                subject_name=subject_name,
                kind=old.kind,
                public_key=old.public_key,
                state_list=new_state_list,
                issued_at=now,
                expires_at=now + validity_ticks,
                issuer=self.name,
            )
        )
        self.next_serial += 1
        self.current[subject_name] = cert
        return cert

    def revoke_subject(self, subject_name: str, now: int) -> int:
        """Retire a subject's current certificate without replacement."""
        cert = self.current.get(subject_name)
        if cert is None:
            raise UnknownSubjectError(f"no certificate on file for {subject_name!r}")
        self.crl.add(cert.serial, now)
        return cert.serial

    def to_state(self) -> dict:
        return {
            "next_serial": self.next_serial,
            "current": {
                name: cert_to_json(cert) for name, cert in sorted(self.current.items())
            },
            "crl": crl_to_json(self.crl),
        }

    def restore_state(self, state: dict) -> None:
        self.next_serial = state["next_serial"]
        self.current = {
            name: cert_from_json(doc) for name, doc in state["current"].items()
        }
        self.crl = crl_from_json(state["crl"])


class Repository:
    """Stores certificates and the CRL; serves the newest per subject."""

    def __init__(self, ca_public: bytes, signer: Signer):
        self.ca_public = ca_public
        self.signer = signer
        self.certs: dict[str, list[Certificate]] = {}
        self.crl = Crl()

    def store_cert(self, cert: Certificate, now: int) -> None:
        status = verify_certificate(cert, self.ca_public, now, self.crl, self.signer)
        if status is not VerifyStatus.OK:
            raise InvalidCertError(
                f"refusing to store certificate {cert.serial}: {status.value}"
            )
        self.certs.setdefault(cert.subject_name, []).append(cert)

    def get_cert(self, subject_name: str) -> Certificate:
        stored = self.certs.get(subject_name)
        if not stored:
            raise NotFoundError(f"no certificate stored for {subject_name!r}")
        return max(stored, key=lambda c: c.serial)

    def update_crl(self, crl: Crl) -> None:
        self.crl.merge(crl)

    def get_crl(self) -> Crl:
        return self.crl.snapshot()

    def to_state(self) -> dict:
        return {
            "certs": {
                name: [cert_to_json(c) for c in sorted(certs, key=lambda c: c.serial)]
                for name, certs in sorted(self.certs.items())
            },
            "crl": crl_to_json(self.crl),
        }

    def restore_state(self, state: dict) -> None:
        self.certs = {
            name: [cert_from_json(doc) for doc in docs]
            for name, docs in state["certs"].items()
        }
        self.crl = crl_from_json(state["crl"])
