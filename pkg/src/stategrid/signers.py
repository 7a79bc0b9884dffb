"""Pluggable signature schemes for certificates, tickets and auth proofs.

Two implementations share one contract: an Ed25519 signer for real
deployments and a keyed-hash double for tests and golden traces. Both are
deterministic given the key, which keeps recorded traces byte-stable.
"""

from __future__ import annotations

import hashlib
import hmac
import random
from typing import NamedTuple, Protocol

from cryptography.exceptions import InvalidSignature
from cryptography.hazmat.primitives import serialization
from cryptography.hazmat.primitives.asymmetric.ed25519 import (
    Ed25519PrivateKey,
    Ed25519PublicKey,
)

from .errors import ConfigError


class KeyPair(NamedTuple):
    private: bytes
    public: bytes


class Signer(Protocol):
    name: str

    def generate(self, rng: random.Random) -> KeyPair: ...

    def sign(self, private: bytes, data: bytes) -> bytes: ...

    def verify(self, public: bytes, data: bytes, signature: bytes) -> bool: ...


class Ed25519Signer:
    """Real asymmetric signatures; key seeds come from the caller's RNG so
    whole deployments can be derived reproducibly from one master seed."""

    name = "ed25519"

    def generate(self, rng: random.Random) -> KeyPair:
        private = rng.randbytes(32)
        key = Ed25519PrivateKey.from_private_bytes(private)
        public = key.public_key().public_bytes(
            serialization.Encoding.Raw, serialization.PublicFormat.Raw
        )
        return KeyPair(private, public)

    def sign(self, private: bytes, data: bytes) -> bytes:
        return Ed25519PrivateKey.from_private_bytes(private).sign(data)

    def verify(self, public: bytes, data: bytes, signature: bytes) -> bool:
        try:
            Ed25519PublicKey.from_public_bytes(public).verify(signature, data)
        except (InvalidSignature, ValueError):
            return False
        return True


class HmacSigner:
    """Keyed-hash test double.

    The "public" key is the shared secret itself, so anyone holding a
    certificate could forge with it. Useful only where the threat model is a
    unit test; never select it for a real deployment.
    """

    name = "hmac"

    def generate(self, rng: random.Random) -> KeyPair:
        secret = rng.randbytes(32)
        return KeyPair(secret, secret)

    def sign(self, private: bytes, data: bytes) -> bytes:
        return hmac.new(private, data, hashlib.sha256).digest()

    def verify(self, public: bytes, data: bytes, signature: bytes) -> bool:
        return hmac.compare_digest(self.sign(public, data), signature)


_SIGNERS: dict[str, Signer] = {s.name: s for s in (Ed25519Signer(), HmacSigner())}


def get_signer(name: str) -> Signer:
    try:
        return _SIGNERS[name]
    except KeyError:
        raise ConfigError(f"unknown signer {name!r}") from None


def derive_seed(*parts: object) -> int:
    """Stable 64-bit seed from labelled parts; unlike ``hash()`` this does
    not vary across processes."""
    digest = hashlib.sha256(":".join(str(p) for p in parts).encode()).digest()
    return int.from_bytes(digest[:8], "big")


def derive_rng(*parts: object) -> random.Random:
    return random.Random(derive_seed(*parts))


def derive_keypair(signer: Signer, *parts: object) -> KeyPair:
    return signer.generate(derive_rng(*parts))
