"""Digests, canonical encoding and pluggable signature schemes.

Public keys are strings of the form ``"<scheme>:<hex>"`` so that a verifier
can dispatch on the prefix without out-of-band configuration.  Two schemes
ship with the package:

* ``ed25519`` - real signatures backed by ``cryptography``.
* ``stub`` - a keyed-hash construction that anyone holding the public key can
  forge.  It exists so property tests can run thousands of verifications
  cheaply; never use it outside tests and simulations.
"""

from __future__ import annotations

import hashlib
import hmac
import json
import random
from dataclasses import dataclass, field
from typing import Any, Callable

from cryptography.exceptions import InvalidSignature
from cryptography.hazmat.primitives import serialization
from cryptography.hazmat.primitives.asymmetric.ed25519 import (
    Ed25519PrivateKey,
    Ed25519PublicKey,
)

NULL_KEY = ""


def canonical(obj: Any) -> str:
    """Deterministic JSON text: sorted keys, no whitespace, ASCII only."""
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), ensure_ascii=True)


def sha256_hex(data: bytes | str) -> str:
    if isinstance(data, str):
        data = data.encode("utf-8")
    return hashlib.sha256(data).hexdigest()


def _stub_sign(secret: bytes, public_hex: str, message: bytes) -> bytes:
    return hmac.new(bytes.fromhex(public_hex), message, hashlib.sha256).digest()


def _stub_verify(public_hex: str, message: bytes, signature: bytes) -> bool:
    expected = hmac.new(bytes.fromhex(public_hex), message, hashlib.sha256).digest()
    return hmac.compare_digest(expected, signature)


def _ed25519_public(secret: bytes) -> str:
    raw = Ed25519PrivateKey.from_private_bytes(secret).public_key().public_bytes(
        serialization.Encoding.Raw, serialization.PublicFormat.Raw
    )
    return raw.hex()


def _ed25519_sign(secret: bytes, public_hex: str, message: bytes) -> bytes:
    return Ed25519PrivateKey.from_private_bytes(secret).sign(message)


def _ed25519_verify(public_hex: str, message: bytes, signature: bytes) -> bool:
    try:
        Ed25519PublicKey.from_public_bytes(bytes.fromhex(public_hex)).verify(
            signature, message
        )
    except (InvalidSignature, ValueError):
        return False
    return True


@dataclass(frozen=True)
class Scheme:
    name: str
    derive_public: Callable[[bytes], str]
    sign: Callable[[bytes, str, bytes], bytes]
    verify: Callable[[str, bytes, bytes], bool]


SCHEMES: dict[str, Scheme] = {
    "ed25519": Scheme("ed25519", _ed25519_public, _ed25519_sign, _ed25519_verify),
    "stub": Scheme(
        "stub", lambda secret: hashlib.sha256(secret).hexdigest(), _stub_sign, _stub_verify
    ),
}


def register_scheme(scheme: Scheme) -> None:
    SCHEMES[scheme.name] = scheme


@dataclass(frozen=True)
class KeyPair:
    """A signing key.  ``public`` is the prefixed public key string."""

    scheme: str
    secret: bytes = field(repr=False)
    public: str = ""

    def __post_init__(self) -> None:
        if self.scheme not in SCHEMES:
            raise ValueError(f"unknown signature scheme {self.scheme!r}")
        if not self.public:
            pub = SCHEMES[self.scheme].derive_public(self.secret)
            object.__setattr__(self, "public", f"{self.scheme}:{pub}")

    @classmethod
    def from_seed(cls, seed: bytes | str, scheme: str = "ed25519") -> "KeyPair":
        if isinstance(seed, str):
            seed = seed.encode("utf-8")
        return cls(scheme, hashlib.sha256(seed).digest())

    @classmethod
    def generate(cls, rng: random.Random | None = None, scheme: str = "ed25519") -> "KeyPair":
        rng = rng or random.SystemRandom()
        return cls(scheme, rng.getrandbits(256).to_bytes(32, "big"))

    def sign(self, message: bytes) -> bytes:
        _, pub = self.public.split(":", 1)
        return SCHEMES[self.scheme].sign(self.secret, pub, message)


def verify(public_key: str, message: bytes, signature: bytes) -> bool:
    """Check ``signature`` over ``message`` under a prefixed public key.

    Unknown schemes and malformed keys verify as False rather than raising.
    """
    scheme_name, sep, pub = public_key.partition(":")
    scheme = SCHEMES.get(scheme_name)
    if not sep or scheme is None:
        return False
    try:
        return scheme.verify(pub, message, signature)
    except ValueError:
        return False
