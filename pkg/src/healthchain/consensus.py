"""Proof-of-Authority sealing.

Authorities are admitted on the strength of a notarised attestation and then
take turns sealing blocks in strict round-robin over logical slots.  There is
no stake, reward or currency anywhere in this module.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, replace
from typing import Sequence

from . import crypto
from .ledger import (
    DEFAULT_BLOCK_CAPACITY,
    Block,
    Chain,
    CorruptRecord,
    TransactionRecord,
    Violation,
    ViolationKind,
    block_violations,
    sign_block,
)


class ConsensusError(Exception):
    pass


class InvalidAttestation(ConsensusError):
    pass


class DuplicateAuthority(ConsensusError):
    pass


class UnknownAuthority(ConsensusError):
    pass


class EmptyRegistry(ConsensusError):
    pass


class NotYourSlot(ConsensusError):
    pass


class NothingToSeal(ConsensusError):
    pass


@dataclass(frozen=True)
class Attestation:
    """A verifier's signed statement that ``subject`` is who it claims to be."""

    subject: str
    verifier: str
    statement: str
    signature: bytes = b""

    def payload(self) -> bytes:
        return crypto.canonical(
            {"subject": self.subject, "verifier": self.verifier, "statement": self.statement}
        ).encode()

    def verifies(self) -> bool:
        return crypto.verify(self.verifier, self.payload(), self.signature)

    def to_dict(self) -> dict:
        return {
            "subject": self.subject,
            "verifier": self.verifier,
            "statement": self.statement,
            "signature": self.signature.hex(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Attestation":
        return cls(d["subject"], d["verifier"], d["statement"], bytes.fromhex(d["signature"]))


def attest(subject: str, notary: crypto.KeyPair, statement: str) -> Attestation:
    unsigned = Attestation(subject, notary.public, statement)
    return replace(unsigned, signature=notary.sign(unsigned.payload()))


@dataclass(frozen=True)
class Removal:
    key: str
    reason: str
    timestamp: int


@dataclass(frozen=True)
class AuthorityRegistry:
    """Admitted authorities in admission order, which is also the rotation.

    ``notaries`` restricts who may attest; an empty tuple accepts any verifier
    whose signature checks out.
    """

    authorities: tuple[tuple[str, Attestation], ...] = ()
    slot_duration: int = 1
    genesis_time: int = 0
    notaries: tuple[str, ...] = ()
    removals: tuple[Removal, ...] = ()

    def __len__(self) -> int:
        return len(self.authorities)

    @property
    def keys(self) -> tuple[str, ...]:
        return tuple(k for k, _ in self.authorities)

    def __contains__(self, key: object) -> bool:
        return key in self.keys

    def slot_time(self, slot: int) -> int:
        return self.genesis_time + slot * self.slot_duration


def admit_authority(
    registry: AuthorityRegistry, candidate: str, attestation: Attestation
) -> AuthorityRegistry:
    if attestation.subject != candidate:
        raise InvalidAttestation("attestation is for a different subject")
    if registry.notaries and attestation.verifier not in registry.notaries:
        raise InvalidAttestation(f"verifier {attestation.verifier[:20]} is not a recognised notary")
    if not attestation.verifies():
        raise InvalidAttestation("attestation signature does not verify")
    if candidate in registry:
        raise DuplicateAuthority(candidate)
    return replace(registry, authorities=registry.authorities + ((candidate, attestation),))


def remove_authority(
    registry: AuthorityRegistry, key: str, reason: str, timestamp: int
) -> AuthorityRegistry:
    """Administrative removal; the audit record is kept in ``removals``."""
    if key not in registry:
        raise UnknownAuthority(key)
    return replace(
        registry,
        authorities=tuple(a for a in registry.authorities if a[0] != key),
        removals=registry.removals + (Removal(key, reason, timestamp),),
    )


def scheduled_sealer(registry: AuthorityRegistry, slot: int) -> str:
    if not registry.authorities:
        raise EmptyRegistry("no authorities admitted")
    return registry.authorities[slot % len(registry.authorities)][0]


def seal(
    registry: AuthorityRegistry,
    chain: Chain,
    pending: Sequence[TransactionRecord],
    slot: int,
    sealer: crypto.KeyPair,
    capacity: int = DEFAULT_BLOCK_CAPACITY,
) -> Block:
    """Seal up to ``capacity`` pending transactions, oldest first.

    The caller drops ``len(block.transactions)`` items from its queue.
    """
    if sealer.public != scheduled_sealer(registry, slot):
        raise NotYourSlot(f"slot {slot} belongs to another authority")
    if not pending:
        raise NothingToSeal(chain.chain_id)
    block = Block(
        prev_header=chain.next_prev_header(),
        transactions=tuple(pending[:capacity]),
        timestamp=registry.slot_time(slot),
        sealer=sealer.public,
        anchor=chain.anchor if not chain.blocks else "",
    )
    return sign_block(block, sealer)


def validate_block(
    registry: AuthorityRegistry,
    chain: Chain,
    block: Block,
    slot: int,
    capacity: int = DEFAULT_BLOCK_CAPACITY,
) -> Violation | None:
    """Return None if ``block`` may extend ``chain`` at ``slot``, else the
    first violation found."""
    index = len(chain.blocks)
    try:
        expected = scheduled_sealer(registry, slot)
    except EmptyRegistry:
        return Violation(index, ViolationKind.NOT_SCHEDULED, "registry is empty")
    problems = block_violations(block, index, chain.tip, chain)
    if problems:
        return problems[0]
    if block.sealer != expected:
        return Violation(index, ViolationKind.NOT_SCHEDULED, f"slot {slot}")
    if len(block.transactions) > capacity:
        return Violation(index, ViolationKind.OVER_CAPACITY)
    return None


def encode_registry(registry: AuthorityRegistry) -> str:
    records = [
        {
            "kind": "registry",
            "format_version": 1,
            "slot_duration": registry.slot_duration,
            "genesis_time": registry.genesis_time,
            "notaries": list(registry.notaries),
        }
    ]
    records += [
        {"kind": "authority", "key": key, "attestation": att.to_dict()}
        for key, att in registry.authorities
    ]
    records += [
        {"kind": "removal", "key": r.key, "reason": r.reason, "timestamp": r.timestamp}
        for r in registry.removals
    ]
    return "".join(crypto.canonical(r) + "\n" for r in records)


def decode_registry(text: str, path: str = "<memory>") -> AuthorityRegistry:
    lines = text.split("\n")
    if lines[-1] != "":
        raise CorruptRecord(path, len(lines), "truncated record")
    registry = None
    for lineno, line in enumerate(lines[:-1], start=1):
        try:
            rec = json.loads(line)
            kind = rec["kind"]
            if lineno == 1:
                if kind != "registry" or rec["format_version"] != 1:
                    raise ValueError("missing registry header")
                registry = AuthorityRegistry(
                    slot_duration=int(rec["slot_duration"]),
                    genesis_time=int(rec["genesis_time"]),
                    notaries=tuple(rec["notaries"]),
                )
            elif kind == "authority":
                att = Attestation.from_dict(rec["attestation"])
                if att.subject != rec["key"] or not att.verifies():
                    raise ValueError("attestation does not verify")
                registry = replace(
                    registry, authorities=registry.authorities + ((rec["key"], att),)
                )
            elif kind == "removal":
                removal = Removal(rec["key"], rec["reason"], int(rec["timestamp"]))
                registry = replace(registry, removals=registry.removals + (removal,))
            else:
                raise ValueError(f"unknown record kind {kind!r}")
        except (ValueError, KeyError, TypeError) as exc:
            raise CorruptRecord(path, lineno, str(exc)) from exc
    if registry is None:
        raise CorruptRecord(path, 1, "missing registry header")
    return registry
