"""Block and transaction data model plus hash-chain integrity rules.

Everything here is a frozen value.  A chain grows only through
:func:`append_block`, which returns a new :class:`Chain`.
"""

from __future__ import annotations

import enum
import json
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable

from . import crypto

GENESIS_MARKER = "0" * 64
DEFAULT_BLOCK_CAPACITY = 256
FORMAT_VERSION = 1


class LedgerError(Exception):
    pass


class HashMismatch(LedgerError):
    pass


class TimestampRegression(LedgerError):
    pass


class EmptyBlock(LedgerError):
    pass


class CorruptRecord(LedgerError):
    def __init__(self, path: str | Path, line: int, reason: str = ""):
        self.path = str(path)
        self.line = line
        self.reason = reason
        super().__init__(f"{self.path}:{line}: corrupt record{': ' + reason if reason else ''}")


class TxType(str, enum.Enum):
    JOIN_LEAVE = "JoinLeave"
    DISCHARGE_SUMMARY = "DischargeSummary"
    INTER_HOSPITAL_SHARE = "InterHospitalShare"
    RECORD_ACCESS = "RecordAccess"
    DIAGNOSIS_OR_CHANGE = "DiagnosisOrChange"
    FINANCIAL = "Financial"


class ChainRole(str, enum.Enum):
    MAINCHAIN = "mainchain"
    PATIENT_SIDECHAIN = "patient_sidechain"
    HOSPITAL_SIDECHAIN = "hospital_sidechain"


@dataclass(frozen=True)
class TransactionRecord:
    """One routed event.

    ``parties`` lists the member ids the transaction concerns; routing and the
    sidechain-purity check read it.  ``signatures`` and ``acl`` are excluded
    from :meth:`signing_payload`, so parties sign the event itself and the
    access list can be stamped on at submission.
    """

    tx_id: str
    tx_type: TxType
    data_hash: str
    path: str
    timestamp: int
    parties: tuple[str, ...] = ()
    signatures: tuple[tuple[str, bytes], ...] = ()
    acl: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        object.__setattr__(self, "tx_type", TxType(self.tx_type))
        object.__setattr__(self, "parties", tuple(self.parties))
        object.__setattr__(
            self, "signatures", tuple((k, bytes(s)) for k, s in self.signatures)
        )
        object.__setattr__(self, "acl", tuple(self.acl))
        if len(set(self.acl)) != len(self.acl):
            raise ValueError(f"duplicate keys in acl of {self.tx_id}")

    def signing_payload(self) -> bytes:
        return crypto.canonical(
            {
                "tx_id": self.tx_id,
                "tx_type": self.tx_type.value,
                "data_hash": self.data_hash,
                "path": self.path,
                "timestamp": self.timestamp,
                "parties": list(self.parties),
            }
        ).encode()

    def signed_by(self, *keys: crypto.KeyPair) -> "TransactionRecord":
        payload = self.signing_payload()
        sigs = self.signatures + tuple((k.public, k.sign(payload)) for k in keys)
        return replace(self, signatures=sigs)

    def signatures_valid(self) -> bool:
        payload = self.signing_payload()
        return all(crypto.verify(key, payload, sig) for key, sig in self.signatures)

    def to_dict(self) -> dict:
        return {
            "tx_id": self.tx_id,
            "tx_type": self.tx_type.value,
            "data_hash": self.data_hash,
            "path": self.path,
            "timestamp": self.timestamp,
            "parties": list(self.parties),
            "signatures": [[k, s.hex()] for k, s in self.signatures],
            "acl": list(self.acl),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TransactionRecord":
        return cls(
            tx_id=_str(d["tx_id"]),
            tx_type=TxType(d["tx_type"]),
            data_hash=_str(d["data_hash"]),
            path=_str(d["path"]),
            timestamp=_int(d["timestamp"]),
            parties=tuple(_str(p) for p in d["parties"]),
            signatures=tuple((_str(k), bytes.fromhex(_str(s))) for k, s in d["signatures"]),
            acl=tuple(_str(k) for k in d["acl"]),
        )

    def digest(self) -> str:
        return crypto.sha256_hex(crypto.canonical(self.to_dict()))


@dataclass(frozen=True)
class Block:
    prev_header: str
    transactions: tuple[TransactionRecord, ...]
    timestamp: int
    sealer: str
    seal_signature: bytes = b""
    # join tx id carried by the first block of a sidechain
    anchor: str = ""

    def __post_init__(self) -> None:
        object.__setattr__(self, "transactions", tuple(self.transactions))

    def header_payload(self) -> bytes:
        return crypto.canonical(
            {
                "prev_header": self.prev_header,
                "tx_digests": [tx.digest() for tx in self.transactions],
                "timestamp": self.timestamp,
                "sealer": self.sealer,
                "anchor": self.anchor,
            }
        ).encode()

    def to_dict(self) -> dict:
        return {
            "prev_header": self.prev_header,
            "transactions": [tx.to_dict() for tx in self.transactions],
            "timestamp": self.timestamp,
            "sealer": self.sealer,
            "seal_signature": self.seal_signature.hex(),
            "anchor": self.anchor,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Block":
        return cls(
            prev_header=_str(d["prev_header"]),
            transactions=tuple(TransactionRecord.from_dict(t) for t in d["transactions"]),
            timestamp=_int(d["timestamp"]),
            sealer=_str(d["sealer"]),
            seal_signature=bytes.fromhex(_str(d["seal_signature"])),
            anchor=_str(d["anchor"]),
        )


def header_digest(block: Block) -> str:
    """SHA-256 over the canonical header: prev link, per-transaction digests
    in order, timestamp, sealer and anchor."""
    return crypto.sha256_hex(block.header_payload())


def sign_block(block: Block, sealer: crypto.KeyPair) -> Block:
    unsigned = replace(block, sealer=sealer.public)
    digest = header_digest(unsigned)
    return replace(unsigned, seal_signature=sealer.sign(digest.encode()))


def seal_valid(block: Block) -> bool:
    return crypto.verify(block.sealer, header_digest(block).encode(), block.seal_signature)


@dataclass(frozen=True)
class Chain:
    chain_id: str
    role: ChainRole
    owner: str = ""
    anchor: str = ""
    blocks: tuple[Block, ...] = ()
    genesis_marker: str = field(default=GENESIS_MARKER)

    def __post_init__(self) -> None:
        object.__setattr__(self, "role", ChainRole(self.role))
        object.__setattr__(self, "blocks", tuple(self.blocks))

    def __len__(self) -> int:
        return len(self.blocks)

    @property
    def tip(self) -> Block | None:
        return self.blocks[-1] if self.blocks else None

    def next_prev_header(self) -> str:
        return header_digest(self.blocks[-1]) if self.blocks else self.genesis_marker

    def transactions(self) -> Iterable[TransactionRecord]:
        for block in self.blocks:
            yield from block.transactions

    def header_record(self) -> dict:
        return {
            "chain_id": self.chain_id,
            "role": self.role.value,
            "owner": self.owner,
            "anchor": self.anchor,
            "format_version": FORMAT_VERSION,
        }


def append_block(chain: Chain, block: Block) -> Chain:
    if not block.transactions:
        raise EmptyBlock(f"{chain.chain_id}: block has no transactions")
    expected = chain.next_prev_header()
    if block.prev_header != expected:
        raise HashMismatch(
            f"{chain.chain_id}: prev_header {block.prev_header[:12]} != {expected[:12]}"
        )
    if chain.blocks and block.timestamp < chain.blocks[-1].timestamp:
        raise TimestampRegression(
            f"{chain.chain_id}: {block.timestamp} < tip {chain.blocks[-1].timestamp}"
        )
    return replace(chain, blocks=chain.blocks + (block,))


class ViolationKind(str, enum.Enum):
    HASH_MISMATCH = "HashMismatch"
    TIMESTAMP_REGRESSION = "TimestampRegression"
    EMPTY_BLOCK = "EmptyBlock"
    BAD_SEAL = "BadSeal"
    ANCHOR_MISMATCH = "AnchorMismatch"
    NOT_SCHEDULED = "NotScheduled"
    OVER_CAPACITY = "OverCapacity"


@dataclass(frozen=True)
class Violation:
    index: int
    kind: ViolationKind
    detail: str = ""


@dataclass(frozen=True)
class ChainReport:
    chain_id: str
    length: int
    violations: tuple[Violation, ...] = ()

    @property
    def ok(self) -> bool:
        return not self.violations

    @property
    def first(self) -> Violation | None:
        return self.violations[0] if self.violations else None

    def status(self) -> str:
        if self.ok:
            return f"OK ({self.length} blocks)"
        v = self.first
        return f"FAIL at block {v.index} ({v.kind.value}) {v.detail}".rstrip()

    def __str__(self) -> str:
        return f"{self.chain_id}: {self.status()}"


def block_violations(block: Block, index: int, prev: Block | None, chain: Chain) -> list[Violation]:
    out = []
    expected = header_digest(prev) if prev is not None else chain.genesis_marker
    if block.prev_header != expected:
        out.append(Violation(index, ViolationKind.HASH_MISMATCH, "prev_header does not match"))
    if prev is not None and block.timestamp < prev.timestamp:
        out.append(Violation(index, ViolationKind.TIMESTAMP_REGRESSION))
    if not block.transactions:
        out.append(Violation(index, ViolationKind.EMPTY_BLOCK))
    if index == 0 and block.anchor != chain.anchor:
        out.append(Violation(index, ViolationKind.ANCHOR_MISMATCH))
    if index > 0 and block.anchor:
        out.append(Violation(index, ViolationKind.ANCHOR_MISMATCH, "anchor only allowed on block 0"))
    if not seal_valid(block):
        out.append(Violation(index, ViolationKind.BAD_SEAL))
    return out


def verify_chain(chain: Chain) -> ChainReport:
    """Check every link, timestamp, anchor and seal signature.

    All violations are collected; ``report.first`` is the earliest.  A
    mutated transaction breaks its own block's seal and also the next
    block's link.
    """
    violations: list[Violation] = []
    prev = None
    for i, block in enumerate(chain.blocks):
        violations.extend(block_violations(block, i, prev, chain))
        prev = block
    return ChainReport(chain.chain_id, len(chain.blocks), tuple(violations))


# --- chain file format -------------------------------------------------------


def encode_block(block: Block) -> str:
    return crypto.canonical(block.to_dict())


def decode_block(line: str) -> Block:
    return Block.from_dict(json.loads(line))


def encode_chain(chain: Chain) -> str:
    lines = [crypto.canonical(chain.header_record())]
    lines.extend(encode_block(b) for b in chain.blocks)
    return "".join(line + "\n" for line in lines)


def decode_chain(text: str, path: str | Path = "<memory>") -> Chain:
    """Parse a chain file.  Each line must re-encode to exactly its stored
    bytes, otherwise digests would drift between writer and reader."""
    if not text:
        raise CorruptRecord(path, 1, "missing header record")
    lines = text.split("\n")
    if lines[-1] != "":
        # final record lacks its newline: truncated write
        raise CorruptRecord(path, len(lines), "truncated record")
    lines = lines[:-1]
    try:
        header = json.loads(lines[0])
        if header.get("format_version") != FORMAT_VERSION:
            raise ValueError(f"unsupported format_version {header.get('format_version')!r}")
        chain = Chain(
            chain_id=_str(header["chain_id"]),
            role=ChainRole(header["role"]),
            owner=_str(header["owner"]),
            anchor=_str(header["anchor"]),
        )
    except (ValueError, KeyError, TypeError, AttributeError) as exc:
        raise CorruptRecord(path, 1, str(exc)) from exc
    if crypto.canonical(chain.header_record()) != lines[0]:
        raise CorruptRecord(path, 1, "non-canonical header")
    blocks = []
    for lineno, line in enumerate(lines[1:], start=2):
        try:
            block = decode_block(line)
        except (ValueError, KeyError, TypeError, AttributeError) as exc:
            raise CorruptRecord(path, lineno, str(exc)) from exc
        if encode_block(block) != line:
            raise CorruptRecord(path, lineno, "non-canonical encoding")
        blocks.append(block)
    return replace(chain, blocks=tuple(blocks))


def write_chain(chain: Chain, path: str | Path) -> None:
    Path(path).write_text(encode_chain(chain), encoding="ascii")


def read_chain(path: str | Path) -> Chain:
    raw = Path(path).read_bytes()
    try:
        text = raw.decode("ascii")
    except UnicodeDecodeError as exc:
        raise CorruptRecord(path, raw[: exc.start].count(b"\n") + 1, "non-ASCII byte") from exc
    return decode_chain(text, path)


def _str(v) -> str:
    if not isinstance(v, str):
        raise TypeError(f"expected string, got {type(v).__name__}")
    return v


def _int(v) -> int:
    if not isinstance(v, int) or isinstance(v, bool):
        raise TypeError(f"expected integer, got {type(v).__name__}")
    return v


