"""Mainchain plus per-member sidechains: membership, routing, sealing, storage.

Routing follows the transaction table of the architecture:

==================  ==========================================
JoinLeave           mainchain
DischargeSummary    mainchain and the patient's sidechain
InterHospitalShare  sidechains of both hospitals
RecordAccess        the patient's sidechain
DiagnosisOrChange   the patient's sidechain
Financial           the patient's sidechain
==================  ==========================================

A transaction routed to two chains is enqueued on both under the same
``tx_id``; that shared id is the mainchain anchor.
"""

from __future__ import annotations

import enum
import json
from collections import deque
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Mapping

from . import access, crypto
from .consensus import (
    Attestation,
    AuthorityRegistry,
    ConsensusError,
    admit_authority,
    decode_registry,
    encode_registry,
    scheduled_sealer,
    seal,
)
from .ledger import (
    DEFAULT_BLOCK_CAPACITY,
    Chain,
    ChainReport,
    ChainRole,
    CorruptRecord,
    TransactionRecord,
    TxType,
    append_block,
    read_chain,
    verify_chain,
    write_chain,
)

MAINCHAIN_ID = "mainchain"

REGISTRY_FILE = "registry.jsonl"
MEMBERS_FILE = "members.jsonl"
MAINCHAIN_FILE = "mainchain.jsonl"
PENDING_FILE = "pending.jsonl"
SIDECHAIN_DIR = "sidechains"


class NetworkError(Exception):
    pass


class DuplicateMember(NetworkError):
    pass


class RoutingError(NetworkError):
    pass


class UnknownMember(RoutingError):
    pass


class InactiveMember(RoutingError):
    pass


class UnroutableType(RoutingError):
    """Unknown transaction type, or parties that do not fit the type."""


class MissingSignature(NetworkError):
    pass


class InvalidSignature(NetworkError):
    pass


class DuplicateTransaction(NetworkError):
    pass


class MemberKind(str, enum.Enum):
    HOSPITAL = "hospital"
    PATIENT = "patient"


@dataclass(frozen=True)
class MemberIdentity:
    member_id: str
    kind: MemberKind
    public_key: str
    sidechain_id: str
    join_tx_id: str
    active: bool = True

    def to_dict(self) -> dict:
        return {
            "member_id": self.member_id,
            "kind": self.kind.value,
            "public_key": self.public_key,
            "sidechain_id": self.sidechain_id,
            "join_tx_id": self.join_tx_id,
            "active": self.active,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "MemberIdentity":
        active = d["active"]
        if not isinstance(active, bool):
            raise TypeError("active must be a boolean")
        return cls(
            d["member_id"], MemberKind(d["kind"]), d["public_key"], d["sidechain_id"],
            d["join_tx_id"], active,
        )


def _membership_tx(member: MemberIdentity, action: str, timestamp: int) -> TransactionRecord:
    body = {"member": member.member_id, "kind": member.kind.value, "key": member.public_key,
            "action": action}
    digest = crypto.sha256_hex(crypto.canonical(body))
    return TransactionRecord(
        tx_id=digest[:32],
        tx_type=TxType.JOIN_LEAVE,
        data_hash=digest,
        path=f"members/{member.member_id}/{action}",
        timestamp=timestamp,
        parties=(member.member_id,),
    )


@dataclass
class NetworkState:
    """The whole consortium, held in one process.

    ``keyring`` maps authority public keys to their signing keys so that
    :meth:`tick` can seal.  It is never written to disk.
    """

    mainchain: Chain = field(default_factory=lambda: Chain(MAINCHAIN_ID, ChainRole.MAINCHAIN))
    sidechains: dict[str, Chain] = field(default_factory=dict)
    members: dict[str, MemberIdentity] = field(default_factory=dict)
    pending: dict[str, deque[TransactionRecord]] = field(default_factory=dict)
    registry: AuthorityRegistry = field(default_factory=AuthorityRegistry)
    acls: dict[str, access.PatientAcl] = field(default_factory=dict)
    keyring: dict[str, crypto.KeyPair] = field(default_factory=dict, repr=False)
    capacity: int = DEFAULT_BLOCK_CAPACITY
    submitted_pairs: int = 0
    _tx_ids: set[str] = field(default_factory=set, repr=False)

    # --- lookups ----------------------------------------------------------

    def chain(self, chain_id: str) -> Chain:
        if chain_id == MAINCHAIN_ID:
            return self.mainchain
        return self.sidechains[chain_id]

    def chains(self) -> list[Chain]:
        return [self.mainchain] + [self.sidechains[k] for k in sorted(self.sidechains)]

    def member_by_key(self, public_key: str) -> MemberIdentity | None:
        for m in self.members.values():
            if m.public_key == public_key:
                return m
        return None

    def pending_count(self, chain_id: str | None = None) -> int:
        if chain_id is not None:
            return len(self.pending.get(chain_id, ()))
        return sum(len(q) for q in self.pending.values())

    def sealed_count(self) -> int:
        return sum(len(b.transactions) for c in self.chains() for b in c.blocks)

    # --- membership -------------------------------------------------------

    def join_member(self, kind: MemberKind | str, key: crypto.KeyPair, timestamp: int = 0) -> str:
        """Register a hospital or patient and create its sidechain.

        The signed JoinLeave transaction is queued for the mainchain; the new
        sidechain records its id as the anchor its first block must carry.
        """
        kind = MemberKind(kind)
        if self.member_by_key(key.public) is not None:
            raise DuplicateMember(key.public)
        n = sum(1 for m in self.members.values() if m.kind is kind) + 1
        member_id = f"{kind.value}-{n:05d}"
        while member_id in self.members:
            n += 1
            member_id = f"{kind.value}-{n:05d}"
        draft = MemberIdentity(member_id, kind, key.public, member_id, "")
        tx = _membership_tx(draft, "join", timestamp).signed_by(key)
        member = replace(draft, join_tx_id=tx.tx_id)
        role = ChainRole.PATIENT_SIDECHAIN if kind is MemberKind.PATIENT else ChainRole.HOSPITAL_SIDECHAIN
        self.members[member_id] = member
        self.sidechains[member_id] = Chain(member_id, role, owner=member_id, anchor=tx.tx_id)
        if kind is MemberKind.PATIENT:
            self.acls[member_id] = access.PatientAcl(member_id, key.public)
        self.submit(tx)
        return member_id

    def leave_member(self, member_id: str, key: crypto.KeyPair, timestamp: int = 0) -> None:
        """Flag the member inactive.  Its sidechain stays readable but accepts
        no new transactions."""
        member = self._member(member_id)
        if not member.active:
            raise InactiveMember(member_id)
        if key.public != member.public_key:
            raise InvalidSignature(f"leave for {member_id} not signed by the member")
        self.submit(_membership_tx(member, "leave", timestamp).signed_by(key))
        self.members[member_id] = replace(member, active=False)

    def admit_authority(
        self, member_id: str, attestation: Attestation, key: crypto.KeyPair | None = None
    ) -> None:
        """Add a hospital to the sealing rotation.  ``key`` is kept in the
        local keyring so this process can seal on the hospital's behalf."""
        member = self._member(member_id)
        if member.kind is not MemberKind.HOSPITAL:
            raise NetworkError("only hospitals may become authorities")
        self.registry = admit_authority(self.registry, member.public_key, attestation)
        if key is not None:
            self.keyring[key.public] = key

    # --- routing ----------------------------------------------------------

    def _member(self, member_id: str) -> MemberIdentity:
        try:
            return self.members[member_id]
        except KeyError:
            raise UnknownMember(member_id) from None

    def route(self, tx: TransactionRecord) -> frozenset[str]:
        """Chains a transaction must be recorded on, by type and parties."""
        parties = [self._member(p) for p in tx.parties]
        patients = sorted({m.member_id for m in parties if m.kind is MemberKind.PATIENT})
        hospitals = sorted({m.member_id for m in parties if m.kind is MemberKind.HOSPITAL})
        t = tx.tx_type
        if t is TxType.JOIN_LEAVE:
            if len(parties) != 1:
                raise UnroutableType("JoinLeave names exactly one member")
            return frozenset({MAINCHAIN_ID})
        if t is TxType.INTER_HOSPITAL_SHARE:
            if len(hospitals) != 2:
                raise UnroutableType("InterHospitalShare needs two distinct hospitals")
            targets = frozenset(hospitals)
        elif t in (TxType.DISCHARGE_SUMMARY, TxType.RECORD_ACCESS,
                   TxType.DIAGNOSIS_OR_CHANGE, TxType.FINANCIAL):
            if len(patients) != 1:
                raise UnroutableType(f"{t.value} needs exactly one patient")
            targets = frozenset(patients)
            if t is TxType.DISCHARGE_SUMMARY:
                targets |= {MAINCHAIN_ID}
        else:  # pragma: no cover - TxType is closed
            raise UnroutableType(str(t))
        for chain_id in targets - {MAINCHAIN_ID}:
            if not self.members[chain_id].active:
                raise InactiveMember(chain_id)
        return targets

    def submit(self, tx: TransactionRecord) -> TransactionRecord:
        """Validate, stamp the patient's access list, and enqueue on every
        routed chain.  Returns the record as enqueued."""
        targets = self.route(tx)
        if not tx.signatures:
            raise MissingSignature(tx.tx_id)
        if not tx.signatures_valid():
            raise InvalidSignature(tx.tx_id)
        if tx.tx_id in self._tx_ids:
            raise DuplicateTransaction(tx.tx_id)
        patients = [c for c in targets if c in self.acls]
        if patients:
            tx = replace(tx, acl=self.acls[patients[0]].snapshot())
        self._tx_ids.add(tx.tx_id)
        for chain_id in sorted(targets):
            self.pending.setdefault(chain_id, deque()).append(tx)
        self.submitted_pairs += len(targets)
        return tx

    # --- access control ---------------------------------------------------

    def grant(self, patient_id: str, provider: str, signature: bytes, timestamp: int = 0) -> TransactionRecord:
        acl, audit = access.grant(self._acl(patient_id), provider, signature, timestamp)
        self._commit_acl(patient_id, acl, audit)
        return audit

    def revoke(self, patient_id: str, provider: str, signature: bytes, timestamp: int = 0) -> TransactionRecord:
        acl, audit = access.revoke(self._acl(patient_id), provider, signature, timestamp)
        self._commit_acl(patient_id, acl, audit)
        return audit

    def check_access(
        self, patient_id: str, provider: str, tx: TransactionRecord, signature: bytes,
        timestamp: int = 0,
    ) -> bool:
        result = access.check_access(self._acl(patient_id), provider, tx, signature, timestamp)
        if result.audit is not None:
            self._commit_acl(patient_id, result.acl, result.audit)
        return result.allowed

    def _commit_acl(self, patient_id: str, acl: access.PatientAcl, audit: TransactionRecord) -> None:
        # the audit tx is stamped from self.acls, so install first and roll back on failure
        previous = self.acls[patient_id]
        self.acls[patient_id] = acl
        try:
            self.submit(audit)
        except NetworkError:
            self.acls[patient_id] = previous
            raise

    def _acl(self, patient_id: str) -> access.PatientAcl:
        try:
            return self.acls[patient_id]
        except KeyError:
            raise UnknownMember(patient_id) from None

    # --- sealing ----------------------------------------------------------

    def tick(self, slot: int) -> list[str]:
        """Have the slot's scheduled authority seal one block on every chain
        with pending transactions.  Returns the chain ids that grew.

        Chains do not compete, so each gets its own block in the same slot.
        """
        sealer_key = scheduled_sealer(self.registry, slot)
        busy = [c for c in [MAINCHAIN_ID, *sorted(self.sidechains)] if self.pending.get(c)]
        if not busy:
            return []
        try:
            sealer = self.keyring[sealer_key]
        except KeyError:
            raise ConsensusError(f"no signing key held for scheduled sealer {sealer_key[:24]}") from None
        for chain_id in busy:
            queue = self.pending[chain_id]
            chain = self.chain(chain_id)
            block = seal(self.registry, chain, list(queue), slot, sealer, self.capacity)
            chain = append_block(chain, block)
            for _ in block.transactions:
                queue.popleft()
            if chain_id == MAINCHAIN_ID:
                self.mainchain = chain
            else:
                self.sidechains[chain_id] = chain
        return busy

    def drain(self, start_slot: int, max_slots: int = 1_000_000) -> int:
        """Tick until every queue is empty.  Returns the next unused slot."""
        slot = start_slot
        while self.pending_count():
            if slot - start_slot >= max_slots:
                raise NetworkError("queues did not drain")
            self.tick(slot)
            slot += 1
        return slot


# --- invariants ---------------------------------------------------------------


@dataclass
class NetworkReport:
    chains: list[ChainReport]
    problems: list[str]

    @property
    def ok(self) -> bool:
        return not self.problems and all(r.ok for r in self.chains)


def check_invariants(state: NetworkState) -> NetworkReport:
    """Verify every chain and the cross-chain invariants.

    Covers hash links and seals, member/sidechain bijection, join anchors,
    routing conformance, sidechain purity, discharge-summary anchoring,
    tx id reuse across chains and conservation of (tx_id, chain) pairs.
    """
    reports = [verify_chain(c) for c in state.chains()]
    problems: list[str] = []

    if set(state.sidechains) != set(state.members):
        problems.append("members and sidechains are not in bijection")
    for mid, member in state.members.items():
        chain = state.sidechains.get(mid)
        if chain is None:
            continue
        if chain.owner != mid or member.sidechain_id != mid or chain.anchor != member.join_tx_id:
            problems.append(f"{mid}: sidechain linkage broken")
    main_ids = {tx.tx_id for tx in state.mainchain.transactions()}
    main_ids |= {tx.tx_id for tx in state.pending.get(MAINCHAIN_ID, ())}
    for mid, member in state.members.items():
        if member.join_tx_id not in main_ids:
            problems.append(f"{mid}: join transaction missing from mainchain")

    authorities = set(state.registry.keys) | {r.key for r in state.registry.removals}
    placements: dict[str, set[str]] = {}
    for chain in state.chains():
        for block in chain.blocks:
            if block.sealer not in authorities:
                problems.append(f"{chain.chain_id}: block sealed by non-authority")
            for tx in block.transactions:
                placements.setdefault(tx.tx_id, set()).add(chain.chain_id)
                if chain.role is not ChainRole.MAINCHAIN and chain.owner not in tx.parties:
                    problems.append(f"{chain.chain_id}: {tx.tx_id} does not name the owner")
    for chain_id, queue in state.pending.items():
        for tx in queue:
            placements.setdefault(tx.tx_id, set()).add(chain_id)

    all_txs: dict[str, TransactionRecord] = {}
    for chain in state.chains():
        for tx in chain.transactions():
            all_txs.setdefault(tx.tx_id, tx)
    for queue in state.pending.values():
        for tx in queue:
            all_txs.setdefault(tx.tx_id, tx)
    for tx_id, tx in all_txs.items():
        try:
            expected = state.route(tx)
        except InactiveMember:
            # routed while the member was active
            expected = placements[tx_id]
        except RoutingError as exc:
            problems.append(f"{tx_id}: unroutable ({exc})")
            continue
        if placements[tx_id] != set(expected):
            problems.append(
                f"{tx_id}: on {sorted(placements[tx_id])}, routing says {sorted(expected)}"
            )

    sealed_pairs = state.sealed_count()
    pending_pairs = state.pending_count()
    if state.submitted_pairs != sealed_pairs + pending_pairs:
        problems.append(
            f"conservation: submitted {state.submitted_pairs} != sealed {sealed_pairs}"
            f" + pending {pending_pairs}"
        )
    return NetworkReport(reports, problems)


def sidechain_purity_holds(state: NetworkState) -> bool:
    """Every transaction on a member's sidechain names that member."""
    return all(
        chain.owner in tx.parties
        for chain in state.sidechains.values()
        for tx in chain.transactions()
    )


def anchoring_holds(state: NetworkState) -> bool:
    """Every sealed DischargeSummary appears sealed on both the mainchain and
    a patient sidechain."""
    on_main = {tx.tx_id for tx in state.mainchain.transactions()
               if tx.tx_type is TxType.DISCHARGE_SUMMARY}
    on_side = {tx.tx_id for c in state.sidechains.values() if c.role is ChainRole.PATIENT_SIDECHAIN
               for tx in c.transactions() if tx.tx_type is TxType.DISCHARGE_SUMMARY}
    return on_main == on_side


# --- persistence ----------------------------------------------------------------


def persist(state: NetworkState, directory: str | Path) -> None:
    """Write the network as newline-delimited canonical records."""
    root = Path(directory)
    (root / SIDECHAIN_DIR).mkdir(parents=True, exist_ok=True)
    (root / REGISTRY_FILE).write_text(encode_registry(state.registry), encoding="ascii")
    header = {"kind": "network", "format_version": 1, "capacity": state.capacity}
    records = [header] + [state.members[m].to_dict() for m in sorted(state.members)]
    (root / MEMBERS_FILE).write_text(
        "".join(crypto.canonical(r) + "\n" for r in records), encoding="ascii"
    )
    write_chain(state.mainchain, root / MAINCHAIN_FILE)
    for mid, chain in state.sidechains.items():
        write_chain(chain, root / SIDECHAIN_DIR / f"{mid}.jsonl")
    lines = [
        crypto.canonical({"chain_id": cid, "tx": tx.to_dict()})
        for cid in sorted(state.pending) for tx in state.pending[cid]
    ]
    (root / PENDING_FILE).write_text("".join(line + "\n" for line in lines), encoding="ascii")


def _read_records(path: Path) -> list[tuple[int, dict]]:
    raw = path.read_bytes()
    text = raw.decode("ascii", errors="replace")
    lines = text.split("\n")
    if lines[-1] != "":
        raise CorruptRecord(path, len(lines), "truncated record")
    out = []
    for lineno, line in enumerate(lines[:-1], start=1):
        try:
            rec = json.loads(line)
        except ValueError as exc:
            raise CorruptRecord(path, lineno, str(exc)) from exc
        if not isinstance(rec, dict) or crypto.canonical(rec) != line:
            raise CorruptRecord(path, lineno, "non-canonical record")
        out.append((lineno, rec))
    return out


def load(directory: str | Path, keyring: Mapping[str, crypto.KeyPair] | None = None) -> NetworkState:
    """Read a network written by :func:`persist`.  An empty directory yields
    an empty network; access lists are rebuilt from the sidechains."""
    root = Path(directory)
    if not root.is_dir():
        raise FileNotFoundError(f"no such network directory: {root}")
    state = NetworkState(keyring=dict(keyring or {}))
    if (root / REGISTRY_FILE).exists():
        text = (root / REGISTRY_FILE).read_bytes().decode("ascii", errors="replace")
        state.registry = decode_registry(text, str(root / REGISTRY_FILE))
    if (root / MAINCHAIN_FILE).exists():
        state.mainchain = read_chain(root / MAINCHAIN_FILE)
    members_path = root / MEMBERS_FILE
    if members_path.exists():
        for lineno, rec in _read_records(members_path):
            try:
                if lineno == 1:
                    if rec.get("kind") != "network" or rec.get("format_version") != 1:
                        raise ValueError("missing network header")
                    state.capacity = int(rec["capacity"])
                    continue
                member = MemberIdentity.from_dict(rec)
            except (ValueError, KeyError, TypeError) as exc:
                raise CorruptRecord(members_path, lineno, str(exc)) from exc
            chain_path = root / SIDECHAIN_DIR / f"{member.member_id}.jsonl"
            if not chain_path.exists():
                raise CorruptRecord(members_path, lineno, f"missing sidechain file {chain_path.name}")
            state.members[member.member_id] = member
            state.sidechains[member.member_id] = read_chain(chain_path)
    pending_path = root / PENDING_FILE
    if pending_path.exists():
        for lineno, rec in _read_records(pending_path):
            try:
                cid = rec["chain_id"]
                if cid != MAINCHAIN_ID and cid not in state.sidechains:
                    raise ValueError(f"unknown chain {cid!r}")
                tx = TransactionRecord.from_dict(rec["tx"])
            except (ValueError, KeyError, TypeError) as exc:
                raise CorruptRecord(pending_path, lineno, str(exc)) from exc
            state.pending.setdefault(cid, deque()).append(tx)
    for mid, member in state.members.items():
        if member.kind is MemberKind.PATIENT:
            txs = list(state.sidechains[mid].transactions()) + list(state.pending.get(mid, ()))
            state.acls[mid] = access.replay_acl(mid, member.public_key, txs)
    state._tx_ids = {tx.tx_id for c in state.chains() for tx in c.transactions()}
    state._tx_ids |= {tx.tx_id for q in state.pending.values() for tx in q}
    state.submitted_pairs = state.sealed_count() + state.pending_count()
    return state


def chain_files(directory: str | Path) -> Iterable[Path]:
    root = Path(directory)
    main = root / MAINCHAIN_FILE
    if main.exists():
        yield main
    side = root / SIDECHAIN_DIR
    if side.is_dir():
        yield from sorted(side.glob("*.jsonl"))
