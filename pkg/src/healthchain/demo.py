"""Desk-scale end-to-end run of the consortium network.

Hospitals join and are admitted as authorities, patients join, then a seeded
stream of transactions of every routed type (including access-list grants,
revokes and first accesses) is pushed through slot-by-slot sealing until all
queues drain.  The summary deliberately contains no paths or timings so the
same seed always prints the same bytes.
"""

from __future__ import annotations

import random
import tempfile
from dataclasses import dataclass, field
from pathlib import Path

from . import access, crypto
from .consensus import AuthorityRegistry, attest
from .ledger import ChainRole, TransactionRecord, TxType, header_digest
from .network import (
    MemberKind,
    NetworkState,
    anchoring_holds,
    check_invariants,
    load,
    persist,
    sidechain_purity_holds,
)

_TX_TYPES = (
    TxType.DISCHARGE_SUMMARY,
    TxType.INTER_HOSPITAL_SHARE,
    TxType.RECORD_ACCESS,
    TxType.DIAGNOSIS_OR_CHANGE,
    TxType.FINANCIAL,
)


@dataclass
class DemoResult:
    report: str
    ok: bool
    state: NetworkState
    failures: list[str] = field(default_factory=list)


def _keys(seed: int, role: str, count: int) -> list[crypto.KeyPair]:
    return [crypto.KeyPair.from_seed(f"demo/{seed}/{role}/{i}") for i in range(count)]


def run_demo(
    hospitals: int, patients: int, txs: int, seed: int, out_dir: str | Path | None = None,
    max_batch: int = 20,
) -> DemoResult:
    if hospitals < 1 or patients < 1 or txs < 0:
        raise ValueError("need at least one hospital and one patient")
    rng = random.Random(seed)
    notary = crypto.KeyPair.from_seed(f"demo/{seed}/notary")
    state = NetworkState(registry=AuthorityRegistry(notaries=(notary.public,)))

    h_keys = _keys(seed, "hospital", hospitals)
    p_keys = _keys(seed, "patient", patients)
    h_ids = []
    for key in h_keys:
        mid = state.join_member(MemberKind.HOSPITAL, key, timestamp=0)
        state.admit_authority(mid, attest(key.public, notary, f"identity of {mid} notarised"), key)
        h_ids.append(mid)
    p_ids = [state.join_member(MemberKind.PATIENT, key, timestamp=0) for key in p_keys]
    key_of = dict(zip(h_ids + p_ids, h_keys + p_keys))
    slot = state.drain(0)

    patient_txs: dict[str, list[TransactionRecord]] = {p: [] for p in p_ids}
    acl_ops = {"grant": 0, "revoke": 0, "access": 0}
    decisions = {"allowed": 0, "denied": 0}
    failures: list[str] = []
    submitted = 0

    def plain_tx(tx_type: TxType, parties: tuple[str, ...], ts: int) -> TransactionRecord:
        tx_id = f"{rng.getrandbits(128):032x}"
        payload = rng.getrandbits(256).to_bytes(32, "big")
        return TransactionRecord(
            tx_id=tx_id,
            tx_type=tx_type,
            data_hash=crypto.sha256_hex(payload),
            path=f"ehr/{parties[-1]}/{tx_id}",
            timestamp=ts,
            parties=parties,
        )

    while submitted < txs:
        ts = state.registry.slot_time(slot)
        batch = min(rng.randint(1, max_batch), txs - submitted)
        emitted = 0
        while emitted < batch:
            tx_type = rng.choice(_TX_TYPES)
            if tx_type is TxType.INTER_HOSPITAL_SHARE and hospitals < 2:
                continue
            h = rng.choice(h_ids)
            p = rng.choice(p_ids)
            if tx_type is TxType.RECORD_ACCESS:
                if _acl_event(state, rng, p, h_ids, key_of, patient_txs[p], ts, acl_ops, decisions):
                    emitted += 1
                continue
            if tx_type is TxType.INTER_HOSPITAL_SHARE:
                h1, h2 = rng.sample(h_ids, 2)
                tx = plain_tx(tx_type, (h1, h2), ts).signed_by(key_of[h1], key_of[h2])
            elif tx_type is TxType.DISCHARGE_SUMMARY:
                tx = plain_tx(tx_type, (h, p), ts).signed_by(key_of[h], key_of[p])
            elif tx_type is TxType.DIAGNOSIS_OR_CHANGE:
                tx = plain_tx(tx_type, (h, p), ts).signed_by(key_of[h])
            else:
                tx = plain_tx(tx_type, (h, p), ts).signed_by(key_of[p])
            stored = state.submit(tx)
            if tx_type is not TxType.INTER_HOSPITAL_SHARE:
                patient_txs[p].append(stored)
            emitted += 1
        submitted += emitted
        state.tick(slot)
        slot += 1
        if state.submitted_pairs != state.sealed_count() + state.pending_count():
            failures.append(f"conservation broken at slot {slot - 1}")
    slot = state.drain(slot)

    inv = check_invariants(state)
    failures.extend(inv.problems)
    anchoring = anchoring_holds(state)
    purity = sidechain_purity_holds(state)
    if not anchoring:
        failures.append("anchoring invariant violated")
    if not purity:
        failures.append("sidechain purity violated")

    audits = sum(
        1 for c in state.sidechains.values() if c.role is ChainRole.PATIENT_SIDECHAIN
        for tx in c.transactions() if tx.path.startswith(access.ACL_PATH_PREFIX)
    )
    if audits != sum(acl_ops.values()):
        failures.append(f"audit count {audits} != acl operations {sum(acl_ops.values())}")
    for pid in p_ids:
        replayed = access.replay_acl(pid, key_of[pid].public, state.sidechains[pid].transactions())
        if replayed != state.acls[pid]:
            failures.append(f"{pid}: access list does not replay from its sidechain")

    if out_dir is not None:
        persist(state, out_dir)
        reloaded = load(out_dir)
    else:
        with tempfile.TemporaryDirectory() as tmp:
            persist(state, tmp)
            reloaded = load(tmp)
    for original, copy in zip(state.chains(), reloaded.chains()):
        if [header_digest(b) for b in original.blocks] != [header_digest(b) for b in copy.blocks]:
            failures.append(f"{original.chain_id}: digests changed across persist/load")

    lines = [
        f"healthchain demo hospitals={hospitals} patients={patients} transactions={txs} seed={seed}",
        f"slots used: {slot}",
        f"authorities: {len(state.registry)}",
    ]
    for chain, rep in zip(state.chains(), inv.chains):
        n_tx = sum(len(b.transactions) for b in chain.blocks)
        status = "OK" if rep.ok else f"FAIL at block {rep.first.index} ({rep.first.kind.value})"
        tip = header_digest(chain.tip)[:16] if chain.blocks else "-"
        lines.append(
            f"{chain.chain_id:<15} blocks={len(chain.blocks):<4} sealed_tx={n_tx:<5} tip={tip} verify={status}"
        )
    lines += [
        f"pending after drain: {state.pending_count()}",
        f"acl operations: grant={acl_ops['grant']} revoke={acl_ops['revoke']} "
        f"first_access={acl_ops['access']} audit_tx={audits}",
        f"access checks: allowed={decisions['allowed']} denied={decisions['denied']}",
        f"anchoring: {'OK' if anchoring else 'FAIL'}",
        f"sidechain purity: {'OK' if purity else 'FAIL'}",
        f"invariants: {'OK' if not failures else 'FAIL'}",
    ]
    lines += [f"  - {f}" for f in failures]
    return DemoResult("\n".join(lines) + "\n", not failures and inv.ok, state, failures)


def _acl_event(state, rng, patient, h_ids, key_of, history, ts, acl_ops, decisions) -> bool:
    """Perform one access-list operation for ``patient``.  Returns True if it
    produced an audit transaction."""
    acl = state.acls[patient]
    pkey = key_of[patient]
    providers = [key_of[h].public for h in h_ids]
    op = rng.choice(("grant", "revoke", "access"))
    if op == "access" and not history:
        op = "grant"
    if op == "grant" and acl.authorized >= set(providers):
        op = "revoke"
    if op == "revoke" and not acl.authorized:
        op = "grant"

    if op == "grant":
        provider = rng.choice(sorted(set(providers) - acl.authorized))
        state.grant(patient, provider, pkey.sign(access.grant_payload(acl, provider, ts)), ts)
    elif op == "revoke":
        provider = rng.choice(sorted(acl.authorized))
        state.revoke(patient, provider, pkey.sign(access.revoke_payload(acl, provider, ts)), ts)
    else:
        h = rng.choice(h_ids)
        provider = key_of[h].public
        target = rng.choice(history)
        new = provider not in acl.accessors
        sig = key_of[h].sign(access.access_payload(acl, provider, ts))
        allowed = state.check_access(patient, provider, target, sig, ts)
        decisions["allowed" if allowed else "denied"] += 1
        if not new:
            return False
    acl_ops[op] += 1
    return True
