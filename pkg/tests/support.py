"""Builders shared by the test modules."""

from __future__ import annotations

import random
from dataclasses import replace

from healthchain import crypto
from healthchain.ledger import (
    Block,
    Chain,
    ChainRole,
    TransactionRecord,
    TxType,
    append_block,
    sign_block,
)

TYPES = list(TxType)


def stub_key(name: str) -> crypto.KeyPair:
    return crypto.KeyPair.from_seed(name, scheme="stub")


def ed_key(name: str) -> crypto.KeyPair:
    return crypto.KeyPair.from_seed(name)


def make_tx(i: int, signer: crypto.KeyPair | None = None, tx_type=TxType.DIAGNOSIS_OR_CHANGE,
            parties=("patient-00001",), ts: int = 0, acl=()) -> TransactionRecord:
    tx = TransactionRecord(
        tx_id=f"tx-{i:06d}",
        tx_type=tx_type,
        data_hash=crypto.sha256_hex(f"payload {i}"),
        path=f"ehr/{i}",
        timestamp=ts,
        parties=parties,
        acl=acl,
    )
    return tx.signed_by(signer) if signer is not None else tx


def make_chain(n_blocks: int, sealer: crypto.KeyPair, txs_per_block: int = 2,
               anchor: str = "", chain_id: str = "c") -> Chain:
    chain = Chain(chain_id, ChainRole.PATIENT_SIDECHAIN, owner="patient-00001", anchor=anchor)
    k = 0
    for b in range(n_blocks):
        txs = []
        for _ in range(txs_per_block):
            txs.append(make_tx(k, sealer, ts=b, acl=(f"stub:{k:04x}",)))
            k += 1
        block = Block(chain.next_prev_header(), tuple(txs), timestamp=b, sealer="",
                      anchor=anchor if b == 0 else "")
        chain = append_block(chain, sign_block(block, sealer))
    return chain


def _flip_char(s: str, rng: random.Random) -> str:
    if not s:
        return "x"
    i = rng.randrange(len(s))
    c = s[i]
    bit = 1 << rng.randrange(5)
    return s[:i] + chr(ord(c) ^ bit) + s[i + 1:]


def _flip_bytes(b: bytes, rng: random.Random) -> bytes:
    if not b:
        return b"\x01"
    i = rng.randrange(len(b))
    arr = bytearray(b)
    arr[i] ^= 1 << rng.randrange(8)
    return bytes(arr)


def _mutate_tx(tx: TransactionRecord, rng: random.Random) -> tuple[TransactionRecord, str]:
    field = rng.choice(["tx_id", "tx_type", "data_hash", "path", "timestamp", "parties",
                        "signatures", "acl"])
    if field in ("tx_id", "data_hash", "path"):
        return replace(tx, **{field: _flip_char(getattr(tx, field), rng)}), field
    if field == "tx_type":
        return replace(tx, tx_type=rng.choice([t for t in TYPES if t is not tx.tx_type])), field
    if field == "timestamp":
        return replace(tx, timestamp=tx.timestamp ^ (1 << rng.randrange(31))), field
    if field == "parties":
        parties = list(tx.parties)
        if parties and rng.random() < 0.5:
            parties[0] = _flip_char(parties[0], rng)
        else:
            parties.append("patient-99999")
        return replace(tx, parties=tuple(parties)), field
    if field == "signatures":
        key, sig = tx.signatures[0]
        if rng.random() < 0.5:
            sigs = ((key, _flip_bytes(sig, rng)),) + tx.signatures[1:]
        else:
            sigs = ((_flip_char(key, rng), sig),) + tx.signatures[1:]
        return replace(tx, signatures=sigs), field
    acl = list(tx.acl)
    if acl and rng.random() < 0.5:
        acl.pop(rng.randrange(len(acl)))
    else:
        acl.append(f"stub:new{rng.randrange(10**6)}")
    return replace(tx, acl=tuple(acl)), field


def mutate_chain(chain: Chain, rng: random.Random) -> tuple[Chain, int, str]:
    """Change exactly one field of one block (or of one of its transactions).
    Returns the mutated chain, the block index and the field name."""
    idx = rng.randrange(len(chain.blocks))
    block = chain.blocks[idx]
    field = rng.choice(["prev_header", "timestamp", "sealer", "seal_signature", "anchor",
                        "transactions", "transaction_field"])
    if field == "prev_header":
        new = replace(block, prev_header=_flip_char(block.prev_header, rng))
    elif field == "timestamp":
        new = replace(block, timestamp=block.timestamp ^ (1 << rng.randrange(31)))
    elif field == "sealer":
        new = replace(block, sealer=_flip_char(block.sealer, rng))
    elif field == "seal_signature":
        new = replace(block, seal_signature=_flip_bytes(block.seal_signature, rng))
    elif field == "anchor":
        new = replace(block, anchor=_flip_char(block.anchor, rng))
    elif field == "transactions":
        txs = list(block.transactions)
        op = rng.choice(["drop", "dup", "swap"]) if len(txs) > 1 else "dup"
        if op == "drop":
            txs.pop(rng.randrange(len(txs)))
        elif op == "dup":
            txs.insert(rng.randrange(len(txs) + 1), rng.choice(txs))
        else:
            i, j = rng.sample(range(len(txs)), 2)
            txs[i], txs[j] = txs[j], txs[i]
        new = replace(block, transactions=tuple(txs))
    else:
        txs = list(block.transactions)
        i = rng.randrange(len(txs))
        txs[i], sub = _mutate_tx(txs[i], rng)
        field = f"tx.{sub}"
        new = replace(block, transactions=tuple(txs))
    assert new != block, field
    blocks = list(chain.blocks)
    blocks[idx] = new
    return replace(chain, blocks=tuple(blocks)), idx, field
