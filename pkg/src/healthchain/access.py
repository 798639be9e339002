"""Patient-controlled access lists.

A patient's list of authorized provider keys behaves like a small contract:
every grant and revoke must carry the patient's signature and produces a
``RecordAccess`` audit transaction bound for the patient's sidechain.  The
first time a given provider reads any of the patient's records, one more
audit transaction is produced.

The signature a patient (or provider) supplies is over the audit
transaction's signing payload, so the same bytes authorize the change and
sign the transaction that records it.  Use :func:`grant_payload`,
:func:`revoke_payload` and :func:`access_payload` to obtain what to sign.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Iterable

from . import crypto
from .ledger import TransactionRecord, TxType

ACL_PATH_PREFIX = "acl/"


class AclError(Exception):
    pass


class BadSignature(AclError):
    pass


class AlreadyAuthorized(AclError):
    pass


class NotAuthorized(AclError):
    pass


class WrongPatient(AclError):
    pass


class NullKey(AclError):
    pass


@dataclass(frozen=True)
class PatientAcl:
    patient_id: str
    patient_key: str
    authorized: frozenset[str] = frozenset()
    version: int = 0
    # providers that have already triggered a first-access audit
    accessors: frozenset[str] = frozenset()

    def snapshot(self) -> tuple[str, ...]:
        return tuple(sorted(self.authorized))


def _audit_tx(patient_id: str, op: str, provider: str, version: int, timestamp: int,
              acl: tuple[str, ...]) -> TransactionRecord:
    ident = {"patient": patient_id, "op": op, "provider": provider, "version": version}
    digest = crypto.sha256_hex(crypto.canonical(ident))
    return TransactionRecord(
        tx_id=digest[:32],
        tx_type=TxType.RECORD_ACCESS,
        data_hash=digest,
        path=f"{ACL_PATH_PREFIX}{op}/{provider}",
        timestamp=timestamp,
        parties=(patient_id,),
        acl=acl,
    )


def _grant_tx(acl: PatientAcl, provider: str, timestamp: int) -> TransactionRecord:
    after = tuple(sorted(acl.authorized | {provider}))
    return _audit_tx(acl.patient_id, "grant", provider, acl.version + 1, timestamp, after)


def _revoke_tx(acl: PatientAcl, provider: str, timestamp: int) -> TransactionRecord:
    after = tuple(sorted(acl.authorized - {provider}))
    return _audit_tx(acl.patient_id, "revoke", provider, acl.version + 1, timestamp, after)


def _access_tx(acl: PatientAcl, provider: str, timestamp: int) -> TransactionRecord:
    # version 0 keeps the id stable: only one first-access record per provider
    return _audit_tx(acl.patient_id, "access", provider, 0, timestamp, acl.snapshot())


def grant_payload(acl: PatientAcl, provider: str, timestamp: int = 0) -> bytes:
    return _grant_tx(acl, provider, timestamp).signing_payload()


def revoke_payload(acl: PatientAcl, provider: str, timestamp: int = 0) -> bytes:
    return _revoke_tx(acl, provider, timestamp).signing_payload()


def access_payload(acl: PatientAcl, provider: str, timestamp: int = 0) -> bytes:
    return _access_tx(acl, provider, timestamp).signing_payload()


def grant(
    acl: PatientAcl, provider: str, patient_signature: bytes, timestamp: int = 0
) -> tuple[PatientAcl, TransactionRecord]:
    """Authorize ``provider``.  Returns the new list and its audit transaction."""
    if provider == crypto.NULL_KEY:
        raise NullKey("cannot authorize the null key")
    tx = _grant_tx(acl, provider, timestamp)
    if not crypto.verify(acl.patient_key, tx.signing_payload(), patient_signature):
        raise BadSignature(f"grant for {acl.patient_id} not signed by the patient")
    if provider in acl.authorized:
        raise AlreadyAuthorized(provider)
    new = replace(acl, authorized=acl.authorized | {provider}, version=acl.version + 1)
    return new, replace(tx, signatures=((acl.patient_key, patient_signature),))


def revoke(
    acl: PatientAcl, provider: str, patient_signature: bytes, timestamp: int = 0
) -> tuple[PatientAcl, TransactionRecord]:
    tx = _revoke_tx(acl, provider, timestamp)
    if not crypto.verify(acl.patient_key, tx.signing_payload(), patient_signature):
        raise BadSignature(f"revoke for {acl.patient_id} not signed by the patient")
    if provider not in acl.authorized:
        raise NotAuthorized(provider)
    new = replace(acl, authorized=acl.authorized - {provider}, version=acl.version + 1)
    return new, replace(tx, signatures=((acl.patient_key, patient_signature),))


@dataclass(frozen=True)
class AccessResult:
    allowed: bool
    acl: PatientAcl
    audit: TransactionRecord | None = None


def check_access(
    acl: PatientAcl,
    provider: str,
    tx: TransactionRecord,
    request_signature: bytes,
    timestamp: int = 0,
) -> AccessResult:
    """Decide whether ``provider`` may read the data behind ``tx``.

    The decision uses the access list stamped into ``tx`` when it was
    submitted, not the patient's current list.  A provider's first request
    for this patient yields an audit transaction whether or not it is allowed.
    """
    if acl.patient_id not in tx.parties:
        raise WrongPatient(f"{tx.tx_id} does not concern {acl.patient_id}")
    audit = _access_tx(acl, provider, timestamp)
    if not crypto.verify(provider, audit.signing_payload(), request_signature):
        raise BadSignature("access request not signed by the requesting provider")
    allowed = provider in tx.acl
    if provider in acl.accessors:
        return AccessResult(allowed, acl)
    new = replace(acl, accessors=acl.accessors | {provider})
    return AccessResult(allowed, new, replace(audit, signatures=((provider, request_signature),)))


def replay_acl(
    patient_id: str, patient_key: str, transactions: Iterable[TransactionRecord]
) -> PatientAcl:
    """Rebuild a patient's list from the audit transactions on their sidechain."""
    acl = PatientAcl(patient_id, patient_key)
    for tx in transactions:
        if tx.tx_type is not TxType.RECORD_ACCESS or not tx.path.startswith(ACL_PATH_PREFIX):
            continue
        op, _, provider = tx.path[len(ACL_PATH_PREFIX):].partition("/")
        if op == "grant":
            acl = replace(acl, authorized=acl.authorized | {provider}, version=acl.version + 1)
        elif op == "revoke":
            acl = replace(acl, authorized=acl.authorized - {provider}, version=acl.version + 1)
        elif op == "access":
            acl = replace(acl, accessors=acl.accessors | {provider})
    return acl
