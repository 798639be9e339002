import pytest

from healthchain import access
from healthchain.access import (
    AlreadyAuthorized,
    BadSignature,
    NotAuthorized,
    NullKey,
    PatientAcl,
    WrongPatient,
    check_access,
    grant,
    replay_acl,
    revoke,
)
from healthchain.ledger import TxType
from support import ed_key, make_tx

PATIENT = ed_key("patient")
K1, K2, K3 = (ed_key(f"provider {i}") for i in range(3))


def fresh():
    return PatientAcl("patient-00001", PATIENT.public)


def do_grant(acl, key, ts=0):
    return grant(acl, key.public, PATIENT.sign(access.grant_payload(acl, key.public, ts)), ts)


def do_revoke(acl, key, ts=0):
    return revoke(acl, key.public, PATIENT.sign(access.revoke_payload(acl, key.public, ts)), ts)


def do_check(acl, key, tx, ts=0):
    return check_access(acl, key.public, tx, key.sign(access.access_payload(acl, key.public, ts)), ts)


def test_grant():
    acl, audit = do_grant(fresh(), K1)
    assert acl.authorized == {K1.public}
    assert acl.version == 1
    assert audit.tx_type is TxType.RECORD_ACCESS
    assert audit.parties == ("patient-00001",)
    assert audit.signatures_valid()


def test_grant_twice():
    acl, _ = do_grant(fresh(), K1)
    with pytest.raises(AlreadyAuthorized):
        do_grant(acl, K1)


def test_forged_grant():
    acl = fresh()
    forged = K1.sign(access.grant_payload(acl, K1.public))
    with pytest.raises(BadSignature):
        grant(acl, K1.public, forged)


def test_signature_does_not_replay_across_versions():
    acl = fresh()
    sig = PATIENT.sign(access.grant_payload(acl, K1.public))
    acl, _ = grant(acl, K1.public, sig)
    acl, _ = do_revoke(acl, K1)
    with pytest.raises(BadSignature):
        grant(acl, K1.public, sig)


def test_null_key_never_authorized():
    with pytest.raises(NullKey):
        grant(fresh(), "", b"")


def test_grant_then_revoke():
    acl, _ = do_grant(fresh(), K1)
    acl, audit = do_revoke(acl, K1)
    assert acl.authorized == frozenset()
    assert acl.version == 2
    assert audit.path.startswith("acl/revoke/")


def test_revoke_unknown():
    with pytest.raises(NotAuthorized):
        do_revoke(fresh(), K1)


def test_revoke_one_of_two():
    acl, _ = do_grant(fresh(), K1)
    acl, _ = do_grant(acl, K2)
    acl, _ = do_revoke(acl, K1)
    assert acl.authorized == {K2.public}


def test_check_uses_snapshot():
    acl, _ = do_grant(fresh(), K1)
    tx = make_tx(1, PATIENT, acl=acl.snapshot())
    assert do_check(acl, K1, tx).allowed
    assert not do_check(acl, K2, tx).allowed


def test_key_granted_after_sealing_only_sees_later_tx():
    acl = fresh()
    early = make_tx(1, PATIENT, acl=acl.snapshot())
    acl, _ = do_grant(acl, K1)
    later = make_tx(2, PATIENT, acl=acl.snapshot())
    first = do_check(acl, K1, early)
    assert not first.allowed
    assert do_check(first.acl, K1, later).allowed


def test_first_access_emits_one_audit():
    acl = fresh()
    tx = make_tx(1, PATIENT, acl=())
    r1 = do_check(acl, K3, tx)
    assert not r1.allowed
    assert r1.audit is not None and r1.audit.path == f"acl/access/{K3.public}"
    r2 = do_check(r1.acl, K3, tx)
    assert r2.audit is None
    assert r2.acl == r1.acl


def test_access_request_must_be_signed_by_provider():
    acl = fresh()
    tx = make_tx(1, PATIENT)
    sig = K2.sign(access.access_payload(acl, K1.public))
    with pytest.raises(BadSignature):
        check_access(acl, K1.public, tx, sig)


def test_wrong_patient():
    tx = make_tx(1, PATIENT, parties=("patient-00002",))
    with pytest.raises(WrongPatient):
        do_check(fresh(), K1, tx)


def test_version_counts_successful_changes():
    acl = fresh()
    ok = 0
    for key, op in [(K1, "g"), (K1, "g"), (K2, "g"), (K1, "r"), (K3, "r"), (K1, "g")]:
        try:
            acl, _ = do_grant(acl, key) if op == "g" else do_revoke(acl, key)
            ok += 1
        except access.AclError:
            pass
    assert acl.version == ok == 4


def test_replay_rebuilds_state():
    acl = fresh()
    audits = []
    for step in (lambda a: do_grant(a, K1), lambda a: do_grant(a, K2),
                 lambda a: do_revoke(a, K1)):
        acl, audit = step(acl)
        audits.append(audit)
    res = do_check(acl, K2, make_tx(9, PATIENT, acl=acl.snapshot()))
    audits.append(res.audit)
    unrelated = make_tx(10, PATIENT)
    rebuilt = replay_acl("patient-00001", PATIENT.public, [audits[0], unrelated, *audits[1:]])
    assert rebuilt == res.acl
