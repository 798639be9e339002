import pytest

from healthchain.network import MemberKind, NetworkState
from healthchain.consensus import AuthorityRegistry, attest
from support import ed_key

ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture
def notary():
    return ed_key("notary")


@pytest.fixture
def network(notary):
    """Two hospitals (both authorities) and three patients, joins sealed."""
    state = NetworkState(registry=AuthorityRegistry(notaries=(notary.public,)))
    keys = {}
    for i in range(2):
        key = ed_key(f"hospital {i}")
        mid = state.join_member(MemberKind.HOSPITAL, key)
        state.admit_authority(mid, attest(key.public, notary, "notarised"), key)
        keys[mid] = key
    for i in range(3):
        key = ed_key(f"patient {i}")
        keys[state.join_member(MemberKind.PATIENT, key)] = key
    state.keys = keys
    state.next_slot = state.drain(0)
    return state
