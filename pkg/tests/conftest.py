import os
import sys

import pytest

sys.path.insert(0, os.path.join(os.path.dirname(__file__), ".."))

from evote import he
from evote.election import ElectionConfig, ElectionService
from evote.ledger import Ledger, NodeSet
from evote.schema import FactorSchema, Factor, default_schema

# low scrypt cost for tests; the production default stays 2**14
TEST_KDF_COST = 16


@pytest.fixture(scope="session")
def toy_keypair():
    # p=5, q=7: n=35, small enough to cross-check by hand
    return he.Keypair.from_primes(5, 7)


@pytest.fixture(scope="session")
def kp512():
    return he.generate_keypair(512, seed=1201)


@pytest.fixture(scope="session")
def kp1024():
    return he.generate_keypair(1024, seed=1202)


@pytest.fixture(scope="session")
def kp2048():
    return he.generate_keypair(2048, seed=1203)


@pytest.fixture(scope="session")
def schema():
    return default_schema()


@pytest.fixture(scope="session")
def small_schema():
    # fits a 512-bit modulus: max factor needs 3*32 = 96 bits
    return FactorSchema(
        schema_id="mini-v1",
        factors=(
            Factor("sex", ("female", "male")),
            Factor("age", ("young", "mid", "old")),
        ),
    )


@pytest.fixture
def make_service(tmp_path):
    """Factory for a wired-up service over a fresh ledger directory."""

    counter = {"n": 0}

    def build(
        keypair,
        schema_obj,
        candidates=("A", "B"),
        candidate_nodes=None,
        ack_quorum=None,
        admin_token="admin-token",
        **kwargs,
    ):
        counter["n"] += 1
        base = tmp_path / f"svc{counter['n']}"
        if candidate_nodes is None:
            candidate_nodes = tuple(f"node-{c}" for c in candidates)
        if ack_quorum is None:
            nodes = NodeSet.with_majority_quorum("admin", tuple(candidate_nodes))
        else:
            nodes = NodeSet(
                admin_node="admin",
                candidate_nodes=tuple(candidate_nodes),
                ack_quorum=ack_quorum,
            )
        ledger = Ledger(base / "ledger", candidates=candidates, nodes=nodes)
        kwargs.setdefault("kdf_cost", TEST_KDF_COST)
        kwargs.setdefault("allow_test_keys", True)
        service = ElectionService(
            ElectionConfig(
                election_id="test-election",
                candidates=tuple(candidates),
                schema=schema_obj,
                public_key=keypair.public,
            ),
            ledger,
            admin_token=admin_token,
            data_dir=str(base / "data"),
            **kwargs,
        )
        return service

    return build


# -- acceptance reporting ----------------------------------------------------

_acceptance_results = []


def pytest_runtest_logreport(report):
    if report.when == "call" and "test_acceptance" in report.nodeid:
        name = report.nodeid.split("::")[-1]
        _acceptance_results.append((name, report.passed))


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not _acceptance_results:
        return
    terminalreporter.write_line("")
    terminalreporter.write_line("acceptance criteria:")
    for name, passed in _acceptance_results:
        verdict = "PASS" if passed else "FAIL"
        terminalreporter.write_line(f"  {verdict}  {name}")
