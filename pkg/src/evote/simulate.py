"""Election simulation harness: synthesizes an electorate, runs the full
register / questionnaire / cast flow against an in-process service, then
closes and tallies.

A fixed seed makes the keypair, electorate, answers, and votes
reproducible, so a harness can regenerate the ground truth instead of
persisting plaintext answers anywhere.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass
from random import Random
from typing import List, Optional

from .config import write_service_config
from .election import (
    STATE_CLOSED,
    STATE_OPEN,
    ElectionConfig,
    ElectionService,
    TallyResult,
)
from .he import generate_keypair, save_keypair
from .ledger import Ledger, NodeSet
from .schema import AnswerSet, FactorSchema, default_schema, dump_schema, encrypt_batch

DEFAULT_CANDIDATES = ("A", "B", "C")
SIMULATION_KDF_COST = 2 ** 8  # synthetic voters; not a production credential store


@dataclass(frozen=True)
class SimulatedVoter:
    voter_id: str
    password: str
    answers: tuple
    vote: str


@dataclass
class SimulationSummary:
    out_dir: str
    n_voters: int
    candidates: tuple
    tally: TallyResult
    config_path: str
    data_dir: str


def generate_electorate(
    n_voters: int, schema: FactorSchema, candidates, seed: int
) -> List[SimulatedVoter]:
    """Deterministic synthetic electorate for a given seed."""
    rand = Random(seed)
    candidates = tuple(candidates)
    voters = []
    for i in range(n_voters):
        answers = tuple(rand.randrange(f.category_count) for f in schema.factors)
        voters.append(
            SimulatedVoter(
                voter_id=f"voter-{i:05d}",
                password=f"sim-pw-{seed}-{i:05d}",
                answers=answers,
                vote=rand.choice(candidates),
            )
        )
    return voters


def run_simulation(
    out_dir: str,
    n_voters: int = 1024,
    security_bits: int = 1024,
    seed: int = 0,
    candidates=DEFAULT_CANDIDATES,
    schema: Optional[FactorSchema] = None,
    admin_token: str = "simulate-admin",
) -> SimulationSummary:
    """Run a complete synthetic election under ``out_dir``.

    Leaves behind keys/, schema.json, config.json and data/ (ledger chains,
    state, tally), laid out so ``evote analyze --config`` works on the
    result.  Voters encrypt their questionnaires client-side.
    """
    out_dir = os.path.abspath(out_dir)
    schema = schema or default_schema()
    candidates = tuple(candidates)
    os.makedirs(out_dir, exist_ok=True)

    keypair = generate_keypair(security_bits, seed=seed)
    key_dir = os.path.join(out_dir, "keys")
    public_path, secret_path = save_keypair(keypair, key_dir)

    schema_path = os.path.join(out_dir, "schema.json")
    with open(schema_path, "w", encoding="utf-8") as fh:
        json.dump(dump_schema(schema), fh, indent=2)
        fh.write("\n")

    data_dir = os.path.join(out_dir, "data")
    config_path = os.path.join(out_dir, "config.json")
    write_service_config(
        config_path,
        {
            "election_id": f"simulation-{seed}",
            "candidates": list(candidates),
            "schema": "schema.json",
            "keys": {"public": "keys/public.json", "secret": "keys/secret.json"},
            "data_dir": "data",
            "listen": "127.0.0.1:8080",
            "admin_token": admin_token,
        },
    )

    ledger = Ledger(
        os.path.join(data_dir, "ledger"),
        candidates=candidates,
        nodes=NodeSet.with_majority_quorum(
            "admin", tuple(f"cand-{c}" for c in candidates)
        ),
    )
    service = ElectionService(
        ElectionConfig(
            election_id=f"simulation-{seed}",
            candidates=candidates,
            schema=schema,
            public_key=keypair.public,
        ),
        ledger,
        admin_token=admin_token,
        data_dir=data_dir,
        kdf_cost=SIMULATION_KDF_COST,
        allow_test_keys=security_bits < 1024,
    )
    service.transition_election(admin_token, STATE_OPEN)

    for voter in generate_electorate(n_voters, schema, candidates, seed):
        service.register_voter(voter.voter_id, voter.password)
        session = service.verify_voter(voter.voter_id, voter.password)
        batch = encrypt_batch(
            keypair.public, schema, AnswerSet(schema.schema_id, voter.answers)
        )
        service.collect_voter(session.token, batch)
        service.cast_vote(session.token, voter.vote)

    service.transition_election(admin_token, STATE_CLOSED)
    tally = service.tally_vote(admin_token)
    return SimulationSummary(
        out_dir=out_dir,
        n_voters=n_voters,
        candidates=candidates,
        tally=tally,
        config_path=config_path,
        data_dir=data_dir,
    )
