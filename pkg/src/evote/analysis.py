"""Demographic statistics computed entirely over ciphertexts.

Ballot records are filtered by their plaintext vote and the encrypted
one-hot factor columns are folded with homomorphic addition.  Only the
final aggregates are ever decrypted: |candidates| x |factors| filtered
sums plus |factors| turnout sums, independent of how many voters there
are.
"""

from __future__ import annotations

import csv
import json
import os
from dataclasses import dataclass
from typing import Dict, List, Optional

from . import he
from .he import Ciphertext, Keypair, PublicKey, add_ciphertexts, decrypt, encrypt
from .ledger import Ledger, now_ms
from .schema import FactorSchema, SchemaError, decode_counts
from .election import TallyResult


class AnalysisError(Exception):
    pass


class ConsistencyError(AnalysisError):
    pass


@dataclass(frozen=True)
class AggregationQuery:
    candidate_filter: Optional[str]
    factor_index: int


@dataclass
class AnalysisReport:
    election_id: str
    per_candidate: Dict[str, Dict[str, List[int]]]
    turnout_by_factor: Dict[str, List[int]]
    produced_at: int  # UTC milliseconds

    def to_json(self) -> dict:
        return {
            "election_id": self.election_id,
            "per_candidate": self.per_candidate,
            "turnout_by_factor": self.turnout_by_factor,
            "produced_at": self.produced_at,
        }

    @classmethod
    def from_json(cls, doc: dict) -> "AnalysisReport":
        return cls(
            election_id=doc["election_id"],
            per_candidate={
                c: {f: [int(x) for x in counts] for f, counts in factors.items()}
                for c, factors in doc["per_candidate"].items()
            },
            turnout_by_factor={
                f: [int(x) for x in counts] for f, counts in doc["turnout_by_factor"].items()
            },
            produced_at=int(doc["produced_at"]),
        )


def _fold_factor(
    ledger: Ledger,
    key: PublicKey,
    schema: FactorSchema,
    query: AggregationQuery,
) -> Ciphertext:
    if not 0 <= query.factor_index < schema.factor_count:
        raise SchemaError(f"factor index {query.factor_index} out of range")
    acc = encrypt(key, 0)
    for record in ledger.iterate_records(query.candidate_filter):
        acc = add_ciphertexts(key, acc, record.batch.ciphertexts[query.factor_index])
    return acc


def aggregate_factor(
    ledger: Ledger,
    key: PublicKey,
    schema: FactorSchema,
    query: AggregationQuery,
    skip_verify: bool = False,
) -> Ciphertext:
    """Homomorphic sum of one encrypted factor column over matching ballots.

    Performs no decryption.  Zero matching ballots yield an encryption of
    zero.  The chain is re-verified unless the caller already did.
    """
    if not skip_verify:
        report = ledger.verify_chain()
        if not report.valid:
            raise AnalysisError(f"unverified chain: {report}")
    return _fold_factor(ledger, key, schema, query)


def analyze_voters(
    ledger: Ledger,
    secret_key: Keypair,
    schema: FactorSchema,
    candidates,
    tally: TallyResult,
) -> AnalysisReport:
    """Produce the per-candidate, per-factor category counts.

    Exactly |candidates| x |factors| + |factors| aggregate ciphertexts are
    decrypted; individual ballots never are.  The finished report is
    cross-checked against the plaintext tally and withheld on mismatch.
    """
    if secret_key.fingerprint != key_fp_for(ledger, secret_key):
        raise AnalysisError("secret key does not match the election public key")
    report_chain = ledger.verify_chain()
    if not report_chain.valid:
        raise AnalysisError(f"unverified chain: {report_chain}")

    candidates = tuple(candidates)
    public = secret_key.public
    expected_decrypts = len(candidates) * schema.factor_count + schema.factor_count
    counts_before = he.operation_counts()["decrypt"]

    per_candidate: Dict[str, Dict[str, List[int]]] = {}
    for candidate in candidates:
        per_factor: Dict[str, List[int]] = {}
        for fi, factor in enumerate(schema.factors):
            agg = _fold_factor(
                ledger, public, schema, AggregationQuery(candidate, fi)
            )
            per_factor[factor.name] = decode_counts(schema, fi, decrypt(secret_key, agg))
        per_candidate[candidate] = per_factor

    turnout: Dict[str, List[int]] = {}
    for fi, factor in enumerate(schema.factors):
        agg = _fold_factor(ledger, public, schema, AggregationQuery(None, fi))
        turnout[factor.name] = decode_counts(schema, fi, decrypt(secret_key, agg))

    decrypts = he.operation_counts()["decrypt"] - counts_before
    if decrypts != expected_decrypts:
        raise AnalysisError(
            f"decryption minimality violated: {decrypts} decrypts, "
            f"expected {expected_decrypts}"
        )

    report = AnalysisReport(
        election_id=tally.election_id,
        per_candidate=per_candidate,
        turnout_by_factor=turnout,
        produced_at=now_ms(),
    )
    if not consistency_check(report, tally):
        raise ConsistencyError(
            "analysis does not reconcile with the tally; report withheld"
        )
    return report


def key_fp_for(ledger: Ledger, secret_key: Keypair) -> bytes:
    """Fingerprint the ledger's ciphertexts were made under, falling back to
    the supplied key's own fingerprint for an empty ledger."""
    for record in ledger.iterate_records():
        for ct in record.batch.ciphertexts:
            return ct.key_fingerprint
    return secret_key.fingerprint


def consistency_check(report: AnalysisReport, tally: TallyResult) -> bool:
    """True iff the report's marginals reconcile exactly with the tally."""
    if report.election_id != tally.election_id:
        return False
    factor_names = list(report.turnout_by_factor)
    for candidate, per_factor in report.per_candidate.items():
        expected = tally.counts.get(candidate)
        if expected is None:
            return False
        for name in factor_names:
            if sum(per_factor[name]) != expected:
                return False
    for name in factor_names:
        turnout = report.turnout_by_factor[name]
        summed = [0] * len(turnout)
        for per_factor in report.per_candidate.values():
            for i, x in enumerate(per_factor[name]):
                summed[i] += x
        if summed != turnout:
            return False
        if sum(turnout) != tally.total:
            return False
    return True


def write_report(report: AnalysisReport, path: str) -> None:
    tmp = path + ".tmp"
    with open(tmp, "w", encoding="utf-8") as fh:
        json.dump(report.to_json(), fh, indent=2)
        fh.write("\n")
    os.replace(tmp, path)


def write_report_csv(report: AnalysisReport, schema: FactorSchema, path: str) -> None:
    """One row per candidate x factor x category."""
    labels = {f.name: f.categories for f in schema.factors}
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["candidate", "factor", "category", "count"])
        for candidate, per_factor in report.per_candidate.items():
            for factor_name, counts in per_factor.items():
                for label, count in zip(labels[factor_name], counts):
                    writer.writerow([candidate, factor_name, label, count])
