import copy
import json
from random import Random

import pytest

from evote import analysis as an
from evote import he
from evote import ledger as lg
from evote.election import TallyResult
from evote.schema import AnswerSet, Factor, FactorSchema, encrypt_batch, decode_counts

from oracles import cross_tabulate


@pytest.fixture(scope="module")
def sex_schema():
    return FactorSchema("sex-only", (Factor("sex", ("female", "male")),))


def build_ledger(tmp_path, kp, schema, ballots, candidates=("A", "B")):
    """ballots: list of (answers tuple, vote)."""
    ledger = lg.Ledger(
        tmp_path / "ledger",
        candidates=candidates,
        nodes=lg.NodeSet(admin_node="admin", candidate_nodes=(), ack_quorum=0),
    )
    rand = Random(17)
    for i, (answers, vote) in enumerate(ballots):
        batch = encrypt_batch(kp.public, schema, AnswerSet(schema.schema_id, answers))
        ledger.append_ballot(
            lg.BallotRecord(
                receipt_id=f"b-{i:04d}",
                voter_pseudonym=rand.getrandbits(256).to_bytes(32, "big"),
                batch=batch,
                vote=vote,
                cast_at=i,
            )
        )
    return ledger


def tally_of(ballots, candidates=("A", "B")):
    counts = {c: 0 for c in candidates}
    for _, vote in ballots:
        counts[vote] += 1
    return TallyResult("test", counts, len(ballots), tallied_at=0)


THREE_BALLOTS = [((0,), "A"), ((1,), "A"), ((1,), "B")]


class TestAggregateFactor:
    def test_filtered_aggregate(self, tmp_path, kp512, sex_schema):
        ledger = build_ledger(tmp_path, kp512, sex_schema, THREE_BALLOTS)
        agg = an.aggregate_factor(
            ledger, kp512.public, sex_schema, an.AggregationQuery("A", 0)
        )
        assert decode_counts(sex_schema, 0, he.decrypt(kp512, agg)) == [1, 1]

    def test_unfiltered_aggregate(self, tmp_path, kp512, sex_schema):
        ledger = build_ledger(tmp_path, kp512, sex_schema, THREE_BALLOTS)
        agg = an.aggregate_factor(
            ledger, kp512.public, sex_schema, an.AggregationQuery(None, 0)
        )
        assert decode_counts(sex_schema, 0, he.decrypt(kp512, agg)) == [1, 2]

    def test_zero_matches_decrypts_to_zero(self, tmp_path, kp512, sex_schema):
        ledger = build_ledger(tmp_path, kp512, sex_schema, [((0,), "A")])
        agg = an.aggregate_factor(
            ledger, kp512.public, sex_schema, an.AggregationQuery("B", 0)
        )
        assert decode_counts(sex_schema, 0, he.decrypt(kp512, agg)) == [0, 0]

    def test_no_decryption_happens(self, tmp_path, kp512, sex_schema):
        ledger = build_ledger(tmp_path, kp512, sex_schema, THREE_BALLOTS)
        before = he.operation_counts()["decrypt"]
        an.aggregate_factor(ledger, kp512.public, sex_schema, an.AggregationQuery(None, 0))
        assert he.operation_counts()["decrypt"] == before

    def test_invalid_factor_index(self, tmp_path, kp512, sex_schema):
        ledger = build_ledger(tmp_path, kp512, sex_schema, THREE_BALLOTS)
        with pytest.raises(Exception, match="out of range"):
            an.aggregate_factor(ledger, kp512.public, sex_schema, an.AggregationQuery(None, 3))

    def test_tampered_chain_refused(self, tmp_path, kp512, sex_schema):
        ledger = build_ledger(tmp_path, kp512, sex_schema, THREE_BALLOTS)
        path = ledger.admin_chain_path
        with open(path, "r+b") as fh:
            fh.seek(80)
            byte = fh.read(1)
            fh.seek(80)
            fh.write(bytes([byte[0] ^ 1]))
        with pytest.raises(an.AnalysisError, match="unverified chain"):
            an.aggregate_factor(ledger, kp512.public, sex_schema, an.AggregationQuery(None, 0))


class TestAnalyzeVoters:
    def test_three_ballot_example(self, tmp_path, kp512, sex_schema):
        ledger = build_ledger(tmp_path, kp512, sex_schema, THREE_BALLOTS)
        report = an.analyze_voters(
            ledger, kp512, sex_schema, ("A", "B"), tally_of(THREE_BALLOTS)
        )
        assert report.per_candidate["A"]["sex"] == [1, 1]
        assert report.per_candidate["B"]["sex"] == [0, 1]
        assert report.turnout_by_factor["sex"] == [1, 2]

    def test_empty_election_all_zero(self, tmp_path, kp512, sex_schema):
        ledger = build_ledger(tmp_path, kp512, sex_schema, [])
        report = an.analyze_voters(ledger, kp512, sex_schema, ("A", "B"), tally_of([]))
        assert report.per_candidate["A"]["sex"] == [0, 0]
        assert report.per_candidate["B"]["sex"] == [0, 0]
        assert report.turnout_by_factor["sex"] == [0, 0]

    def test_oracle_equivalence_random_electorate(self, tmp_path, kp512, small_schema):
        from evote.simulate import generate_electorate

        candidates = ("A", "B", "C")
        voters = generate_electorate(200, small_schema, candidates, seed=31)
        ballots = [(v.answers, v.vote) for v in voters]
        ledger = build_ledger(tmp_path, kp512, small_schema, ballots, candidates)
        report = an.analyze_voters(
            ledger, kp512, small_schema, candidates, tally_of(ballots, candidates)
        )
        expected_per_candidate, expected_turnout = cross_tabulate(
            voters, small_schema, candidates
        )
        assert report.per_candidate == expected_per_candidate
        assert report.turnout_by_factor == expected_turnout

    def test_decryption_minimality(self, tmp_path, kp512, small_schema):
        from evote.simulate import generate_electorate

        candidates = ("A", "B", "C")
        voters = generate_electorate(50, small_schema, candidates, seed=5)
        ballots = [(v.answers, v.vote) for v in voters]
        ledger = build_ledger(tmp_path, kp512, small_schema, ballots, candidates)
        before = he.operation_counts()["decrypt"]
        an.analyze_voters(
            ledger, kp512, small_schema, candidates, tally_of(ballots, candidates)
        )
        used = he.operation_counts()["decrypt"] - before
        assert used == len(candidates) * small_schema.factor_count + small_schema.factor_count

    def test_filter_additivity(self, tmp_path, kp512, small_schema):
        from evote.simulate import generate_electorate

        candidates = ("A", "B")
        voters = generate_electorate(60, small_schema, candidates, seed=6)
        ballots = [(v.answers, v.vote) for v in voters]
        ledger = build_ledger(tmp_path, kp512, small_schema, ballots, candidates)
        report = an.analyze_voters(
            ledger, kp512, small_schema, candidates, tally_of(ballots, candidates)
        )
        for factor in small_schema.factors:
            summed = [
                sum(report.per_candidate[c][factor.name][i] for c in candidates)
                for i in range(factor.category_count)
            ]
            assert summed == report.turnout_by_factor[factor.name]

    def test_order_independence(self, tmp_path, kp512, sex_schema):
        fwd = build_ledger(tmp_path / "f", kp512, sex_schema, THREE_BALLOTS)
        rev = build_ledger(tmp_path / "r", kp512, sex_schema, THREE_BALLOTS[::-1])
        tally = tally_of(THREE_BALLOTS)
        a = an.analyze_voters(fwd, kp512, sex_schema, ("A", "B"), tally)
        b = an.analyze_voters(rev, kp512, sex_schema, ("A", "B"), tally)
        assert a.per_candidate == b.per_candidate
        assert a.turnout_by_factor == b.turnout_by_factor

    def test_wrong_key_rejected(self, tmp_path, kp512, kp1024, sex_schema):
        ledger = build_ledger(tmp_path, kp512, sex_schema, THREE_BALLOTS)
        with pytest.raises(an.AnalysisError, match="does not match"):
            an.analyze_voters(ledger, kp1024, sex_schema, ("A", "B"), tally_of(THREE_BALLOTS))

    def test_corrupt_tally_withholds_report(self, tmp_path, kp512, sex_schema):
        ledger = build_ledger(tmp_path, kp512, sex_schema, THREE_BALLOTS)
        bad_tally = tally_of(THREE_BALLOTS)
        bad_tally.counts["A"] += 1
        bad_tally.total += 1
        with pytest.raises(an.ConsistencyError, match="withheld"):
            an.analyze_voters(ledger, kp512, sex_schema, ("A", "B"), bad_tally)


class TestConsistencyCheck:
    def _report(self, tmp_path, kp, schema):
        ledger = build_ledger(tmp_path, kp, schema, THREE_BALLOTS)
        tally = tally_of(THREE_BALLOTS)
        return an.analyze_voters(ledger, kp, schema, ("A", "B"), tally), tally

    def test_fresh_report_is_consistent(self, tmp_path, kp512, sex_schema):
        report, tally = self._report(tmp_path, kp512, sex_schema)
        assert an.consistency_check(report, tally) is True

    def test_single_increment_breaks_consistency(self, tmp_path, kp512, sex_schema):
        report, tally = self._report(tmp_path, kp512, sex_schema)
        broken = copy.deepcopy(report)
        broken.per_candidate["A"]["sex"][0] += 1
        assert an.consistency_check(broken, tally) is False

    def test_empty_vs_zero_tally(self, tmp_path, kp512, sex_schema):
        ledger = build_ledger(tmp_path, kp512, sex_schema, [])
        tally = tally_of([])
        report = an.analyze_voters(ledger, kp512, sex_schema, ("A", "B"), tally)
        assert an.consistency_check(report, tally) is True

    def test_election_id_mismatch(self, tmp_path, kp512, sex_schema):
        report, tally = self._report(tmp_path, kp512, sex_schema)
        tally.election_id = "other"
        assert an.consistency_check(report, tally) is False


class TestReportSerialization:
    def test_json_roundtrip(self, tmp_path, kp512, sex_schema):
        ledger = build_ledger(tmp_path, kp512, sex_schema, THREE_BALLOTS)
        report = an.analyze_voters(
            ledger, kp512, sex_schema, ("A", "B"), tally_of(THREE_BALLOTS)
        )
        path = str(tmp_path / "analysis.json")
        an.write_report(report, path)
        with open(path) as fh:
            loaded = an.AnalysisReport.from_json(json.load(fh))
        assert loaded == report

    def test_csv_rows(self, tmp_path, kp512, sex_schema):
        import csv

        ledger = build_ledger(tmp_path, kp512, sex_schema, THREE_BALLOTS)
        report = an.analyze_voters(
            ledger, kp512, sex_schema, ("A", "B"), tally_of(THREE_BALLOTS)
        )
        path = str(tmp_path / "analysis.csv")
        an.write_report_csv(report, sex_schema, path)
        with open(path) as fh:
            rows = list(csv.DictReader(fh))
        # 2 candidates x 1 factor x 2 categories
        assert len(rows) == 4
        lookup = {(r["candidate"], r["category"]): int(r["count"]) for r in rows}
        assert lookup[("A", "female")] == 1
        assert lookup[("A", "male")] == 1
        assert lookup[("B", "female")] == 0
        assert lookup[("B", "male")] == 1
