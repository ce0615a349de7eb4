import os

import pytest

from evote import bench as bn
from evote.he import decrypt
from evote.schema import decode_counts


class TestBenchConfig:
    def test_defaults(self):
        cfg = bn.BenchConfig()
        assert cfg.n_voters == 1024
        assert cfg.repetitions == 5

    def test_bounds(self):
        with pytest.raises(bn.BenchError):
            bn.BenchConfig(n_voters=0)
        with pytest.raises(bn.BenchError):
            bn.BenchConfig(repetitions=2)
        with pytest.raises(bn.BenchError):
            bn.BenchConfig(payload_profile="weird")


class TestSyntheticPayloads:
    def test_401_byte_profile(self):
        cfg = bn.BenchConfig(n_voters=3, payload_profile=bn.PROFILE_ATTRS_401B, seed=4)
        _, ballots = bn._synthetic_ballots(cfg, None, None)
        assert len(ballots) == 3
        for ballot in ballots:
            sizes = [
                (ct.value.bit_length() + 7) // 8 for ct in ballot.batch.ciphertexts
            ]
            assert sizes == [80] * 5
            assert len(ballot.vote.encode()) == 1
            payload = sum(sizes) + len(ballot.vote.encode())
            assert payload == 401

    def test_80_byte_profile(self):
        cfg = bn.BenchConfig(n_voters=2, payload_profile=bn.PROFILE_VOTE_80B, seed=4)
        _, ballots = bn._synthetic_ballots(cfg, None, None)
        for ballot in ballots:
            sizes = [
                (ct.value.bit_length() + 7) // 8 for ct in ballot.batch.ciphertexts
            ]
            assert sizes == [80]
            assert ballot.vote == ""

    def test_native_profile_uses_real_ciphertexts(self, kp1024, schema):
        cfg = bn.BenchConfig(n_voters=2, payload_profile=bn.PROFILE_NATIVE, seed=4)
        _, ballots = bn._synthetic_ballots(cfg, kp1024.public, schema)
        ct = ballots[0].batch.ciphertexts[0]
        assert ct.key_fingerprint == kp1024.fingerprint
        assert ct.value < kp1024.n ** 2

    def test_native_needs_key(self):
        cfg = bn.BenchConfig(n_voters=1, payload_profile=bn.PROFILE_NATIVE)
        with pytest.raises(bn.BenchError, match="needs a public key"):
            bn._synthetic_ballots(cfg, None, None)


class TestRecordingRound:
    def test_single_voter_identity(self, tmp_path):
        cfg = bn.BenchConfig(n_voters=1, payload_profile=bn.PROFILE_VOTE_80B, repetitions=3)
        timing = bn.run_recording_round(cfg, str(tmp_path / "r1"))
        assert timing.per_ballot_ms == pytest.approx(timing.total_seconds * 1000.0)
        assert len(timing.rep_seconds) == 3

    def test_profiles_within_20_percent_at_128(self, tmp_path):
        timings = bn.compare_recording_profiles(
            128, str(tmp_path / "cmp"), repetitions=9
        )
        big = timings[bn.PROFILE_ATTRS_401B].per_ballot_ms
        small = timings[bn.PROFILE_VOTE_80B].per_ballot_ms
        assert abs(big - small) / small < 0.20, timings

    def test_non_empty_work_dir_refused(self, tmp_path):
        work = tmp_path / "busy"
        work.mkdir()
        (work / "junk").write_text("x")
        cfg = bn.BenchConfig(n_voters=1, payload_profile=bn.PROFILE_VOTE_80B)
        with pytest.raises(bn.BenchError, match="not empty"):
            bn.run_recording_round(cfg, str(work))


class TestAdditionBench:
    def test_fold_decrypt_verifies(self, kp512):
        timing = bn.run_addition_bench(64, kp512)
        assert timing.n_additions == 64
        assert timing.total_seconds > 0

    def test_single_addition_identity(self, kp512):
        timing = bn.run_addition_bench(1, kp512)
        assert timing.per_add_us == pytest.approx(timing.total_seconds * 1e6)

    def test_zero_rejected(self, kp512):
        with pytest.raises(bn.BenchError):
            bn.run_addition_bench(0, kp512)


class TestCountingComparison:
    def test_counts_match_oracle(self, tmp_path, kp512, small_schema):
        result = bn.run_counting_comparison(
            50, kp512, small_schema, ("A", "B"), str(tmp_path), seed=8
        )
        assert result.counts_match
        assert sum(result.counts.values()) == 50
        assert result.plaintext_seconds > 0
        assert result.encrypted_seconds > 0

    def test_zero_voters(self, tmp_path, kp512, small_schema):
        result = bn.run_counting_comparison(
            0, kp512, small_schema, ("A", "B"), str(tmp_path), seed=8
        )
        assert result.counts == {"A": 0, "B": 0}
        assert result.counts_match


class TestEmitReport:
    def _recordings(self, tmp_path, reps=5):
        out = []
        for profile in (bn.PROFILE_ATTRS_401B, bn.PROFILE_VOTE_80B):
            cfg = bn.BenchConfig(n_voters=4, payload_profile=profile, repetitions=reps)
            out.append(bn.run_recording_round(cfg, str(tmp_path / f"rec-{profile}")))
        return out

    def test_two_profiles_five_reps_ten_rows(self, tmp_path):
        recordings = self._recordings(tmp_path)
        bn.emit_report(str(tmp_path / "out"), recordings=recordings)
        rows = bn.read_csv(str(tmp_path / "out" / bn.RECORDING_CSV))
        assert len(rows) == 10

    def test_csv_roundtrip_equals_memory(self, tmp_path, kp512):
        addition = bn.run_addition_bench(8, kp512)
        bn.emit_report(str(tmp_path / "out"), additions=[addition])
        rows = bn.read_csv(str(tmp_path / "out" / bn.ADDITION_CSV))
        assert len(rows) == 1
        assert int(rows[0]["n_additions"]) == 8
        assert float(rows[0]["total_seconds"]) == pytest.approx(
            addition.total_seconds, abs=1e-6
        )
        assert float(rows[0]["per_add_us"]) == pytest.approx(addition.per_add_us, abs=1e-3)

    def test_empty_timings_rejected(self, tmp_path):
        with pytest.raises(bn.BenchError, match="nothing to report"):
            bn.emit_report(str(tmp_path / "out"))

    def test_reference_note_in_header(self, tmp_path, kp512):
        bn.emit_report(str(tmp_path / "out"), additions=[bn.run_addition_bench(4, kp512)])
        with open(tmp_path / "out" / bn.ADDITION_CSV) as fh:
            first = fh.readline()
        assert first.startswith("#")
        assert "units assumed seconds" in first

    def test_plots_json_series(self, tmp_path, kp512):
        import json

        recordings = self._recordings(tmp_path, reps=3)
        additions = [bn.run_addition_bench(4, kp512)]
        bn.emit_report(str(tmp_path / "out"), recordings=recordings, additions=additions)
        with open(tmp_path / "out" / bn.PLOTS_JSON) as fh:
            plots = json.load(fh)
        assert plots["recording"][bn.PROFILE_ATTRS_401B] == [
            [4, pytest.approx(recordings[0].total_seconds)]
        ]
        assert plots["addition"] == [[4, pytest.approx(additions[0].total_seconds)]]
