"""Administration server core: registration, authentication, questionnaire
collection, vote casting, vote check-back, and the plaintext tally.

The demographic batch is staged on the voter record and committed to the
ledger atomically with the plaintext vote, so the chain never carries
demographic data from someone who did not vote.  Tallying is a single
pass over committed ballots and performs zero homomorphic operations.
"""

from __future__ import annotations

import hashlib
import hmac
import json
import logging
import os
import secrets
import threading
import time
from dataclasses import dataclass, field
from typing import Dict, Optional

from .he import PublicKey, validate_ciphertext
from .ledger import (
    BallotRecord,
    Ledger,
    Receipt,
    now_ms,
)
from .schema import (
    AnswerSet,
    EncryptedBatch,
    FactorSchema,
    check_capacity,
    dump_schema,
    encrypt_batch,
    validate_answers,
)

log = logging.getLogger("evote.election")

STATE_SETUP = "setup"
STATE_OPEN = "open"
STATE_CLOSED = "closed"
STATE_TALLIED = "tallied"
STATES = (STATE_SETUP, STATE_OPEN, STATE_CLOSED, STATE_TALLIED)

_TRANSITIONS = {
    STATE_SETUP: STATE_OPEN,
    STATE_OPEN: STATE_CLOSED,
    STATE_CLOSED: STATE_TALLIED,
}

MIN_PASSWORD_LENGTH = 8
DEFAULT_SESSION_TTL_SECONDS = 30 * 60
DEFAULT_SCRYPT_COST = 2 ** 14
MIN_SERVICE_KEY_BITS = 1024

STATE_FILENAME = "state.json"
TALLY_FILENAME = "tally.json"
ANALYSIS_FILENAME = "analysis.json"


class ServiceError(Exception):
    pass


class AuthenticationError(ServiceError):
    pass


class SessionExpiredError(ServiceError):
    pass


class AdminAuthError(ServiceError):
    pass


class DuplicateVoterError(ServiceError):
    pass


class WeakPasswordError(ServiceError):
    pass


class ElectionStateError(ServiceError):
    pass


class QuestionnaireRequiredError(ServiceError):
    pass


class NotVotedError(ServiceError):
    pass


class BatchError(ServiceError):
    pass


@dataclass
class VoterRecord:
    voter_id: str
    password_hash: bytes
    salt: bytes
    eligible: bool = True
    staged_batch: Optional[EncryptedBatch] = None
    has_voted: bool = False
    receipt: Optional[Receipt] = None
    lock: threading.Lock = field(default_factory=threading.Lock, repr=False, compare=False)


@dataclass
class SessionToken:
    token: str
    voter_id: str
    expires_at: float


@dataclass
class ElectionConfig:
    election_id: str
    candidates: tuple
    schema: FactorSchema
    public_key: PublicKey
    state: str = STATE_SETUP
    election_salt: bytes = b""

    def __post_init__(self):
        if not self.candidates:
            raise ValueError("candidate list must be non-empty")
        if len(set(self.candidates)) != len(self.candidates):
            raise ValueError("candidate ids must be unique")
        if self.state not in STATES:
            raise ValueError(f"unknown election state {self.state!r}")


@dataclass
class TallyResult:
    election_id: str
    counts: Dict[str, int]
    total: int
    tallied_at: int  # UTC milliseconds

    def to_json(self) -> dict:
        return {
            "election_id": self.election_id,
            "counts": dict(self.counts),
            "total": self.total,
            "tallied_at": self.tallied_at,
        }

    @classmethod
    def from_json(cls, doc: dict) -> "TallyResult":
        return cls(
            election_id=doc["election_id"],
            counts={k: int(v) for k, v in doc["counts"].items()},
            total=int(doc["total"]),
            tallied_at=int(doc["tallied_at"]),
        )


@dataclass
class CastVoteView:
    vote: str
    receipt: Receipt
    cast_at: int


def voter_pseudonym(election_salt: bytes, voter_id: str) -> bytes:
    """Stable 32-byte pseudonym; raw voter ids never sit next to votes."""
    return hashlib.sha256(election_salt + voter_id.encode("utf-8")).digest()


class ElectionService:
    """Single-election administration server state machine.

    Mutations of one voter record are serialized through a per-voter lock;
    ledger appends funnel through the ledger's single writer.  ``kdf_cost``
    scales the scrypt work factor (lowered by tests and the simulation
    harness; never below 16).  Toy keys below 1024 bits are rejected unless
    ``allow_test_keys`` is set, which only test builds should do.
    """

    def __init__(
        self,
        config: ElectionConfig,
        ledger: Ledger,
        admin_token: str,
        data_dir: Optional[str] = None,
        session_ttl_seconds: float = DEFAULT_SESSION_TTL_SECONDS,
        kdf_cost: int = DEFAULT_SCRYPT_COST,
        allow_test_keys: bool = False,
    ):
        if not allow_test_keys and config.public_key.n.bit_length() < MIN_SERVICE_KEY_BITS:
            raise ValueError(
                f"election key must be at least {MIN_SERVICE_KEY_BITS} bits; "
                "smaller keys are for tests only"
            )
        if kdf_cost < 16 or kdf_cost & (kdf_cost - 1):
            raise ValueError("kdf_cost must be a power of two >= 16")
        check_capacity(config.schema, config.public_key)
        self.config = config
        self.ledger = ledger
        self.admin_token = admin_token
        self.data_dir = str(data_dir) if data_dir else None
        self.session_ttl_seconds = session_ttl_seconds
        self.kdf_cost = kdf_cost
        self._voters: Dict[str, VoterRecord] = {}
        self._sessions: Dict[str, SessionToken] = {}
        self._registry_lock = threading.Lock()
        self._tally: Optional[TallyResult] = None
        self._ballots_cast = ledger.record_count
        if not self.config.election_salt:
            self.config.election_salt = secrets.token_bytes(16)
        if self.data_dir:
            os.makedirs(self.data_dir, exist_ok=True)
            self._load_state()

    # -- persistence ---------------------------------------------------------

    def _state_path(self) -> str:
        return os.path.join(self.data_dir, STATE_FILENAME)

    def _tally_path(self) -> str:
        return os.path.join(self.data_dir, TALLY_FILENAME)

    def _analysis_path(self) -> str:
        return os.path.join(self.data_dir, ANALYSIS_FILENAME)

    def _load_state(self) -> None:
        path = self._state_path()
        if not os.path.exists(path):
            self._save_state()
            return
        with open(path, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
        self.config.state = doc["state"]
        self.config.election_salt = bytes.fromhex(doc["election_salt"])
        if os.path.exists(self._tally_path()):
            with open(self._tally_path(), "r", encoding="utf-8") as fh:
                self._tally = TallyResult.from_json(json.load(fh))

    def _save_state(self) -> None:
        if not self.data_dir:
            return
        doc = {
            "election_id": self.config.election_id,
            "state": self.config.state,
            "election_salt": self.config.election_salt.hex(),
        }
        tmp = self._state_path() + ".tmp"
        with open(tmp, "w", encoding="utf-8") as fh:
            json.dump(doc, fh, indent=2)
        os.replace(tmp, self._state_path())

    def _save_tally(self) -> None:
        if not self.data_dir or self._tally is None:
            return
        tmp = self._tally_path() + ".tmp"
        with open(tmp, "w", encoding="utf-8") as fh:
            json.dump(self._tally.to_json(), fh, indent=2)
        os.replace(tmp, self._tally_path())

    # -- registration and sessions --------------------------------------------

    def _hash_password(self, password: str, salt: bytes) -> bytes:
        return hashlib.scrypt(
            password.encode("utf-8"), salt=salt, n=self.kdf_cost, r=8, p=1, dklen=32
        )

    def register_voter(self, voter_id: str, password: str) -> VoterRecord:
        if self.config.state not in (STATE_SETUP, STATE_OPEN):
            raise ElectionStateError("registration closed")
        if not voter_id:
            raise ServiceError("voter id must be non-empty")
        if len(password) < MIN_PASSWORD_LENGTH:
            raise WeakPasswordError(
                f"weak password: must be at least {MIN_PASSWORD_LENGTH} characters"
            )
        with self._registry_lock:
            if voter_id in self._voters:
                raise DuplicateVoterError("duplicate voter")
            salt = secrets.token_bytes(16)
            record = VoterRecord(
                voter_id=voter_id,
                password_hash=self._hash_password(password, salt),
                salt=salt,
            )
            self._voters[voter_id] = record
        log.info("registered voter %s", voter_id)
        return record

    def verify_voter(self, voter_id: str, password: str) -> SessionToken:
        """Authenticate and mint a session token.

        Unknown voter, wrong password, and ineligible voter all fail with
        the same message so accounts cannot be enumerated.
        """
        record = self._voters.get(voter_id)
        if record is None:
            # burn the same work as a real check
            self._hash_password(password, b"\x00" * 16)
            raise AuthenticationError("authentication failed")
        candidate = self._hash_password(password, record.salt)
        if not hmac.compare_digest(candidate, record.password_hash) or not record.eligible:
            raise AuthenticationError("authentication failed")
        token = SessionToken(
            token=secrets.token_hex(32),
            voter_id=voter_id,
            expires_at=time.time() + self.session_ttl_seconds,
        )
        with self._registry_lock:
            self._sessions[token.token] = token
        return token

    def _require_session(self, token: str) -> VoterRecord:
        session = self._sessions.get(token)
        if session is None:
            raise AuthenticationError("authentication failed")
        if time.time() >= session.expires_at:
            with self._registry_lock:
                self._sessions.pop(token, None)
            raise SessionExpiredError("session expired")
        return self._voters[session.voter_id]

    def _require_admin(self, admin_token: str) -> None:
        if not hmac.compare_digest(admin_token, self.admin_token):
            raise AdminAuthError("bad admin credential")

    # -- questionnaire ---------------------------------------------------------

    def _check_batch(self, batch: EncryptedBatch) -> None:
        if batch.schema_id != self.config.schema.schema_id:
            raise BatchError(
                f"schema mismatch: batch is for {batch.schema_id!r}, "
                f"expected {self.config.schema.schema_id!r}"
            )
        if len(batch.ciphertexts) != self.config.schema.factor_count:
            raise BatchError(
                f"batch length mismatch: {len(batch.ciphertexts)} ciphertexts "
                f"for {self.config.schema.factor_count} factors"
            )
        for ct in batch.ciphertexts:
            try:
                validate_ciphertext(self.config.public_key, ct)
            except ValueError as exc:
                raise BatchError(str(exc)) from exc

    def collect_voter(self, token: str, batch: EncryptedBatch) -> None:
        """Stage a questionnaire batch; replaces any earlier staged batch."""
        voter = self._require_session(token)
        if self.config.state != STATE_OPEN:
            raise ElectionStateError("election is not open")
        self._check_batch(batch)
        with voter.lock:
            if voter.has_voted:
                raise ElectionStateError("already voted")
            voter.staged_batch = batch

    def collect_voter_plain(self, token: str, answers: AnswerSet) -> None:
        """Server-side encryption fallback for clients that cannot encrypt.

        The plaintext answers are encrypted immediately and never persisted
        or logged.
        """
        voter = self._require_session(token)
        if self.config.state != STATE_OPEN:
            raise ElectionStateError("election is not open")
        result = validate_answers(self.config.schema, answers)
        if not result.ok:
            raise BatchError("; ".join(result.violations))
        batch = encrypt_batch(self.config.public_key, self.config.schema, answers)
        with voter.lock:
            if voter.has_voted:
                raise ElectionStateError("already voted")
            voter.staged_batch = batch

    # -- voting ------------------------------------------------------------------

    def cast_vote(self, token: str, vote: str) -> Receipt:
        """Commit the staged batch and the plaintext vote as one ballot."""
        voter = self._require_session(token)
        if self.config.state != STATE_OPEN:
            raise ElectionStateError("election closed")
        if vote not in self.config.candidates:
            raise ServiceError(f"invalid vote: unknown candidate {vote!r}")
        with voter.lock:
            if voter.has_voted:
                raise ElectionStateError("already voted")
            if voter.staged_batch is None:
                raise QuestionnaireRequiredError("questionnaire required first")
            record = BallotRecord(
                receipt_id=secrets.token_hex(16),
                voter_pseudonym=voter_pseudonym(self.config.election_salt, voter.voter_id),
                batch=voter.staged_batch,
                vote=vote,
                cast_at=now_ms(),
            )
            receipt = self.ledger.append_ballot(record)
            voter.has_voted = True
            voter.receipt = receipt
            voter.staged_batch = None
        with self._registry_lock:
            self._ballots_cast += 1
        return receipt

    def check_vote(self, token: str) -> CastVoteView:
        """Fetch the voter's own ballot back off the ledger."""
        voter = self._require_session(token)
        if not voter.has_voted or voter.receipt is None:
            raise NotVotedError("no vote on record")
        record = self.ledger.get_record(voter.receipt)
        return CastVoteView(vote=record.vote, receipt=voter.receipt, cast_at=record.cast_at)

    # -- tally and lifecycle --------------------------------------------------------

    def tally_vote(self, admin_token: str) -> TallyResult:
        """Single plaintext pass over the ledger; no homomorphic work."""
        self._require_admin(admin_token)
        if self.config.state == STATE_TALLIED and self._tally is not None:
            return self._tally
        if self.config.state != STATE_CLOSED:
            raise ElectionStateError("election is not closed")
        counts = {candidate: 0 for candidate in self.config.candidates}
        total = 0
        for record in self.ledger.iterate_records():
            counts[record.vote] += 1
            total += 1
        self._tally = TallyResult(
            election_id=self.config.election_id,
            counts=counts,
            total=total,
            tallied_at=now_ms(),
        )
        self.config.state = STATE_TALLIED
        self._save_tally()
        self._save_state()
        log.info("tally complete: %d ballots", total)
        return self._tally

    def transition_election(self, admin_token: str, target: str) -> ElectionConfig:
        self._require_admin(admin_token)
        if target not in STATES:
            raise ElectionStateError(f"unknown state {target!r}")
        if _TRANSITIONS.get(self.config.state) != target:
            raise ElectionStateError(
                f"illegal transition {self.config.state} -> {target}"
            )
        if target == STATE_TALLIED:
            self.tally_vote(admin_token)
            return self.config
        self.config.state = target
        if target == STATE_CLOSED:
            self.ledger.close()
        self._save_state()
        log.info("election %s -> %s", self.config.election_id, target)
        return self.config

    # -- views ---------------------------------------------------------------------

    def tally_result(self) -> Optional[TallyResult]:
        return self._tally

    def analysis_document(self) -> Optional[dict]:
        """The analysis report produced out-of-band, if any."""
        if not self.data_dir:
            return None
        path = self._analysis_path()
        if not os.path.exists(path):
            return None
        with open(path, "r", encoding="utf-8") as fh:
            return json.load(fh)

    def election_view(self) -> dict:
        """Public election descriptor; key and schema appear once published."""
        view = {
            "election_id": self.config.election_id,
            "state": self.config.state,
            "candidates": list(self.config.candidates),
            "ballots_cast": self._ballots_cast,
            "schema": None,
            "public_key": None,
        }
        if self.config.state != STATE_SETUP:
            view["schema"] = dump_schema(self.config.schema)
            view["public_key"] = {
                "n": format(self.config.public_key.n, "x"),
                "security_bits": self.config.public_key.n.bit_length(),
            }
        return view
