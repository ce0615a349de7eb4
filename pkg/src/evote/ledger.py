"""Tamper-evident ballot ledger replicated to per-candidate verifier nodes.

One ordering writer (the administration node) seals ballots into
SHA-256 hash-chained blocks and replicates them to one verifier node per
candidate.  A block commits only after a quorum of verifier
acknowledgments; verifiers independently re-check hashes and the
one-pseudonym-once rule before acknowledging.  Each node persists its
chain to an append-only file of ``[4-byte big-endian length][canonical
block bytes]`` entries.

Canonical encoding (hashes are computed over these bytes, so the layout
is part of the protocol): strings are UTF-8 with a 4-byte big-endian
length prefix, fixed integers are 8-byte big-endian, digests are raw 32
bytes, big integers are length-prefixed minimal big-endian bytes, lists
are a 4-byte big-endian count followed by the elements, and fields
appear in declaration order.
"""

from __future__ import annotations

import hashlib
import os
import threading
import time
from dataclasses import dataclass, field
from typing import Iterator, List, Optional, Tuple

from .schema import EncryptedBatch
from .he import Ciphertext

GENESIS_PREV_HASH = b"\x00" * 32
CHAIN_SUFFIX = ".chain"


class LedgerError(Exception):
    pass


class AlreadyVotedError(LedgerError):
    pass


class InvalidVoteError(LedgerError):
    pass


class ReplicationError(LedgerError):
    pass


class UnknownReceiptError(LedgerError):
    pass


class DigestMismatchError(LedgerError):
    pass


class ChainFormatError(LedgerError):
    pass


# ---------------------------------------------------------------------------
# canonical serialization

def _u32(x: int) -> bytes:
    return x.to_bytes(4, "big")


def _u64(x: int) -> bytes:
    return x.to_bytes(8, "big")


def _lp_bytes(raw: bytes) -> bytes:
    return _u32(len(raw)) + raw


def _lp_str(s: str) -> bytes:
    return _lp_bytes(s.encode("utf-8"))


def _lp_int(x: int) -> bytes:
    if x == 0:
        return _u32(0)
    return _lp_bytes(x.to_bytes((x.bit_length() + 7) // 8, "big"))


class _Cursor:
    """Sequential reader over canonical bytes; any overrun is a format error."""

    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise ChainFormatError("canonical data truncated")
        chunk = self.data[self.pos : self.pos + n]
        self.pos += n
        return chunk

    def u32(self) -> int:
        return int.from_bytes(self.take(4), "big")

    def u64(self) -> int:
        return int.from_bytes(self.take(8), "big")

    def lp_bytes(self) -> bytes:
        return self.take(self.u32())

    def lp_str(self) -> str:
        try:
            return self.lp_bytes().decode("utf-8")
        except UnicodeDecodeError as exc:
            raise ChainFormatError(f"invalid UTF-8 in canonical data: {exc}") from exc

    def lp_int(self) -> int:
        return int.from_bytes(self.lp_bytes(), "big")

    def done(self) -> bool:
        return self.pos == len(self.data)


@dataclass(frozen=True)
class BallotRecord:
    receipt_id: str
    voter_pseudonym: bytes
    batch: EncryptedBatch
    vote: str
    cast_at: int  # UTC milliseconds

    def __post_init__(self):
        if len(self.voter_pseudonym) != 32:
            raise ValueError("voter pseudonym must be a 32-byte digest")


def record_bytes(record: BallotRecord) -> bytes:
    parts = [
        _lp_str(record.receipt_id),
        record.voter_pseudonym,
        _lp_str(record.batch.schema_id),
        _u32(len(record.batch.ciphertexts)),
    ]
    for ct in record.batch.ciphertexts:
        parts.append(_lp_int(ct.value))
        parts.append(ct.key_fingerprint)
    parts.append(_lp_str(record.vote))
    parts.append(_u64(record.cast_at))
    return b"".join(parts)


def _parse_record(cur: _Cursor) -> BallotRecord:
    receipt_id = cur.lp_str()
    pseudonym = cur.take(32)
    schema_id = cur.lp_str()
    ct_count = cur.u32()
    cts = []
    for _ in range(ct_count):
        value = cur.lp_int()
        fingerprint = cur.take(32)
        cts.append(Ciphertext(value=value, key_fingerprint=fingerprint))
    vote = cur.lp_str()
    cast_at = cur.u64()
    return BallotRecord(
        receipt_id=receipt_id,
        voter_pseudonym=pseudonym,
        batch=EncryptedBatch(schema_id=schema_id, ciphertexts=tuple(cts)),
        vote=vote,
        cast_at=cast_at,
    )


def record_digest(record: BallotRecord) -> bytes:
    return hashlib.sha256(record_bytes(record)).digest()


def records_payload_bytes(records) -> bytes:
    return _u32(len(records)) + b"".join(record_bytes(r) for r in records)


def payload_hash_of(records) -> bytes:
    return hashlib.sha256(records_payload_bytes(records)).digest()


def block_header_bytes(index: int, prev_hash: bytes, payload_hash: bytes, sealed_at: int) -> bytes:
    return _u64(index) + prev_hash + payload_hash + _u64(sealed_at)


@dataclass(frozen=True)
class Block:
    index: int
    prev_hash: bytes
    records: tuple
    payload_hash: bytes
    block_hash: bytes
    sealed_at: int  # UTC milliseconds

    @classmethod
    def seal(cls, index: int, prev_hash: bytes, records, sealed_at: Optional[int] = None) -> "Block":
        if sealed_at is None:
            sealed_at = now_ms()
        payload = payload_hash_of(records)
        header = block_header_bytes(index, prev_hash, payload, sealed_at)
        return cls(
            index=index,
            prev_hash=prev_hash,
            records=tuple(records),
            payload_hash=payload,
            block_hash=hashlib.sha256(header).digest(),
            sealed_at=sealed_at,
        )


def block_bytes(block: Block) -> bytes:
    return (
        _u64(block.index)
        + block.prev_hash
        + records_payload_bytes(block.records)
        + block.payload_hash
        + block.block_hash
        + _u64(block.sealed_at)
    )


def parse_block(data: bytes) -> Block:
    cur = _Cursor(data)
    index = cur.u64()
    prev_hash = cur.take(32)
    record_count = cur.u32()
    records = tuple(_parse_record(cur) for _ in range(record_count))
    payload_hash = cur.take(32)
    block_hash = cur.take(32)
    sealed_at = cur.u64()
    if not cur.done():
        raise ChainFormatError("trailing bytes after block")
    return Block(
        index=index,
        prev_hash=prev_hash,
        records=records,
        payload_hash=payload_hash,
        block_hash=block_hash,
        sealed_at=sealed_at,
    )


def now_ms() -> int:
    return int(time.time() * 1000)


def append_block_to_file(path: str, block: Block, durable: bool = True) -> None:
    raw = block_bytes(block)
    _append_raw(path, _u32(len(raw)) + raw, durable)


def _append_raw(path: str, data: bytes, durable: bool) -> None:
    # a block is committed once its bytes are on stable storage; receipts
    # must never point at data that can vanish on power loss
    with open(path, "ab") as fh:
        fh.write(data)
        if durable:
            fh.flush()
            os.fsync(fh.fileno())


def read_chain_file(path: str) -> List[Block]:
    """Parse every length-prefixed block in a chain file.

    Raises ChainFormatError on a truncated or garbled tail.
    """
    blocks = []
    with open(path, "rb") as fh:
        data = fh.read()
    pos = 0
    while pos < len(data):
        if pos + 4 > len(data):
            raise ChainFormatError("broken chain tail: dangling length prefix")
        length = int.from_bytes(data[pos : pos + 4], "big")
        pos += 4
        if pos + length > len(data):
            raise ChainFormatError("broken chain tail: block shorter than declared length")
        blocks.append(parse_block(data[pos : pos + length]))
        pos += length
    return blocks


# ---------------------------------------------------------------------------
# verification

@dataclass
class VerificationReport:
    valid: bool
    block_index: Optional[int] = None
    reason: Optional[str] = None

    def __str__(self):
        if self.valid:
            return "valid"
        return f"invalid at block {self.block_index}: {self.reason}"


def verify_blocks(blocks: List[Block]) -> VerificationReport:
    prev_hash = GENESIS_PREV_HASH
    for i, block in enumerate(blocks):
        if block.index != i:
            return VerificationReport(False, i, f"index {block.index} out of sequence")
        if block.prev_hash != prev_hash:
            return VerificationReport(False, i, "prev_hash does not match previous block")
        expected_payload = payload_hash_of(block.records)
        if block.payload_hash != expected_payload:
            return VerificationReport(False, i, "payload hash mismatch")
        header = block_header_bytes(block.index, block.prev_hash, block.payload_hash, block.sealed_at)
        if block.block_hash != hashlib.sha256(header).digest():
            return VerificationReport(False, i, "block hash mismatch")
        prev_hash = block.block_hash
    return VerificationReport(True)


def verify_chain_file(path: str) -> VerificationReport:
    """Walk a chain file block by block, rechecking structure and hashes.

    On any failure the report names the index of the first offending
    block, including parse failures, so a flipped byte anywhere in block
    i's span is attributed to block i.
    """
    try:
        with open(path, "rb") as fh:
            data = fh.read()
    except FileNotFoundError:
        return VerificationReport(False, None, "missing chain file")
    pos = 0
    index = 0
    prev_hash = GENESIS_PREV_HASH
    while pos < len(data):
        if pos + 4 > len(data):
            return VerificationReport(False, index, "broken chain tail: dangling length prefix")
        length = int.from_bytes(data[pos : pos + 4], "big")
        pos += 4
        if pos + length > len(data):
            return VerificationReport(
                False, index, "broken chain tail: block shorter than declared length"
            )
        try:
            block = parse_block(data[pos : pos + length])
        except ChainFormatError as exc:
            return VerificationReport(False, index, f"unparseable block: {exc}")
        pos += length
        if block.index != index:
            return VerificationReport(False, index, f"index {block.index} out of sequence")
        if block.prev_hash != prev_hash:
            return VerificationReport(False, index, "prev_hash does not match previous block")
        if block.payload_hash != payload_hash_of(block.records):
            return VerificationReport(False, index, "payload hash mismatch")
        header = block_header_bytes(block.index, block.prev_hash, block.payload_hash, block.sealed_at)
        if block.block_hash != hashlib.sha256(header).digest():
            return VerificationReport(False, index, "block hash mismatch")
        prev_hash = block.block_hash
        index += 1
    if index == 0:
        return VerificationReport(False, None, "empty chain: genesis block missing")
    return VerificationReport(True)


# ---------------------------------------------------------------------------
# nodes and replication

@dataclass
class NodeSet:
    admin_node: str
    candidate_nodes: tuple
    ack_quorum: int

    def __post_init__(self):
        if self.ack_quorum > len(self.candidate_nodes) + 1:
            raise ValueError("ack_quorum cannot exceed candidate node count + 1")
        if self.ack_quorum < 0:
            raise ValueError("ack_quorum must be non-negative")

    @classmethod
    def with_majority_quorum(cls, admin_node: str, candidate_nodes) -> "NodeSet":
        nodes = tuple(candidate_nodes)
        quorum = len(nodes) // 2 + 1 if nodes else 0
        return cls(admin_node=admin_node, candidate_nodes=nodes, ack_quorum=quorum)


@dataclass(frozen=True)
class Receipt:
    receipt_id: str
    block_index: int
    record_digest: bytes


@dataclass
class AckSet:
    acks: List[str] = field(default_factory=list)
    rejections: List[Tuple[str, str]] = field(default_factory=list)
    absentees: List[str] = field(default_factory=list)

    def quorum_met(self, quorum: int) -> bool:
        return len(self.acks) >= quorum


class _ReplicaNode:
    """One verifier node: its own chain file plus in-memory head state.

    ``offline`` simulates a network partition; an offline node neither
    validates nor persists and is listed as an absentee in the AckSet.
    """

    def __init__(self, node_id: str, path: str):
        self.node_id = node_id
        self.path = path
        self.offline = False
        self.head_index = -1
        self.head_hash = GENESIS_PREV_HASH
        self.pseudonyms = set()
        if os.path.exists(path):
            for block in read_chain_file(path):
                self._advance(block)

    def _advance(self, block: Block) -> None:
        self.head_index = block.index
        self.head_hash = block.block_hash
        for record in block.records:
            self.pseudonyms.add(record.voter_pseudonym)

    def validate(self, block: Block) -> Optional[str]:
        """Independent re-verification; returns a rejection reason or None."""
        if block.index != self.head_index + 1:
            return f"block index {block.index} does not extend head {self.head_index}"
        if block.prev_hash != self.head_hash:
            return "prev_hash does not match this node's head"
        if block.payload_hash != payload_hash_of(block.records):
            return "payload hash mismatch"
        header = block_header_bytes(block.index, block.prev_hash, block.payload_hash, block.sealed_at)
        if block.block_hash != hashlib.sha256(header).digest():
            return "block hash mismatch"
        for record in block.records:
            if record.voter_pseudonym in self.pseudonyms:
                return "duplicate voter pseudonym"
        return None

    def persist(self, block: Block) -> None:
        append_block_to_file(self.path, block)
        self._advance(block)


class Ledger:
    """Administration-node ledger with quorum-replicated verifier copies.

    All appends are serialized through one lock (single ordering writer);
    reads see only committed blocks.  ``records_per_block`` affects only
    the bulk ``append_ballots`` path used for throughput experiments: the
    interactive ``append_ballot`` always seals one block per ballot.
    """

    def __init__(
        self,
        directory,
        candidates,
        nodes: Optional[NodeSet] = None,
        records_per_block: int = 1,
    ):
        if records_per_block < 1:
            raise ValueError("records_per_block must be >= 1")
        self.directory = str(directory)
        self.candidates = tuple(candidates)
        if nodes is None:
            nodes = NodeSet.with_majority_quorum(
                "admin", tuple(f"cand-{i}" for i in range(len(self.candidates)))
            )
        self.nodes = nodes
        self.records_per_block = records_per_block
        self.closed = False
        self._lock = threading.Lock()
        os.makedirs(self.directory, exist_ok=True)
        self._replicas = {
            node_id: _ReplicaNode(node_id, self.chain_path(node_id))
            for node_id in nodes.candidate_nodes
        }
        self._blocks: List[Block] = []
        self._pseudonyms = set()
        self._receipts = {}
        admin_path = self.admin_chain_path
        if os.path.exists(admin_path):
            for block in read_chain_file(admin_path):
                self._track(block)
        else:
            genesis = Block.seal(0, GENESIS_PREV_HASH, ())
            append_block_to_file(admin_path, genesis)
            self._track(genesis)
            for replica in self._replicas.values():
                if replica.head_index < 0:
                    replica.persist(genesis)

    # -- paths ------------------------------------------------------------

    def _safe_name(self, node_id: str) -> str:
        return "".join(c if c.isalnum() or c in "-_" else "_" for c in node_id)

    def chain_path(self, node_id: str) -> str:
        return os.path.join(self.directory, self._safe_name(node_id) + CHAIN_SUFFIX)

    @property
    def admin_chain_path(self) -> str:
        return self.chain_path(self.nodes.admin_node)

    # -- bookkeeping -------------------------------------------------------

    def _track(self, block: Block) -> None:
        self._track_with_digests(block, [record_digest(r) for r in block.records])

    def _track_with_digests(self, block: Block, digests) -> None:
        self._blocks.append(block)
        for record, digest in zip(block.records, digests):
            self._pseudonyms.add(record.voter_pseudonym)
            self._receipts[record.receipt_id] = (block.index, digest)

    @property
    def head(self) -> Block:
        return self._blocks[-1]

    @property
    def record_count(self) -> int:
        return sum(len(b.records) for b in self._blocks)

    # -- appends -----------------------------------------------------------

    def append_ballot(self, record: BallotRecord) -> Receipt:
        """Seal one ballot into its own block, replicate, and commit."""
        return self.append_ballots([record])[0]

    def append_ballots(self, records) -> List[Receipt]:
        """Bulk append, grouping ``records_per_block`` ballots per block."""
        with self._lock:
            if self.closed:
                raise LedgerError("ledger is closed")
            receipts = []
            step = self.records_per_block
            pending = list(records)
            for i in range(0, len(pending), step):
                receipts.extend(self._commit_block(pending[i : i + step]))
            return receipts

    def _commit_block(self, records) -> List[Receipt]:
        seen = set()
        for record in records:
            if record.vote not in self.candidates:
                raise InvalidVoteError(f"invalid vote: unknown candidate {record.vote!r}")
            if record.voter_pseudonym in self._pseudonyms or record.voter_pseudonym in seen:
                raise AlreadyVotedError("already voted")
            if record.receipt_id in self._receipts:
                raise LedgerError(f"duplicate receipt id {record.receipt_id!r}")
            seen.add(record.voter_pseudonym)
        # serialize each record once; payload hash, file bytes, and receipt
        # digests all reuse the same blobs
        blobs = [record_bytes(r) for r in records]
        payload = _u32(len(records)) + b"".join(blobs)
        payload_hash = hashlib.sha256(payload).digest()
        index = self.head.index + 1
        prev_hash = self.head.block_hash
        sealed_at = now_ms()
        header = block_header_bytes(index, prev_hash, payload_hash, sealed_at)
        block = Block(
            index=index,
            prev_hash=prev_hash,
            records=tuple(records),
            payload_hash=payload_hash,
            block_hash=hashlib.sha256(header).digest(),
            sealed_at=sealed_at,
        )
        acks = self._replicate(block)
        if not acks.quorum_met(self.nodes.ack_quorum):
            raise ReplicationError(
                f"replication failed: {len(acks.acks)} acks, "
                f"quorum {self.nodes.ack_quorum} "
                f"(rejections: {acks.rejections}, absent: {acks.absentees})"
            )
        raw = (
            _u64(block.index)
            + block.prev_hash
            + payload
            + block.payload_hash
            + block.block_hash
            + _u64(block.sealed_at)
        )
        _append_raw(self.admin_chain_path, _u32(len(raw)) + raw, self.durable)
        for node_id in acks.acks:
            self._replicas[node_id].persist(block)
        self._track_with_digests(
            block, [hashlib.sha256(blob).digest() for blob in blobs]
        )
        return [
            Receipt(r.receipt_id, block.index, self._receipts[r.receipt_id][1])
            for r in records
        ]

    def _replicate(self, block: Block) -> AckSet:
        """Validation phase: collect verifier acknowledgments for ``block``.

        Nodes that fell behind (e.g. were offline) are first caught up with
        the already-committed suffix of the admin chain.
        """
        acks = AckSet()
        for node_id, replica in self._replicas.items():
            if replica.offline:
                acks.absentees.append(node_id)
                continue
            while replica.head_index < self.head.index:
                replica.persist(self._blocks[replica.head_index + 1])
            reason = replica.validate(block)
            if reason is None:
                acks.acks.append(node_id)
            else:
                acks.rejections.append((node_id, reason))
        return acks

    def replicate_block(self, block: Block) -> AckSet:
        """Offer a block to the verifier nodes without committing it."""
        with self._lock:
            return self._replicate(block)

    # -- reads ---------------------------------------------------------------

    def verify_chain(self, node_id: Optional[str] = None) -> VerificationReport:
        """Re-read a node's chain from disk and recheck every hash and link."""
        path = self.chain_path(node_id) if node_id else self.admin_chain_path
        return verify_chain_file(path)

    def get_record(self, receipt: Receipt) -> BallotRecord:
        """Fetch the ballot a receipt points at, verifying its digest
        against the bytes currently on disk."""
        known = self._receipts.get(receipt.receipt_id)
        if known is None or known[0] != receipt.block_index:
            raise UnknownReceiptError(f"unknown receipt {receipt.receipt_id!r}")
        try:
            blocks = read_chain_file(self.admin_chain_path)
        except ChainFormatError as exc:
            raise DigestMismatchError(f"digest mismatch: chain unreadable ({exc})") from exc
        if receipt.block_index >= len(blocks):
            raise UnknownReceiptError("receipt points past the end of the chain")
        for record in blocks[receipt.block_index].records:
            if record.receipt_id == receipt.receipt_id:
                if record_digest(record) != receipt.record_digest:
                    raise DigestMismatchError(
                        "digest mismatch: ledger record does not match receipt"
                    )
                return record
        raise DigestMismatchError("digest mismatch: record missing from its block")

    def iterate_records(self, candidate: Optional[str] = None) -> Iterator[BallotRecord]:
        """All committed records in chain order, optionally one candidate's."""
        for block in self._blocks:
            for record in block.records:
                if candidate is None or record.vote == candidate:
                    yield record

    def close(self) -> None:
        with self._lock:
            self.closed = True

    # -- test and harness hooks ----------------------------------------------

    def set_node_offline(self, node_id: str, offline: bool = True) -> None:
        self._replicas[node_id].offline = offline
