"""Demographic questionnaire schema and one-hot exponent packing.

A voter's answer to one factor is encoded as B^category where
B = 2^pack_base_bits, i.e. a one-hot vector written in base-B digits.
Summing encodings (in plaintext or under encryption) therefore yields
the per-category histogram, readable back with ``decode_counts``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import List, Union

from .he import PublicKey, encrypt

MIN_FACTORS = 1
MAX_FACTORS = 16
MIN_CATEGORIES = 2
MAX_CATEGORIES = 64
DEFAULT_PACK_BASE_BITS = 32


class SchemaError(ValueError):
    pass


@dataclass(frozen=True)
class Factor:
    name: str
    categories: tuple

    def __post_init__(self):
        if not self.name:
            raise SchemaError("factor name must be non-empty")
        count = len(self.categories)
        if not MIN_CATEGORIES <= count <= MAX_CATEGORIES:
            raise SchemaError(
                f"factor {self.name!r} has {count} categories; "
                f"must be {MIN_CATEGORIES}..{MAX_CATEGORIES}"
            )
        if len(set(self.categories)) != count:
            raise SchemaError(f"factor {self.name!r} has duplicate category labels")

    @property
    def category_count(self) -> int:
        return len(self.categories)


@dataclass(frozen=True)
class FactorSchema:
    schema_id: str
    factors: tuple
    pack_base_bits: int = DEFAULT_PACK_BASE_BITS

    def __post_init__(self):
        if not self.schema_id:
            raise SchemaError("schema_id must be non-empty")
        if not MIN_FACTORS <= len(self.factors) <= MAX_FACTORS:
            raise SchemaError(
                f"schema must have {MIN_FACTORS}..{MAX_FACTORS} factors, "
                f"got {len(self.factors)}"
            )
        names = [f.name for f in self.factors]
        if len(set(names)) != len(names):
            raise SchemaError("duplicate factor names")
        if self.pack_base_bits < 1:
            raise SchemaError("pack_base_bits must be positive")

    @property
    def factor_count(self) -> int:
        return len(self.factors)


@dataclass(frozen=True)
class AnswerSet:
    schema_id: str
    answers: tuple


@dataclass(frozen=True)
class EncryptedBatch:
    schema_id: str
    ciphertexts: tuple


@dataclass
class ValidationResult:
    ok: bool
    violations: List[str] = field(default_factory=list)


def load_schema(document: Union[str, bytes, dict]) -> FactorSchema:
    """Parse a schema document: JSON with schema_id, pack_base_bits and
    factors[{name, categories[]}]."""
    if isinstance(document, (str, bytes)):
        try:
            doc = json.loads(document)
        except json.JSONDecodeError as exc:
            raise SchemaError(f"malformed schema document: {exc}") from exc
    else:
        doc = document
    if not isinstance(doc, dict):
        raise SchemaError("schema document must be a JSON object")
    try:
        schema_id = doc["schema_id"]
        raw_factors = doc["factors"]
    except KeyError as exc:
        raise SchemaError(f"schema document missing field {exc}") from exc
    if not isinstance(raw_factors, list):
        raise SchemaError("factors must be a list")
    factors = []
    for entry in raw_factors:
        try:
            factors.append(Factor(name=entry["name"], categories=tuple(entry["categories"])))
        except (KeyError, TypeError) as exc:
            raise SchemaError(f"malformed factor entry: {exc}") from exc
    return FactorSchema(
        schema_id=schema_id,
        factors=tuple(factors),
        pack_base_bits=int(doc.get("pack_base_bits", DEFAULT_PACK_BASE_BITS)),
    )


def dump_schema(schema: FactorSchema) -> dict:
    return {
        "schema_id": schema.schema_id,
        "pack_base_bits": schema.pack_base_bits,
        "factors": [
            {"name": f.name, "categories": list(f.categories)} for f in schema.factors
        ],
    }


def default_schema() -> FactorSchema:
    """Shipped example profile: five demographic factors for a South Korean
    electorate (2/17/6/5/5 categories).  Illustrative, not normative; the
    schema file governs a real election."""
    return FactorSchema(
        schema_id="kr-demographics-v1",
        factors=(
            Factor("sex", ("female", "male")),
            Factor(
                "residence",
                (
                    "Seoul", "Busan", "Daegu", "Incheon", "Gwangju", "Daejeon",
                    "Ulsan", "Sejong", "Gyeonggi", "Gangwon", "North Chungcheong",
                    "South Chungcheong", "North Jeolla", "South Jeolla",
                    "North Gyeongsang", "South Gyeongsang", "Jeju",
                ),
            ),
            Factor("age", ("18-29", "30-39", "40-49", "50-59", "60-69", "70+")),
            Factor(
                "income",
                ("under 20m", "20m-40m", "40m-60m", "60m-80m", "over 80m"),
            ),
            Factor(
                "education",
                ("middle school or less", "high school", "associate", "bachelor", "graduate"),
            ),
        ),
    )


def _check_indices(schema: FactorSchema, factor_index: int, category_index: int) -> Factor:
    if not 0 <= factor_index < schema.factor_count:
        raise SchemaError(f"factor index {factor_index} out of range")
    factor = schema.factors[factor_index]
    if not 0 <= category_index < factor.category_count:
        raise SchemaError(
            f"category index {category_index} out of range for factor {factor.name!r}"
        )
    return factor


def encode_answer(schema: FactorSchema, factor_index: int, category_index: int) -> int:
    """One-hot packing: B^category_index with B = 2^pack_base_bits."""
    _check_indices(schema, factor_index, category_index)
    return 1 << (schema.pack_base_bits * category_index)


def decode_counts(schema: FactorSchema, factor_index: int, packed: int) -> List[int]:
    """Base-B digits of ``packed``, zero-padded to the factor's category count.

    Inverse of summing ``encode_answer`` outputs as long as every
    per-category count stays below B.
    """
    if not 0 <= factor_index < schema.factor_count:
        raise SchemaError(f"factor index {factor_index} out of range")
    if packed < 0:
        raise SchemaError("packed value must be non-negative")
    factor = schema.factors[factor_index]
    mask = (1 << schema.pack_base_bits) - 1
    counts = []
    for _ in range(factor.category_count):
        counts.append(packed & mask)
        packed >>= schema.pack_base_bits
    if packed != 0:
        raise SchemaError(
            f"packed value has more base-2^{schema.pack_base_bits} digits than "
            f"factor {factor.name!r} has categories; aggregate is corrupt"
        )
    return counts


def check_capacity(schema: FactorSchema, key: PublicKey) -> None:
    """Every factor's packed histogram must fit below the key modulus."""
    for factor in schema.factors:
        if factor.category_count * schema.pack_base_bits >= key.n.bit_length():
            raise SchemaError(
                f"factor {factor.name!r} needs "
                f"{factor.category_count * schema.pack_base_bits} packed bits, "
                f"which overflows a {key.n.bit_length()}-bit modulus"
            )


def validate_answers(schema: FactorSchema, answers: AnswerSet) -> ValidationResult:
    violations = []
    if answers.schema_id != schema.schema_id:
        violations.append(
            f"schema mismatch: answers are for {answers.schema_id!r}, "
            f"expected {schema.schema_id!r}"
        )
    if len(answers.answers) != schema.factor_count:
        violations.append(
            f"answer count {len(answers.answers)} does not match "
            f"factor count {schema.factor_count}"
        )
    else:
        for i, (factor, idx) in enumerate(zip(schema.factors, answers.answers)):
            if not isinstance(idx, int) or not 0 <= idx < factor.category_count:
                violations.append(
                    f"factor {i} ({factor.name!r}): category index {idx!r} out of range"
                )
    return ValidationResult(ok=not violations, violations=violations)


def encrypt_batch(key: PublicKey, schema: FactorSchema, answers: AnswerSet) -> EncryptedBatch:
    """One ciphertext per factor, each encrypting the one-hot encoding."""
    result = validate_answers(schema, answers)
    if not result.ok:
        raise SchemaError("; ".join(result.violations))
    check_capacity(schema, key)
    cts = tuple(
        encrypt(key, encode_answer(schema, i, idx))
        for i, idx in enumerate(answers.answers)
    )
    return EncryptedBatch(schema_id=schema.schema_id, ciphertexts=cts)


def batch_to_wire(batch: EncryptedBatch) -> dict:
    from .he import ciphertext_to_wire

    return {
        "schema_id": batch.schema_id,
        "ciphertexts": [ciphertext_to_wire(ct) for ct in batch.ciphertexts],
    }


def batch_from_wire(obj: dict) -> EncryptedBatch:
    from .he import ciphertext_from_wire

    try:
        schema_id = obj["schema_id"]
        cts = tuple(ciphertext_from_wire(c) for c in obj["ciphertexts"])
    except (KeyError, TypeError) as exc:
        raise ValueError(f"malformed batch wire form: {exc}") from exc
    return EncryptedBatch(schema_id=schema_id, ciphertexts=cts)
