"""Bit-exact reader/writer for PLINK 1.x .bed/.bim/.fam triplets.

The .bed payload is kept as raw packed bytes (one byte = four samples,
two bits per call, low-order bits first, SNP-major) so that a
read -> write cycle reproduces the input byte for byte.  Genotypes enter
the rest of the pipeline through :func:`recode_minor_allele`, which turns
raw calls into minor-allele counts with ``-1`` marking missing data.
"""

from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .errors import DataFormatError, TruncationError, ValidationError

BED_MAGIC = b"\x6c\x1b"
BED_SNP_MAJOR = b"\x01"

# Raw two-bit call codes, as defined by the PLINK 1 binary format.
HOM_A1 = 0
MISSING = 1
HET = 2
HOM_A2 = 3

MISSING_CODE = -1  # recoded sentinel

APOE_FEATURES = ("APOE_e2", "APOE_e3", "APOE_e4")

_SEX_FROM_FAM = {"1": "male", "2": "female"}
_SEX_TO_FAM = {"male": "1", "female": "2", "unknown": "0"}


def _decode_lut() -> np.ndarray:
    lut = np.empty((256, 4), dtype=np.uint8)
    for byte in range(256):
        for k in range(4):
            lut[byte, k] = (byte >> (2 * k)) & 0b11
    return lut


_DECODE_LUT = _decode_lut()


@dataclass(frozen=True)
class VariantRecord:
    """One .bim line: a biallelic variant."""

    chromosome: str
    snp_id: str
    genetic_distance: float
    base_pair_position: int
    allele1: str
    allele2: str

    def __post_init__(self):
        if not self.allele1 or not self.allele2:
            raise ValidationError(f"variant {self.snp_id}: alleles must be non-empty")
        if self.base_pair_position < 0:
            raise ValidationError(f"variant {self.snp_id}: negative bp position")


@dataclass(frozen=True)
class SampleRecord:
    """One .fam line (parent columns are not retained)."""

    family_id: str
    individual_id: str
    sex: str = "unknown"
    phenotype: str = "-9"

    def __post_init__(self):
        if self.sex not in ("male", "female", "unknown"):
            raise ValidationError(f"invalid sex code {self.sex!r}")


@dataclass(frozen=True)
class GenotypeMatrix:
    """Packed SNP-major genotype calls plus sample/variant metadata.

    ``calls`` holds ``n_variants * ceil(n_samples / 4)`` bytes; padding
    bits in the last byte of each SNP block are zero by construction.
    Instances are immutable and safe to share across threads.
    """

    samples: tuple[SampleRecord, ...]
    variants: tuple[VariantRecord, ...]
    calls: bytes

    def __post_init__(self):
        object.__setattr__(self, "samples", tuple(self.samples))
        object.__setattr__(self, "variants", tuple(self.variants))
        expected = self.n_variants * self.bytes_per_variant
        if len(self.calls) != expected:
            raise TruncationError(
                f"call payload holds {len(self.calls)} bytes, "
                f"expected {expected} for {self.n_variants} variants "
                f"x {self.n_samples} samples"
            )
        _check_unique(
            (v.snp_id for v in self.variants), "duplicate variant id: {}"
        )
        _check_unique(
            ((s.family_id, s.individual_id) for s in self.samples),
            "duplicate sample id: {}",
        )
        object.__setattr__(self, "calls", _zero_padding_bits(self))

    @property
    def n_samples(self) -> int:
        return len(self.samples)

    @property
    def n_variants(self) -> int:
        return len(self.variants)

    @property
    def bytes_per_variant(self) -> int:
        return (self.n_samples + 3) // 4

    def unpack(self) -> np.ndarray:
        """Return raw call codes as a (n_samples, n_variants) uint8 array."""
        if self.n_variants == 0 or self.n_samples == 0:
            return np.zeros((self.n_samples, self.n_variants), dtype=np.uint8)
        raw = np.frombuffer(self.calls, dtype=np.uint8)
        raw = raw.reshape(self.n_variants, self.bytes_per_variant)
        codes = _DECODE_LUT[raw].reshape(self.n_variants, -1)[:, : self.n_samples]
        return np.ascontiguousarray(codes.T)


def _check_unique(items, message: str) -> None:
    seen = set()
    for item in items:
        if item in seen:
            raise ValidationError(message.format(item))
        seen.add(item)


def _zero_padding_bits(matrix: GenotypeMatrix) -> bytes:
    """Mask out the unused high bits of each SNP block's final byte."""
    pad = matrix.n_samples % 4
    if pad == 0 or matrix.n_variants == 0:
        return bytes(matrix.calls)
    raw = np.frombuffer(matrix.calls, dtype=np.uint8).copy()
    raw = raw.reshape(matrix.n_variants, matrix.bytes_per_variant)
    raw[:, -1] &= (1 << (2 * pad)) - 1
    return raw.tobytes()


def pack_calls(codes: np.ndarray) -> bytes:
    """Pack a (n_samples, n_variants) array of raw codes into .bed bytes."""
    codes = np.asarray(codes, dtype=np.uint8)
    if codes.size and codes.max() > 3:
        raise ValidationError("raw call codes must lie in {0, 1, 2, 3}")
    n_samples, n_variants = codes.shape
    if n_variants == 0 or n_samples == 0:
        return b""
    width = 4 * ((n_samples + 3) // 4)
    padded = np.zeros((n_variants, width), dtype=np.uint8)
    padded[:, :n_samples] = codes.T
    padded = padded.reshape(n_variants, -1, 4)
    packed = (
        padded[:, :, 0]
        | (padded[:, :, 1] << 2)
        | (padded[:, :, 2] << 4)
        | (padded[:, :, 3] << 6)
    )
    return packed.astype(np.uint8).tobytes()


def read_bed_trio(bed_path, bim_path, fam_path) -> GenotypeMatrix:
    """Read a PLINK binary triplet into a :class:`GenotypeMatrix`.

    Only SNP-major mode (third header byte 0x01) is supported.
    """
    variants = _read_bim(Path(bim_path))
    samples = _read_fam(Path(fam_path))
    payload = Path(bed_path).read_bytes()
    if len(payload) < 3 or payload[:2] != BED_MAGIC:
        raise DataFormatError(f"{bed_path}: missing PLINK .bed magic bytes")
    if payload[2:3] != BED_SNP_MAJOR:
        raise DataFormatError(
            f"{bed_path}: unsupported mode byte {payload[2]:#04x} "
            "(only SNP-major 0x01 is supported)"
        )
    body = payload[3:]
    expected = len(variants) * ((len(samples) + 3) // 4)
    if len(body) != expected:
        raise TruncationError(
            f"{bed_path}: {len(body)} payload bytes, expected {expected}"
        )
    return GenotypeMatrix(samples=samples, variants=variants, calls=body)


def write_bed_trio(matrix: GenotypeMatrix, bed_path, bim_path, fam_path) -> None:
    """Write a genotype matrix as a SNP-major PLINK binary triplet."""
    with open(bim_path, "w", encoding="utf-8", newline="\n") as fh:
        for v in matrix.variants:
            fh.write(
                f"{v.chromosome}\t{v.snp_id}\t{v.genetic_distance:g}"
                f"\t{v.base_pair_position}\t{v.allele1}\t{v.allele2}\n"
            )
    with open(fam_path, "w", encoding="utf-8", newline="\n") as fh:
        for s in matrix.samples:
            fh.write(
                f"{s.family_id} {s.individual_id} 0 0 "
                f"{_SEX_TO_FAM[s.sex]} {s.phenotype}\n"
            )
    with open(bed_path, "wb") as fh:
        fh.write(BED_MAGIC + BED_SNP_MAJOR + matrix.calls)


def _read_bim(path: Path) -> tuple[VariantRecord, ...]:
    variants = []
    for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip():
            continue
        cols = line.split()
        if len(cols) != 6:
            raise DataFormatError(f"{path}:{lineno}: expected 6 columns, got {len(cols)}")
        variants.append(
            VariantRecord(
                chromosome=cols[0],
                snp_id=cols[1],
                genetic_distance=float(cols[2]),
                base_pair_position=int(cols[3]),
                allele1=cols[4],
                allele2=cols[5],
            )
        )
    return tuple(variants)


def _read_fam(path: Path) -> tuple[SampleRecord, ...]:
    samples = []
    for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip():
            continue
        cols = line.split()
        if len(cols) != 6:
            raise DataFormatError(f"{path}:{lineno}: expected 6 columns, got {len(cols)}")
        samples.append(
            SampleRecord(
                family_id=cols[0],
                individual_id=cols[1],
                sex=_SEX_FROM_FAM.get(cols[4], "unknown"),
                phenotype=cols[5],
            )
        )
    return tuple(samples)


@dataclass
class RecodedGenotypes:
    """Subjects x features minor-allele counts.

    Coding: -1 missing, 0 two major alleles, 1 heterozygous, 2 two minor
    alleles.  APOE presence features appended by :func:`append_apoe` use
    {-1, 0, 1} and are marked ``is_snp = False`` so that SNP-level QC
    filters leave them untouched.
    """

    matrix: np.ndarray
    sample_ids: tuple[str, ...]
    feature_ids: tuple[str, ...]
    minor_alleles: tuple[str, ...]
    is_snp: np.ndarray
    all_missing: np.ndarray = field(default=None)

    def __post_init__(self):
        self.matrix = np.asarray(self.matrix, dtype=np.int8)
        self.sample_ids = tuple(self.sample_ids)
        self.feature_ids = tuple(self.feature_ids)
        self.minor_alleles = tuple(self.minor_alleles)
        self.is_snp = np.asarray(self.is_snp, dtype=bool)
        if self.all_missing is None:
            self.all_missing = np.zeros(len(self.feature_ids), dtype=bool)
        self.all_missing = np.asarray(self.all_missing, dtype=bool)
        n_sub, n_feat = self.matrix.shape
        if n_sub != len(self.sample_ids) or n_feat != len(self.feature_ids):
            raise ValidationError("recoded matrix shape does not match id lists")
        if len(self.minor_alleles) != n_feat or self.is_snp.size != n_feat:
            raise ValidationError("per-feature metadata length mismatch")
        bad = ~np.isin(self.matrix, (-1, 0, 1, 2))
        if bad.any():
            raise ValidationError("recoded entries must lie in {-1, 0, 1, 2}")

    @property
    def n_subjects(self) -> int:
        return self.matrix.shape[0]

    @property
    def n_features(self) -> int:
        return self.matrix.shape[1]

    def subset(self, subject_rows=None, feature_cols=None) -> "RecodedGenotypes":
        """Return a copy restricted to the given row/column index arrays."""
        rows = np.arange(self.n_subjects) if subject_rows is None else np.asarray(subject_rows)
        cols = np.arange(self.n_features) if feature_cols is None else np.asarray(feature_cols)
        return RecodedGenotypes(
            matrix=self.matrix[np.ix_(rows, cols)],
            sample_ids=tuple(self.sample_ids[i] for i in rows),
            feature_ids=tuple(self.feature_ids[j] for j in cols),
            minor_alleles=tuple(self.minor_alleles[j] for j in cols),
            is_snp=self.is_snp[cols],
            all_missing=self.all_missing[cols],
        )


def recode_minor_allele(matrix: GenotypeMatrix) -> RecodedGenotypes:
    """Recode raw calls to per-subject minor-allele counts.

    The minor allele is the less frequent one among non-missing calls;
    an exact 50/50 tie designates allele2 (the second .bim allele) as
    minor so the result is deterministic.  A variant with every call
    missing is recoded to all ``-1`` and flagged in ``all_missing``.
    """
    if matrix.n_variants == 0 or matrix.n_samples == 0:
        raise ValidationError("cannot recode an empty genotype matrix")
    _check_unique(
        (s.individual_id for s in matrix.samples),
        "individual_id {} is not unique; recoding keys subjects by individual_id",
    )
    codes = matrix.unpack()  # (n_samples, n_variants)
    n_hom_a1 = (codes == HOM_A1).sum(axis=0)
    n_het = (codes == HET).sum(axis=0)
    n_hom_a2 = (codes == HOM_A2).sum(axis=0)
    count_a1 = 2 * n_hom_a1 + n_het
    count_a2 = 2 * n_hom_a2 + n_het
    minor_is_a2 = count_a2 <= count_a1
    all_missing = (count_a1 + count_a2) == 0

    # code -> minor-allele count, for each tie-break orientation
    to_counts_a2_minor = np.array([0, MISSING_CODE, 1, 2], dtype=np.int8)
    to_counts_a1_minor = np.array([2, MISSING_CODE, 1, 0], dtype=np.int8)
    recoded = np.where(
        minor_is_a2[np.newaxis, :],
        to_counts_a2_minor[codes],
        to_counts_a1_minor[codes],
    ).astype(np.int8)

    minor_alleles = tuple(
        v.allele2 if a2 else v.allele1
        for v, a2 in zip(matrix.variants, minor_is_a2)
    )
    return RecodedGenotypes(
        matrix=recoded,
        sample_ids=tuple(s.individual_id for s in matrix.samples),
        feature_ids=tuple(v.snp_id for v in matrix.variants),
        minor_alleles=minor_alleles,
        is_snp=np.ones(matrix.n_variants, dtype=bool),
        all_missing=all_missing,
    )


def append_apoe(
    recoded: RecodedGenotypes,
    apoe_table: Mapping[str, Sequence[int]],
) -> RecodedGenotypes:
    """Append APOE e2/e3/e4 presence features (values in {-1, 0, 1}).

    ``apoe_table`` maps individual_id to an (e2, e3, e4) triple.  Subjects
    absent from the table get (-1, -1, -1) and a warning is emitted.
    """
    for sid, values in apoe_table.items():
        if len(values) != 3 or any(v not in (-1, 0, 1) for v in values):
            raise ValidationError(
                f"APOE entry for {sid!r} must be three values in {{-1, 0, 1}}"
            )
    block = np.full((recoded.n_subjects, 3), MISSING_CODE, dtype=np.int8)
    absent = []
    for i, sid in enumerate(recoded.sample_ids):
        if sid in apoe_table:
            block[i] = apoe_table[sid]
        else:
            absent.append(sid)
    if absent:
        warnings.warn(
            f"{len(absent)} subject(s) missing from the APOE table; "
            f"coded as missing: {', '.join(absent[:5])}"
            + ("..." if len(absent) > 5 else "")
        )
    return RecodedGenotypes(
        matrix=np.hstack([recoded.matrix, block]),
        sample_ids=recoded.sample_ids,
        feature_ids=recoded.feature_ids + APOE_FEATURES,
        minor_alleles=recoded.minor_alleles + ("e2", "e3", "e4"),
        is_snp=np.concatenate([recoded.is_snp, np.zeros(3, dtype=bool)]),
        all_missing=np.concatenate(
            [recoded.all_missing, (block == MISSING_CODE).all(axis=0)]
        ),
    )


def read_apoe_table(path) -> dict[str, tuple[int, int, int]]:
    """Read the APOE CSV (header: individual_id,e2,e3,e4)."""
    table = {}
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        required = {"individual_id", "e2", "e3", "e4"}
        if reader.fieldnames is None or not required.issubset(reader.fieldnames):
            raise DataFormatError(
                f"{path}: APOE table must have columns individual_id,e2,e3,e4"
            )
        for row in reader:
            table[row["individual_id"]] = (
                int(row["e2"]),
                int(row["e3"]),
                int(row["e4"]),
            )
    return table


def write_apoe_table(path, table: Mapping[str, Sequence[int]]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["individual_id", "e2", "e3", "e4"])
        for sid in table:
            e2, e3, e4 = table[sid]
            writer.writerow([sid, e2, e3, e4])


def replace_matrix(recoded: RecodedGenotypes, matrix: np.ndarray) -> RecodedGenotypes:
    """Return a copy of ``recoded`` with a different value matrix."""
    return RecodedGenotypes(
        matrix=matrix,
        sample_ids=recoded.sample_ids,
        feature_ids=recoded.feature_ids,
        minor_alleles=recoded.minor_alleles,
        is_snp=recoded.is_snp,
        all_missing=recoded.all_missing,
    )
