"""Shared builders for the test suite."""

import numpy as np
import pytest

from datscore.plink import (
    GenotypeMatrix,
    RecodedGenotypes,
    SampleRecord,
    VariantRecord,
    pack_calls,
)


def make_matrix(codes: np.ndarray, snp_prefix: str = "rs") -> GenotypeMatrix:
    """GenotypeMatrix from a (n_samples, n_variants) raw-code array."""
    codes = np.asarray(codes, dtype=np.uint8)
    n_samples, n_variants = codes.shape
    samples = tuple(
        SampleRecord(family_id=f"F{i}", individual_id=f"I{i}") for i in range(n_samples)
    )
    variants = tuple(
        VariantRecord(
            chromosome="1",
            snp_id=f"{snp_prefix}{j}",
            genetic_distance=0.0,
            base_pair_position=100 + j,
            allele1="A",
            allele2="B",
        )
        for j in range(n_variants)
    )
    return GenotypeMatrix(samples=samples, variants=variants, calls=pack_calls(codes))


def random_matrix(rng: np.random.Generator, n_samples: int, n_variants: int) -> GenotypeMatrix:
    return make_matrix(rng.integers(0, 4, size=(n_samples, n_variants)))


def make_recoded(values: np.ndarray, is_snp=None) -> RecodedGenotypes:
    """RecodedGenotypes from a (subjects, features) array in {-1,0,1,2}."""
    values = np.asarray(values, dtype=np.int8)
    n_sub, n_feat = values.shape
    if is_snp is None:
        is_snp = np.ones(n_feat, dtype=bool)
    return RecodedGenotypes(
        matrix=values,
        sample_ids=tuple(f"I{i}" for i in range(n_sub)),
        feature_ids=tuple(f"rs{j}" for j in range(n_feat)),
        minor_alleles=tuple("B" for _ in range(n_feat)),
        is_snp=np.asarray(is_snp, dtype=bool),
    )


@pytest.fixture
def rng():
    return np.random.default_rng(20260808)
