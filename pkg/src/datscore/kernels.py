"""Base kernel construction for the multi-kernel classifier.

The default stack holds four kernel families per feature block: linear
K = X X', and polynomial K = (X X' / p + 1)^d for degrees 1..3 with p the
block's feature count.  A Gaussian kernel is available behind explicit
configuration but is excluded from the defaults.  Trace normalization
rescales each base kernel to trace n so heterogeneous blocks (allele
counts vs w-scores) live on comparable scales.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Mapping, Optional, Sequence

import numpy as np

from .errors import NumericalError, ValidationError

KERNEL_KINDS = ("linear", "poly1", "poly2", "poly3")
EXTRA_KINDS = ("gaussian",)
_DEGREES = {"linear": 1, "poly1": 1, "poly2": 2, "poly3": 3}

PSD_TOLERANCE = -1e-8


@dataclass(frozen=True)
class KernelSpec:
    """One base kernel: a kind applied to one feature block.

    ``bandwidth`` applies to the gaussian kind only; None requests the
    median-pairwise-distance heuristic, resolved at build time so that
    test kernels reuse the training value.
    """

    kind: str
    feature_block: str
    normalize: bool = True
    bandwidth: Optional[float] = None

    def __post_init__(self):
        if self.kind not in KERNEL_KINDS + EXTRA_KINDS:
            raise ValidationError(f"unknown kernel kind {self.kind!r}")
        if self.bandwidth is not None and self.bandwidth <= 0:
            raise ValidationError("bandwidth must be positive")

    @property
    def degree(self) -> int:
        if self.kind == "gaussian":
            raise ValidationError("gaussian kernels have no polynomial degree")
        return _DEGREES[self.kind]


@dataclass
class KernelStack:
    """Base kernels on one training set, with their normalization constants."""

    matrices: np.ndarray  # (M, n, n)
    specs: tuple[KernelSpec, ...]
    norm_constants: np.ndarray  # (M,)

    @property
    def n(self) -> int:
        return self.matrices.shape[1]

    @property
    def n_kernels(self) -> int:
        return self.matrices.shape[0]


def default_specs(
    blocks: Mapping[str, Sequence[int]], normalize: bool = True
) -> tuple[KernelSpec, ...]:
    """The standard stack: all four kinds on every feature block."""
    return tuple(
        KernelSpec(kind, block, normalize)
        for block in blocks
        for kind in KERNEL_KINDS
    )


def _gram(kind: str, gram: np.ndarray, block_size: int) -> np.ndarray:
    if kind == "linear":
        return gram
    return (gram / block_size + 1.0) ** _DEGREES[kind]


def _squared_distances(
    left: np.ndarray, right: np.ndarray, gram: np.ndarray
) -> np.ndarray:
    sq_left = (left * left).sum(axis=1)[:, None]
    sq_right = (right * right).sum(axis=1)[None, :]
    return np.maximum(sq_left + sq_right - 2.0 * gram, 0.0)


def _median_bandwidth(xb: np.ndarray) -> float:
    gram = xb @ xb.T
    d2 = _squared_distances(xb, xb, gram)
    off_diag = d2[np.triu_indices_from(d2, k=1)]
    med = float(np.median(off_diag)) if off_diag.size else 1.0
    return float(np.sqrt(med)) if med > 0 else 1.0


def build_kernels(
    train_matrix: np.ndarray,
    specs: Sequence[KernelSpec],
    blocks: Mapping[str, Sequence[int]],
    check_psd: bool = True,
) -> KernelStack:
    """Evaluate every base kernel on the training rows.

    Genetic codes must already be mapped to reals with missing values
    imputed; non-finite entries are rejected.  Gaussian specs without a
    bandwidth get the median pairwise distance resolved into the returned
    specs, so prediction reuses the training value.
    """
    x = np.asarray(train_matrix, dtype=np.float64)
    if not np.isfinite(x).all():
        raise ValidationError("kernel inputs must be finite")
    n = x.shape[0]
    matrices = np.empty((len(specs), n, n))
    constants = np.ones(len(specs))
    resolved = []
    for m, spec in enumerate(specs):
        cols = np.asarray(blocks[spec.feature_block], dtype=int)
        if cols.size == 0:
            raise ValidationError(f"feature block {spec.feature_block!r} is empty")
        xb = x[:, cols]
        gram = xb @ xb.T
        if spec.kind == "gaussian":
            if spec.bandwidth is None:
                spec = replace(spec, bandwidth=_median_bandwidth(xb))
            k = np.exp(-_squared_distances(xb, xb, gram) / (2.0 * spec.bandwidth**2))
        else:
            k = _gram(spec.kind, gram, cols.size)
        if spec.normalize:
            trace = np.trace(k)
            constants[m] = n / trace if trace > 0 else 1.0
            k = k * constants[m]
        matrices[m] = (k + k.T) / 2.0  # enforce exact symmetry
        resolved.append(spec)
    stack = KernelStack(matrices, tuple(resolved), constants)
    if check_psd:
        validate_psd(stack)
    return stack


def validate_psd(stack: KernelStack) -> None:
    """Check every base kernel is numerically positive semidefinite."""
    for spec, k in zip(stack.specs, stack.matrices):
        min_eig = float(np.linalg.eigvalsh(k)[0])
        if min_eig < PSD_TOLERANCE:
            raise NumericalError(
                f"kernel {spec.kind} on block {spec.feature_block!r} has "
                f"minimum eigenvalue {min_eig:.3e}"
            )


def build_test_kernels(
    test_matrix: np.ndarray,
    train_matrix: np.ndarray,
    specs: Sequence[KernelSpec],
    blocks: Mapping[str, Sequence[int]],
    norm_constants: np.ndarray,
) -> np.ndarray:
    """Cross-kernels k(x*, x_train), reusing the training normalization.

    Returns an (M, n_test, n_train) array aligned with ``specs``.
    """
    xt = np.asarray(test_matrix, dtype=np.float64)
    xr = np.asarray(train_matrix, dtype=np.float64)
    if not np.isfinite(xt).all():
        raise ValidationError("kernel inputs must be finite")
    out = np.empty((len(specs), xt.shape[0], xr.shape[0]))
    for m, spec in enumerate(specs):
        cols = np.asarray(blocks[spec.feature_block], dtype=int)
        gram = xt[:, cols] @ xr[:, cols].T
        if spec.kind == "gaussian":
            if spec.bandwidth is None:
                raise ValidationError(
                    "gaussian test kernels need the bandwidth resolved at training"
                )
            d2 = _squared_distances(xt[:, cols], xr[:, cols], gram)
            k = np.exp(-d2 / (2.0 * spec.bandwidth**2))
        else:
            k = _gram(spec.kind, gram, cols.size)
        out[m] = k * norm_constants[m]
    return out
