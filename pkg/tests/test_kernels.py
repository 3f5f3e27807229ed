"""Base kernel construction and test-kernel consistency."""

import numpy as np
import pytest

from datscore.errors import ValidationError
from datscore.kernels import (
    KernelSpec,
    build_kernels,
    build_test_kernels,
    default_specs,
)


def test_identical_rows_equal_kernel_entries(rng):
    x = rng.normal(size=(6, 3))
    x[4] = x[1]
    blocks = {"all": range(3)}
    stack = build_kernels(x, default_specs(blocks), blocks)
    for k in stack.matrices:
        assert k[1, 4] == pytest.approx(k[1, 1], rel=1e-12)
        assert k[4, 4] == pytest.approx(k[1, 1], rel=1e-12)


def test_orthogonal_unit_rows_linear_gives_identity(rng):
    x = np.eye(5)
    blocks = {"all": range(5)}
    stack = build_kernels(x, [KernelSpec("linear", "all", normalize=True)], blocks)
    np.testing.assert_allclose(stack.matrices[0], np.eye(5), atol=1e-12)
    assert stack.norm_constants[0] == pytest.approx(1.0)


def degree2_feature_map(x, p):
    """Explicit monomial expansion of (x.z/p + 1)^2 for 2-feature inputs."""
    a, b = x
    return np.array(
        [
            1.0,
            np.sqrt(2.0 / p) * a,
            np.sqrt(2.0 / p) * b,
            (a * a) / p,
            (b * b) / p,
            np.sqrt(2.0) * a * b / p,
        ]
    )


def test_poly2_matches_explicit_feature_map(rng):
    x = rng.normal(size=(7, 2))
    blocks = {"all": range(2)}
    stack = build_kernels(
        x, [KernelSpec("poly2", "all", normalize=False)], blocks
    )
    phi = np.array([degree2_feature_map(row, 2) for row in x])
    np.testing.assert_allclose(stack.matrices[0], phi @ phi.T, rtol=1e-12)


def test_poly_kernels_psd_random(rng):
    for _ in range(10):
        x = rng.normal(size=(12, 4))
        blocks = {"all": range(4)}
        stack = build_kernels(x, default_specs(blocks), blocks)  # validates PSD
        assert stack.n_kernels == 4


def test_non_finite_inputs_rejected(rng):
    x = rng.normal(size=(4, 2))
    x[2, 1] = np.nan
    blocks = {"all": range(2)}
    with pytest.raises(ValidationError, match="finite"):
        build_kernels(x, default_specs(blocks), blocks)


def test_trace_normalization_to_n(rng):
    x = rng.normal(size=(9, 3)) * 50.0
    blocks = {"all": range(3)}
    stack = build_kernels(x, default_specs(blocks), blocks)
    for k in stack.matrices:
        assert np.trace(k) == pytest.approx(9.0, rel=1e-12)


def test_test_kernels_match_training_rows(rng):
    x = rng.normal(size=(8, 4))
    blocks = {"g": range(2), "m": range(2, 4)}
    specs = default_specs(blocks)
    stack = build_kernels(x, specs, blocks)
    cross = build_test_kernels(x, x, specs, blocks, stack.norm_constants)
    np.testing.assert_allclose(cross, stack.matrices, rtol=1e-12)


def test_gaussian_kernel_behind_config(rng):
    x = rng.normal(size=(10, 3))
    blocks = {"all": range(3)}
    specs = [KernelSpec("gaussian", "all")]
    stack = build_kernels(x, specs, blocks)
    resolved = stack.specs[0]
    assert resolved.bandwidth is not None and resolved.bandwidth > 0
    assert np.diag(stack.matrices[0]).std() < 1e-12  # constant diagonal
    cross = build_test_kernels(x, x, stack.specs, blocks, stack.norm_constants)
    np.testing.assert_allclose(cross[0], stack.matrices[0], atol=1e-12)
    # gaussian is not in the default stack
    assert all(s.kind != "gaussian" for s in default_specs(blocks))


def test_unknown_kind_rejected():
    with pytest.raises(ValidationError):
        KernelSpec("sigmoid", "all")


def test_empty_block_rejected(rng):
    x = rng.normal(size=(4, 2))
    with pytest.raises(ValidationError, match="empty"):
        build_kernels(x, [KernelSpec("linear", "g")], {"g": []})
