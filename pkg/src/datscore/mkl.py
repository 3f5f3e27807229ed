"""Probabilistic multi-kernel probit classifier trained by variational EM.

Model: y = sign(z) with latent z = (sum_m beta_m K_m) alpha + eps,
eps ~ N(0, 1), ridge-style prior exp(-tau/2 alpha' K_beta alpha), and
kernel weights beta on the probability simplex.

Each iteration performs an exact E-step (the latent z posterior is a
per-coordinate truncated normal), an exact M-step for alpha (a linear
solve), and one projected-gradient ascent step for beta with step halving
until the variational bound does not decrease, so the recorded bound
trace is non-decreasing by construction.  Predictions are probabilities
Phi(k*' alpha) of membership in the +1 class.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass
from typing import Mapping, Optional, Sequence

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin

from .errors import NumericalError, ValidationError
from .kernels import (
    KernelSpec,
    KernelStack,
    build_kernels,
    build_test_kernels,
    default_specs,
)
from .special import mills_ratio, norm_cdf, norm_logcdf, project_to_simplex

_HALF_LOG_2PI = 0.5 * math.log(2.0 * math.pi)
_PROB_EPS = 1e-15


@dataclass
class MklConfig:
    tau: float = 1.0
    max_iters: int = 200
    tol: float = 1e-6

    def __post_init__(self):
        if self.tau <= 0.0:
            raise ValidationError(f"tau must be positive, got {self.tau}")
        if self.max_iters < 1:
            raise ValidationError("max_iters must be at least 1")


@dataclass
class MklModel:
    """Trained dual weights, kernel weights, and everything predict needs."""

    alpha: np.ndarray
    beta: np.ndarray
    tau: float
    specs: tuple[KernelSpec, ...]
    norm_constants: np.ndarray
    blocks: dict[str, tuple[int, ...]]
    training_rows: np.ndarray
    training_feature_ids: tuple[str, ...]
    elbo_trace: list[float]
    converged: bool
    training_fingerprint: str = ""
    imputation_modes: tuple[float, ...] = ()

    def __post_init__(self):
        if not self.training_fingerprint:
            self.training_fingerprint = fingerprint_rows(self.training_rows)

    def to_dict(self) -> dict:
        return {
            "alpha": [float(a) for a in self.alpha],
            "beta": [float(b) for b in self.beta],
            "tau": float(self.tau),
            "specs": [
                {
                    "kind": s.kind,
                    "feature_block": s.feature_block,
                    "normalize": s.normalize,
                    "bandwidth": s.bandwidth,
                }
                for s in self.specs
            ],
            "norm_constants": [float(c) for c in self.norm_constants],
            "blocks": {k: list(v) for k, v in self.blocks.items()},
            "training_rows": [[float(x) for x in row] for row in self.training_rows],
            "training_feature_ids": list(self.training_feature_ids),
            "elbo_trace": [float(v) for v in self.elbo_trace],
            "converged": self.converged,
            "training_fingerprint": self.training_fingerprint,
            "imputation_modes": [float(m) for m in self.imputation_modes],
        }

    @classmethod
    def from_dict(cls, data: dict) -> "MklModel":
        return cls(
            alpha=np.asarray(data["alpha"], dtype=np.float64),
            beta=np.asarray(data["beta"], dtype=np.float64),
            tau=data["tau"],
            specs=tuple(
                KernelSpec(
                    s["kind"], s["feature_block"], s["normalize"], s.get("bandwidth")
                )
                for s in data["specs"]
            ),
            norm_constants=np.asarray(data["norm_constants"], dtype=np.float64),
            blocks={k: tuple(v) for k, v in data["blocks"].items()},
            training_rows=np.asarray(data["training_rows"], dtype=np.float64),
            training_feature_ids=tuple(data["training_feature_ids"]),
            elbo_trace=list(data["elbo_trace"]),
            converged=data["converged"],
            training_fingerprint=data["training_fingerprint"],
            imputation_modes=tuple(data.get("imputation_modes", ())),
        )


def fingerprint_rows(rows: np.ndarray) -> str:
    payload = np.ascontiguousarray(np.asarray(rows, dtype=np.float64))
    return hashlib.sha256(payload.tobytes()).hexdigest()


def _e_step(f: np.ndarray, y: np.ndarray):
    """Posterior moments and entropy of the truncated-normal latents.

    Returns (zbar, var, entropy_sum) for z_i ~ N(f_i, 1) truncated to the
    side selected by y_i.
    """
    u = y * f
    lam = mills_ratio(u)
    zbar = f + y * lam
    # cancellation can push the truncated-normal variance a hair below 0
    var = np.maximum(1.0 - lam * (u + lam), 0.0)
    entropy = (_HALF_LOG_2PI + 0.5) + norm_logcdf(u) - 0.5 * u * lam
    return zbar, var, float(entropy.sum())


def _bound(
    k_beta: np.ndarray,
    alpha: np.ndarray,
    zbar: np.ndarray,
    var_sum: float,
    entropy_sum: float,
    tau: float,
    n: int,
) -> float:
    """Variational bound for fixed q; the quantity the M-steps increase."""
    f = k_beta @ alpha
    fit = float(((zbar - f) ** 2).sum()) + var_sum
    prior = tau * float(alpha @ (k_beta @ alpha))
    return -n * _HALF_LOG_2PI - 0.5 * fit - 0.5 * prior + entropy_sum


def beta_bound_and_grad(
    kernels: np.ndarray,
    alpha: np.ndarray,
    zbar: np.ndarray,
    tau: float,
    beta: np.ndarray,
):
    """Bound terms that depend on beta, and their exact gradient.

    Used by the projected-gradient M-step; the gradient of the bound with
    respect to beta_m is (zbar - f)' K_m alpha - tau/2 alpha' K_m alpha.
    """
    k_alpha = kernels @ alpha  # (M, n)
    f = beta @ k_alpha
    residual = zbar - f
    value = -0.5 * float(residual @ residual) - 0.5 * tau * float(beta @ (k_alpha @ alpha))
    grad = k_alpha @ residual - 0.5 * tau * (k_alpha @ alpha)
    return value, grad


def train(stack: KernelStack, labels, config: Optional[MklConfig] = None) -> dict:
    """Variational EM on one kernel stack; returns the fitted state.

    The returned dict carries alpha, beta, the non-decreasing bound trace,
    and the convergence flag; callers wrap it into an :class:`MklModel`
    together with the feature-space metadata prediction needs.
    """
    config = config or MklConfig()
    y = np.asarray(labels, dtype=np.float64)
    n = stack.n
    if y.shape != (n,):
        raise ValidationError("labels must match the kernel dimension")
    if not np.isin(y, (-1.0, 1.0)).all():
        raise ValidationError("labels must be coded -1 / +1")
    if (y > 0).all() or (y < 0).all():
        raise ValidationError("both classes must be present in training labels")

    kernels = stack.matrices
    m_kernels = stack.n_kernels
    beta = np.full(m_kernels, 1.0 / m_kernels)
    alpha = np.zeros(n)
    identity = np.eye(n)
    step = 1.0
    trace: list[float] = []
    converged = False

    for _ in range(config.max_iters):
        k_beta = np.tensordot(beta, kernels, axes=1)
        f = k_beta @ alpha
        zbar, var, entropy_sum = _e_step(f, y)
        var_sum = float(var.sum())
        elbo = _bound(k_beta, alpha, zbar, var_sum, entropy_sum, config.tau, n)
        trace.append(elbo)
        if len(trace) > 1 and abs(trace[-1] - trace[-2]) < config.tol:
            converged = True
            break

        try:
            alpha = np.linalg.solve(k_beta + config.tau * identity, zbar)
        except np.linalg.LinAlgError as exc:
            raise NumericalError(
                "composite kernel system is singular; increase tau"
            ) from exc

        if m_kernels > 1:
            value, grad = beta_bound_and_grad(kernels, alpha, zbar, config.tau, beta)
            step = min(step * 2.0, 1e6)
            for _ in range(60):
                candidate = project_to_simplex(beta + step * grad)
                cand_value, _ = beta_bound_and_grad(
                    kernels, alpha, zbar, config.tau, candidate
                )
                if cand_value >= value:
                    beta = candidate
                    break
                step *= 0.5

    return {
        "alpha": alpha,
        "beta": beta,
        "elbo_trace": trace,
        "converged": converged,
        "tau": config.tau,
    }


def predict(model: MklModel, test_kernel_rows: np.ndarray) -> np.ndarray:
    """Class-+1 probabilities from precomputed (M, n_test, n_train) kernels."""
    rows = np.asarray(test_kernel_rows, dtype=np.float64)
    if rows.ndim != 3 or rows.shape[0] != len(model.specs):
        raise ValidationError(
            f"expected {len(model.specs)} kernel blocks, got shape {rows.shape}"
        )
    if rows.shape[2] != model.alpha.size:
        raise ValidationError("test kernels do not match the training dimension")
    k_star = np.tensordot(model.beta, rows, axes=1)
    p = norm_cdf(k_star @ model.alpha)
    return np.clip(p, _PROB_EPS, 1.0 - _PROB_EPS)


class MultiKernelProbitClassifier(BaseEstimator, ClassifierMixin):
    """sklearn-style wrapper: fit(X, y) builds the kernel stack internally.

    Parameters
    ----------
    tau : float
        Ridge/precision hyperparameter of the dual-weight prior.
    max_iters, tol : int, float
        EM stopping rule (bound improvement below tol, or the cap).
    normalize : bool
        Trace-normalize each base kernel to trace n.
    """

    def __init__(
        self,
        tau: float = 1.0,
        max_iters: int = 200,
        tol: float = 1e-6,
        normalize: bool = True,
    ):
        self.tau = tau
        self.max_iters = max_iters
        self.tol = tol
        self.normalize = normalize

    def fit(
        self,
        X,
        y,
        blocks: Optional[Mapping[str, Sequence[int]]] = None,
        feature_ids: Optional[Sequence[str]] = None,
        specs: Optional[Sequence[KernelSpec]] = None,
    ):
        X = np.asarray(X, dtype=np.float64)
        y = np.asarray(y)
        classes = np.unique(y)
        if classes.size != 2:
            raise ValidationError("binary classification requires exactly 2 classes")
        self.classes_ = classes
        signed = np.where(y == classes[1], 1.0, -1.0)
        if blocks is None:
            blocks = {"all": tuple(range(X.shape[1]))}
        blocks = {name: tuple(int(c) for c in cols) for name, cols in blocks.items()}
        if specs is None:
            specs = default_specs(blocks, self.normalize)
        if feature_ids is None:
            feature_ids = tuple(f"f{j}" for j in range(X.shape[1]))
        stack = build_kernels(X, specs, blocks)
        state = train(stack, signed, MklConfig(self.tau, self.max_iters, self.tol))
        self.model_ = MklModel(
            alpha=state["alpha"],
            beta=state["beta"],
            tau=state["tau"],
            specs=stack.specs,
            norm_constants=stack.norm_constants,
            blocks=blocks,
            training_rows=X.copy(),
            training_feature_ids=tuple(feature_ids),
            elbo_trace=state["elbo_trace"],
            converged=state["converged"],
        )
        return self

    def predict_proba(self, X) -> np.ndarray:
        p_plus = self._p_plus(X)
        return np.column_stack([1.0 - p_plus, p_plus])

    def predict(self, X) -> np.ndarray:
        return np.where(self._p_plus(X) >= 0.5, self.classes_[1], self.classes_[0])

    def _p_plus(self, X) -> np.ndarray:
        if not hasattr(self, "model_"):
            raise ValidationError("classifier is not fitted")
        model = self.model_
        rows = build_test_kernels(
            np.asarray(X, dtype=np.float64),
            model.training_rows,
            model.specs,
            model.blocks,
            model.norm_constants,
        )
        return predict(model, rows)


def predict_from_features(model: MklModel, X: np.ndarray) -> np.ndarray:
    """Class-+1 probabilities from raw feature rows (kernels built here)."""
    rows = build_test_kernels(
        np.asarray(X, dtype=np.float64),
        model.training_rows,
        model.specs,
        model.blocks,
        model.norm_constants,
    )
    return predict(model, rows)


def model_to_json(model: MklModel) -> str:
    return json.dumps(model.to_dict(), sort_keys=True, indent=2)


def model_from_json(text: str) -> MklModel:
    return MklModel.from_dict(json.loads(text))
