"""Two-layer ReLU MLP with closed-form gradients.

The network is y = W2^T relu(W1^T x) + b2.  The first layer carries no bias
so that the pre-activations Z = W1^T X are a linear image of the inputs; the
loss is mean squared error without a 1/2 factor.  Gradients are exact, the
Hessian-vector product is a central finite difference of the exact gradient,
and the per-neuron Hessian block is the weighted input covariance it reduces
to for this architecture.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .spectra import Preconditioner, sym_eig

__all__ = [
    "MlpParams",
    "ForwardCache",
    "Grads",
    "init_p_isotropic",
    "init_params",
    "forward",
    "mse_loss",
    "backward",
    "grad_flat",
    "hvp",
    "per_neuron_hessian",
]


@dataclass(frozen=True)
class MlpParams:
    """Trainable state: first layer (d_x, d_h), readout (d_h, d_y), bias (d_y,)."""

    w1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray

    def __post_init__(self):
        if self.w1.ndim != 2 or self.w2.ndim != 2 or self.b2.ndim != 1:
            raise ValueError("MlpParams: w1 and w2 must be matrices, b2 a vector")
        if self.w1.shape[1] != self.w2.shape[0] or self.w2.shape[1] != self.b2.shape[0]:
            raise ValueError(
                f"MlpParams: inconsistent shapes {self.w1.shape}, "
                f"{self.w2.shape}, {self.b2.shape}"
            )

    @property
    def shapes(self) -> tuple[tuple[int, int], tuple[int, int], tuple[int]]:
        return self.w1.shape, self.w2.shape, self.b2.shape

    def flat(self) -> np.ndarray:
        return np.concatenate([self.w1.ravel(), self.w2.ravel(), self.b2])

    def with_flat(self, theta: np.ndarray) -> "MlpParams":
        n1 = self.w1.size
        n2 = self.w2.size
        if theta.shape != (n1 + n2 + self.b2.size,):
            raise ValueError(f"flat vector has wrong length {theta.shape}")
        return MlpParams(
            w1=theta[:n1].reshape(self.w1.shape),
            w2=theta[n1 : n1 + n2].reshape(self.w2.shape),
            b2=theta[n1 + n2 :].copy(),
        )


@dataclass(frozen=True)
class ForwardCache:
    """Pre-activations, hidden activations and predictions for a batch."""

    z: np.ndarray  # (d_h, n)
    h: np.ndarray  # (d_h, n)
    yhat: np.ndarray  # (d_y, n)


@dataclass(frozen=True)
class Grads:
    dw1: np.ndarray
    dw2: np.ndarray
    db2: np.ndarray
    dz: np.ndarray

    def flat(self) -> np.ndarray:
        return np.concatenate([self.dw1.ravel(), self.dw2.ravel(), self.db2])


def init_p_isotropic(
    precond: Preconditioner | np.ndarray,
    sigma: float,
    d_h: int,
    rng: np.random.Generator,
) -> np.ndarray:
    """Draw a first-layer matrix with i.i.d. columns ~ N(0, sigma^2 P).

    Realized through the factorization P = S^T S with S = diag(sqrt(lam)) V^T,
    drawing u ~ N(0, sigma^2 I) and mapping each column to S^T u.  Directions
    in the null space of P get exactly zero weight.  Diagonal P (including the
    identity) takes an exact fast path so the draw consumes the same random
    stream as a plain isotropic Gaussian scaled per coordinate.
    """
    if sigma <= 0:
        raise ValueError(f"sigma must be > 0, got {sigma}")
    mat = precond.matrix if isinstance(precond, Preconditioner) else np.asarray(precond, float)
    d_x = mat.shape[0]
    u = rng.standard_normal((d_x, d_h)) * sigma
    off_diag = mat - np.diag(np.diag(mat))
    if not np.any(off_diag):
        scale = np.sqrt(np.maximum(np.diag(mat), 0.0))
        return scale[:, None] * u
    eig = sym_eig(mat)
    s = np.sqrt(np.maximum(eig.eigenvalues, 0.0))[:, None] * eig.eigenvectors.T
    return s.T @ u


def init_params(
    d_x: int,
    d_h: int,
    d_y: int,
    rng: np.random.Generator,
    w1_precond: Preconditioner | np.ndarray | None = None,
    sigma: float = 0.1,
) -> MlpParams:
    """Fresh parameters: P-isotropic first layer (identity P if omitted),
    readout entries ~ N(0, 1/d_h), zero bias.

    W1 is drawn before W2 so runs sharing a seed share both draws regardless
    of the preconditioner choice.
    """
    if w1_precond is None:
        w1_precond = np.eye(d_x)
    w1 = init_p_isotropic(w1_precond, sigma, d_h, rng)
    w2 = rng.standard_normal((d_h, d_y)) / np.sqrt(d_h)
    return MlpParams(w1=w1, w2=w2, b2=np.zeros(d_y))


def forward(params: MlpParams, x: np.ndarray) -> ForwardCache:
    """Run the network on a column batch x of shape (d_x, n)."""
    x = np.asarray(x, dtype=float)
    if x.ndim != 2 or x.shape[0] != params.w1.shape[0]:
        raise ValueError(
            f"input has shape {x.shape}, expected ({params.w1.shape[0]}, n)"
        )
    z = params.w1.T @ x
    h = np.maximum(z, 0.0)
    yhat = params.w2.T @ h + params.b2[:, None]
    return ForwardCache(z=z, h=h, yhat=yhat)


def mse_loss(yhat: np.ndarray, y: np.ndarray) -> float:
    """Mean over samples of the squared error norm (no 1/2 factor)."""
    if yhat.shape != y.shape:
        raise ValueError(f"shape mismatch: {yhat.shape} vs {y.shape}")
    diff = yhat - y
    return float(np.sum(diff * diff) / yhat.shape[1])


def backward(params: MlpParams, x: np.ndarray, y: np.ndarray, cache: ForwardCache) -> Grads:
    """Exact gradients of mse_loss(forward(params, x).yhat, y).

    The ReLU subgradient at exactly zero is taken as zero.
    """
    if cache.yhat.shape != y.shape or cache.z.shape[1] != x.shape[1]:
        raise ValueError("cache does not match the given batch")
    n = x.shape[1]
    resid = 2.0 * (cache.yhat - y) / n  # (d_y, n)
    dz = (params.w2 @ resid) * (cache.z > 0)  # (d_h, n)
    dw1 = x @ dz.T
    dw2 = cache.h @ resid.T
    db2 = resid.sum(axis=1)
    return Grads(dw1=dw1, dw2=dw2, db2=db2, dz=dz)


def grad_flat(params: MlpParams, x: np.ndarray, y: np.ndarray) -> np.ndarray:
    cache = forward(params, x)
    return backward(params, x, y, cache).flat()


def hvp(params: MlpParams, x: np.ndarray, y: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Hessian-vector product via central differences of the exact gradient.

    The step is h = 1e-4 (1 + |theta|) / (1 + |v|), which keeps the relative
    parameter perturbation scale-free.  Linear in v up to O(h^2) curvature
    terms.
    """
    theta = params.flat()
    v = np.asarray(v, dtype=float)
    if v.shape != theta.shape:
        raise ValueError(f"v has shape {v.shape}, expected {theta.shape}")
    vn = float(np.linalg.norm(v))
    if vn == 0.0:
        return np.zeros_like(theta)
    h = 1e-4 * (1.0 + float(np.linalg.norm(theta))) / (1.0 + vn)
    g_plus = grad_flat(params.with_flat(theta + h * v), x, y)
    g_minus = grad_flat(params.with_flat(theta - h * v), x, y)
    return (g_plus - g_minus) / (2.0 * h)


def per_neuron_hessian(
    params: MlpParams,
    x: np.ndarray,
    y: np.ndarray,
    j: int,
    margin: float = 1e-6,
) -> np.ndarray:
    """Hessian block of the loss w.r.t. the j-th first-layer weight column.

    For MSE with a ReLU hidden layer this is the weighted input covariance
    sum_i b_ij x_i x_i^T with b_ij = (2/n) 1[z_ij > 0] |w2_j|^2, valid away
    from the ReLU kink.  Samples with |z_ij| < margin trigger a warning since
    the second derivative is undefined there.
    """
    d_h = params.w1.shape[1]
    if not 0 <= j < d_h:
        raise ValueError(f"neuron index {j} out of range [0, {d_h})")
    x = np.asarray(x, dtype=float)
    n = x.shape[1]
    z_j = params.w1[:, j] @ x
    near_kink = np.abs(z_j) < margin
    if np.any(near_kink):
        warnings.warn(
            f"per_neuron_hessian: {int(near_kink.sum())} sample(s) within "
            f"{margin:g} of the ReLU kink for neuron {j}; block is ill-defined there",
            RuntimeWarning,
            stacklevel=2,
        )
    w2_row_sq = float(params.w2[j] @ params.w2[j])
    b = (2.0 / n) * (z_j > 0) * w2_row_sq  # (n,)
    return (x * b) @ x.T
