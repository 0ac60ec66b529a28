"""Update rules for the two-layer MLP.

Five steppers share one interface: plain GD, covariance-power preconditioned
GD on the first layer (second layer plain GD), AdaHessian with a tunable
exponent on the Hutchinson diagonal, Adam, and a SAM wrapper around GD.  All
are pure up to the explicitly passed OptimState and rng, so runs are
deterministic given (params, data, spec, state, seed).

Weight decay is coupled L2: for the covariance-power and SAM rules it is
added to the (preconditioned) gradient term as wd * theta; for the moment
based rules it is folded into the gradient before the moments.
"""

from __future__ import annotations

from dataclasses import dataclass, field
import warnings

import numpy as np

from .model import MlpParams, backward, forward, grad_flat, hvp
from .spectra import Preconditioner, matrix_power, sym_eig

__all__ = [
    "PreconditionerSpec",
    "OptimState",
    "step",
    "step_gd",
    "step_cov_power",
    "step_adahessian",
    "step_adam",
    "step_sam",
    "ridge_closed_form",
]

KINDS = ("gd", "cov_power", "adahessian", "adam", "sam_gd")


@dataclass(frozen=True)
class PreconditionerSpec:
    """Tagged choice of update rule plus its hyperparameters."""

    kind: str
    lr: float
    weight_decay: float = 0.0
    p: float = 0.0  # covariance / Hessian-diagonal exponent
    beta1: float = 0.9
    beta2: float = 0.999
    eps_num: float = 1e-8
    rho: float = 0.05  # SAM ascent radius
    hutchinson_samples: int = 1
    floor: float = 1e-10  # eigenvalue floor for cov_power

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown optimizer kind {self.kind!r}; expected one of {KINDS}")
        if not self.lr > 0:
            raise ValueError(f"lr must be > 0, got {self.lr}")
        if self.weight_decay < 0:
            raise ValueError(f"weight_decay must be >= 0, got {self.weight_decay}")
        if self.kind in ("adam", "adahessian"):
            if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
                raise ValueError(f"betas must lie in [0, 1), got {self.beta1}, {self.beta2}")
            if not self.eps_num > 0:
                raise ValueError(f"eps_num must be > 0, got {self.eps_num}")
        if self.kind == "sam_gd" and not self.rho > 0:
            raise ValueError(f"rho must be > 0, got {self.rho}")
        if self.kind == "adahessian" and self.hutchinson_samples < 1:
            raise ValueError(f"hutchinson_samples must be >= 1, got {self.hutchinson_samples}")


@dataclass
class OptimState:
    """Per-run mutable accumulators; owned by exactly one training loop."""

    t: int = 0
    m: np.ndarray | None = None  # first moment, flat
    v: np.ndarray | None = None  # second moment, flat
    precond: Preconditioner | None = None  # cached covariance power

    def moments_like(self, theta: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        if self.m is None:
            self.m = np.zeros_like(theta)
            self.v = np.zeros_like(theta)
        return self.m, self.v


def _decayed(arr: np.ndarray, grad: np.ndarray, lr: float, wd: float) -> np.ndarray:
    return arr - lr * (grad + wd * arr)


def step_gd(
    params: MlpParams, x: np.ndarray, y: np.ndarray, spec: PreconditionerSpec, state: OptimState
) -> MlpParams:
    """Full-batch gradient descent with coupled L2 decay on every parameter."""
    cache = forward(params, x)
    g = backward(params, x, y, cache)
    state.t += 1
    return MlpParams(
        w1=_decayed(params.w1, g.dw1, spec.lr, spec.weight_decay),
        w2=_decayed(params.w2, g.dw2, spec.lr, spec.weight_decay),
        b2=_decayed(params.b2, g.db2, spec.lr, spec.weight_decay),
    )


def step_cov_power(
    params: MlpParams, x: np.ndarray, y: np.ndarray, spec: PreconditionerSpec, state: OptimState
) -> MlpParams:
    """First layer preconditioned by a power of the input covariance, second
    layer plain GD.

    P is built once on the first call from the sample covariance X X^T / n
    (the 1/n keeps the per-mode step sizes on the same scale for every p,
    mirroring the 1/n in the loss Hessian) and cached in the state; every
    first-layer neuron shares the same input-space metric.  Weight decay on W1
    acts directly on the weights (outside P), which keeps the hidden-state
    update a function of (Z, G_P) alone.
    """
    if state.precond is None:
        state.precond = matrix_power(x @ x.T / x.shape[1], spec.p, spec.floor)
    if state.precond.matrix.shape[0] != x.shape[0]:
        raise ValueError(
            f"preconditioner is {state.precond.matrix.shape}, data is {x.shape}"
        )
    cache = forward(params, x)
    g = backward(params, x, y, cache)
    state.t += 1
    return MlpParams(
        w1=_decayed(params.w1, state.precond.matrix @ g.dw1, spec.lr, spec.weight_decay),
        w2=_decayed(params.w2, g.dw2, spec.lr, spec.weight_decay),
        b2=_decayed(params.b2, g.db2, spec.lr, spec.weight_decay),
    )


def _rademacher(rng: np.random.Generator, size: int) -> np.ndarray:
    return rng.integers(0, 2, size=size).astype(float) * 2.0 - 1.0


def step_adahessian(
    params: MlpParams,
    x: np.ndarray,
    y: np.ndarray,
    spec: PreconditionerSpec,
    state: OptimState,
    rng: np.random.Generator | int,
) -> MlpParams:
    """AdaHessian step with a tunable power on the Hutchinson diagonal.

    The diagonal estimate D = mean_r r * (H r) over Rademacher probes feeds
    the second moment v of D^2; the update is
    -lr * m_hat * (sqrt(v_hat) + eps)^p, so p = -1 is the standard AdaHessian
    denominator and p = 0 reduces to momentum GD.
    """
    if isinstance(rng, (int, np.integer)):
        rng = np.random.default_rng(rng)
    theta = params.flat()
    g = grad_flat(params, x, y) + spec.weight_decay * theta
    d = np.zeros_like(theta)
    for _ in range(spec.hutchinson_samples):
        r = _rademacher(rng, theta.size)
        d += r * hvp(params, x, y, r)
    d /= spec.hutchinson_samples
    if not np.all(np.isfinite(d)):
        raise FloatingPointError(
            "step_adahessian: non-finite Hessian diagonal estimate "
            f"({int(np.sum(~np.isfinite(d)))} bad entries at step {state.t + 1})"
        )
    m, v = state.moments_like(theta)
    state.t += 1
    m = spec.beta1 * m + (1.0 - spec.beta1) * g
    v = spec.beta2 * v + (1.0 - spec.beta2) * d * d
    state.m, state.v = m, v
    m_hat = m / (1.0 - spec.beta1**state.t)
    v_hat = v / (1.0 - spec.beta2**state.t)
    scale = (np.sqrt(v_hat) + spec.eps_num) ** spec.p
    return params.with_flat(theta - spec.lr * (m_hat * scale))


def step_adam(
    params: MlpParams, x: np.ndarray, y: np.ndarray, spec: PreconditionerSpec, state: OptimState
) -> MlpParams:
    """Standard bias-corrected Adam with L2 folded into the gradient."""
    theta = params.flat()
    g = grad_flat(params, x, y) + spec.weight_decay * theta
    m, v = state.moments_like(theta)
    state.t += 1
    m = spec.beta1 * m + (1.0 - spec.beta1) * g
    v = spec.beta2 * v + (1.0 - spec.beta2) * g * g
    state.m, state.v = m, v
    m_hat = m / (1.0 - spec.beta1**state.t)
    v_hat = v / (1.0 - spec.beta2**state.t)
    return params.with_flat(theta - spec.lr * m_hat / (np.sqrt(v_hat) + spec.eps_num))


def step_sam(
    params: MlpParams, x: np.ndarray, y: np.ndarray, spec: PreconditionerSpec, state: OptimState
) -> MlpParams:
    """SAM two-step update: ascend rho along the normalized gradient, then
    descend from the original point using the gradient at the ascent point.

    Falls back to a plain GD step when the gradient norm is below 1e-12.
    """
    theta = params.flat()
    g = grad_flat(params, x, y)
    gn = float(np.linalg.norm(g))
    state.t += 1
    if gn < 1e-12:
        return params.with_flat(theta - spec.lr * (g + spec.weight_decay * theta))
    ascent = params.with_flat(theta + spec.rho * g / gn)
    g_sharp = grad_flat(ascent, x, y)
    return params.with_flat(theta - spec.lr * (g_sharp + spec.weight_decay * theta))


def step(
    params: MlpParams,
    x: np.ndarray,
    y: np.ndarray,
    spec: PreconditionerSpec,
    state: OptimState,
    rng: np.random.Generator | None = None,
) -> MlpParams:
    """Dispatch one update according to spec.kind."""
    if spec.kind == "gd":
        return step_gd(params, x, y, spec, state)
    if spec.kind == "cov_power":
        return step_cov_power(params, x, y, spec, state)
    if spec.kind == "adahessian":
        if rng is None:
            raise ValueError("adahessian requires an rng")
        return step_adahessian(params, x, y, spec, state, rng)
    if spec.kind == "adam":
        return step_adam(params, x, y, spec, state)
    if spec.kind == "sam_gd":
        return step_sam(params, x, y, spec, state)
    raise ValueError(f"unknown optimizer kind {spec.kind!r}")


def ridge_closed_form(
    h: np.ndarray, y: np.ndarray, lam: float
) -> tuple[np.ndarray, np.ndarray]:
    """Exact ridge solution for the readout layer on fixed activations.

    Minimizes sum_i |W2^T h_i + b2 - y_i|^2 + lam |W2|_F^2 in the centered
    formulation: W2 = (Hc Hc^T + lam I)^-1 Hc Yc^T with row-centered Hc, Yc,
    and b2 = mean(y) - W2^T mean(h).  A singular system at lam = 0 is solved
    through an eigenvalue-floored inverse and flagged with a warning.
    """
    h = np.asarray(h, dtype=float)
    y = np.asarray(y, dtype=float)
    if h.ndim != 2 or y.ndim != 2 or h.shape[1] != y.shape[1] or h.shape[1] < 1:
        raise ValueError(f"bad shapes: activations {h.shape}, targets {y.shape}")
    if lam < 0:
        raise ValueError(f"lam must be >= 0, got {lam}")
    h_mean = h.mean(axis=1)
    y_mean = y.mean(axis=1)
    hc = h - h_mean[:, None]
    yc = y - y_mean[:, None]
    a = hc @ hc.T + lam * np.eye(h.shape[0])
    rhs = hc @ yc.T
    try:
        if lam == 0.0:
            eig = sym_eig(a, sym_tol=1e-8)
            lam_max = eig.eigenvalues.max(initial=0.0)
            if lam_max <= 0.0 or eig.eigenvalues.min() < 1e-12 * lam_max:
                raise np.linalg.LinAlgError("singular normal equations")
        w2 = np.linalg.solve(a, rhs)
    except np.linalg.LinAlgError:
        warnings.warn(
            "ridge_closed_form: singular system at lam = 0, "
            "falling back to an eigen-floored pseudo-inverse",
            RuntimeWarning,
            stacklevel=2,
        )
        eig = sym_eig(a, sym_tol=1e-8)
        lam_max = eig.eigenvalues.max(initial=0.0)
        keep = eig.eigenvalues >= 1e-12 * lam_max
        inv = np.where(keep, 1.0 / np.where(keep, eig.eigenvalues, 1.0), 0.0)
        w2 = (eig.eigenvectors * inv) @ eig.eigenvectors.T @ rhs
    b2 = y_mean - w2.T @ h_mean
    return w2, b2
