"""precondlab: neuron-wise preconditioned training of two-layer MLPs.

The package studies how the power p in a covariance-power preconditioner
P = (X X^T)^p (and its diagonal-Hessian counterpart) shapes feature learning:
`spectra` holds the dense spectral linear algebra, `model` the MLP with exact
gradients, `optim` the update rules, `data` the dataset builders, `runners`
the experiment CLI, and `verify` the executable theory checks.
"""

from . import data, model, optim, runners, spectra, verify

__version__ = "0.1.0"

__all__ = ["data", "model", "optim", "runners", "spectra", "verify", "__version__"]
