"""Numpy reference for the pairwise diagonal-Gaussian log-density kernel.

Used when the compiled extension is unavailable, and as its oracle in tests.
"""
import numpy as np

LOG_2PI = float(np.log(2.0 * np.pi))


def pair_logprob(mu, logvar, y):
    """``out[i, j] = log N(y[j] | mu[i], diag(exp(logvar[i])))``."""
    prec = np.exp(-logvar)
    diff = y[None, :, :] - mu[:, None, :]
    quad = np.einsum("ijd,id->ij", diff * diff, prec)
    norm = -0.5 * (mu.shape[1] * LOG_2PI + logvar.sum(axis=1))
    return norm[:, None] - 0.5 * quad


def pair_logprob_backward(grad, mu, logvar, y):
    """Vector-Jacobian product of :func:`pair_logprob` for upstream ``grad`` (n x m)."""
    prec = np.exp(-logvar)
    diff = y[None, :, :] - mu[:, None, :]
    weighted = grad[:, :, None] * diff * prec[:, None, :]
    d_mu = weighted.sum(axis=1)
    d_y = -weighted.sum(axis=0)
    d_logvar = -0.5 * grad.sum(axis=1)[:, None] + 0.5 * prec * np.einsum(
        "ij,ijd->id", grad, diff * diff
    )
    return d_mu, d_logvar, d_y
