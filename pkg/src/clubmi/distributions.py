"""Conditional Gaussian models and data sources with known mutual information.

All information quantities are in nats.
"""
import numpy as np

from . import tensor as T
from .batch import Batch
from .errors import ContractError, DimensionError, NumericError, UnsupportedError
from .nn import DenseNet

LOG_2PI = float(np.log(2.0 * np.pi))


def gaussian_log_prob(mu, logvar, y, pairing="diagonal"):
    """Diagonal-Gaussian log-density from per-row means and log-variances.

    ``diagonal`` gives ``log N(y_i | mu_i, .)`` (length n); ``full`` gives the
    n x m matrix with entry ``(i, j) = log N(y_j | mu_i, .)``.
    """
    if mu.shape != logvar.shape or y.ndim != 2 or y.shape[1] != mu.shape[1]:
        raise DimensionError(f"mu {mu.shape}, logvar {logvar.shape}, y {y.shape}")
    if pairing == "full":
        return T.pair_logprob(mu, logvar, y)
    if pairing != "diagonal":
        raise ValueError(f"unknown pairing {pairing!r}")
    if y.shape[0] != mu.shape[0]:
        raise DimensionError(f"diagonal pairing needs equal rows: {mu.shape[0]} vs {y.shape[0]}")
    d = mu.shape[1]
    quad = T.sum(T.mul(T.square(T.sub(y, mu)), T.exp(T.neg(logvar))), axis=1)
    return T.add_scalar(T.scale(T.add(quad, T.sum(logvar, axis=1)), -0.5), -0.5 * d * LOG_2PI)


def gaussian_mean_log_prob(mu, logvar, y):
    """Row means ``(1/m) sum_j log N(y_j | mu_i, .)`` in O((n + m) d).

    Uses ``mean_j (y_j - mu)^2 = (mu - ybar)^2 + var(y)`` per coordinate, so it
    equals the row mean of the ``full`` matrix without forming it.
    """
    if mu.shape != logvar.shape or y.ndim != 2 or y.shape[1] != mu.shape[1]:
        raise DimensionError(f"mu {mu.shape}, logvar {logvar.shape}, y {y.shape}")
    d = mu.shape[1]
    ybar = T.mean(y, axis=0)
    centred = T.add_bias(y, T.neg(ybar))
    yvar = T.mean(T.square(centred), axis=0)
    spread = T.add_bias(T.square(T.add_bias(mu, T.neg(ybar))), yvar)
    quad = T.sum(T.mul(spread, T.exp(T.neg(logvar))), axis=1)
    return T.add_scalar(T.scale(T.add(quad, T.sum(logvar, axis=1)), -0.5), -0.5 * d * LOG_2PI)


class DiagGaussianCond:
    """``q(y|x) = N(mu(x), diag(sigma^2(x)))`` with two ReLU nets.

    The log-variance net output ``t`` is squashed to ``B * tanh(t / B)``.
    """

    def __init__(self, x_dim, y_dim, hidden=15, rng=None, logvar_bound=10.0,
                 mu_net=None, logvar_net=None):
        rng = np.random.default_rng() if rng is None else rng
        self.x_dim, self.y_dim = x_dim, y_dim
        self.logvar_bound = float(logvar_bound)
        self.mu_net = mu_net if mu_net is not None else DenseNet([x_dim, hidden, y_dim], rng)
        self.logvar_net = (
            logvar_net if logvar_net is not None else DenseNet([x_dim, hidden, y_dim], rng)
        )

    @property
    def parameters(self):
        return self.mu_net.parameters + self.logvar_net.parameters

    def mu_logvar(self, x):
        x = T.as_tensor(x)
        b = self.logvar_bound
        raw = self.logvar_net(x)
        return self.mu_net(x), T.scale(T.tanh(T.scale(raw, 1.0 / b)), b)

    def log_prob(self, x, y, pairing="diagonal"):
        mu, logvar = self.mu_logvar(x)
        return gaussian_log_prob(mu, logvar, T.as_tensor(y), pairing)

    def mean_log_prob(self, x, y):
        mu, logvar = self.mu_logvar(x)
        return gaussian_mean_log_prob(mu, logvar, T.as_tensor(y))

    @classmethod
    def frozen_linear(cls, rho, dim, logvar_bound=10.0):
        """Nets hard-wired to ``mu(x) = rho x`` and ``sigma^2 = 1 - rho^2``.

        The mean uses ``rho x = rho relu(x) - rho relu(-x)`` with 2*dim hidden units.
        """
        eye = np.eye(dim)
        mu_net = DenseNet(
            [dim, 2 * dim, dim],
            weights=[(np.vstack([eye, -eye]), np.zeros(2 * dim)),
                     (rho * np.hstack([eye, -eye]), np.zeros(dim))],
        )
        raw = logvar_bound * np.arctanh(np.log1p(-rho * rho) / logvar_bound)
        logvar_net = DenseNet(
            [dim, 1, dim],
            weights=[(np.zeros((1, dim)), np.zeros(1)),
                     (np.zeros((dim, 1)), np.full(dim, raw))],
        )
        return cls(dim, dim, logvar_bound=logvar_bound, mu_net=mu_net, logvar_net=logvar_net)


def true_mi(rho, dim):
    return -0.5 * dim * np.log1p(-rho * rho)


def rho_for_mi(target_mi, dim):
    """Correlation giving ``target_mi`` nats for ``dim`` independent coordinate pairs."""
    if target_mi < 0:
        raise ContractError(f"target MI must be non-negative, got {target_mi}")
    return float(np.sqrt(-np.expm1(-2.0 * target_mi / dim)))


def _well_conditioned_matrix(dim, seed, max_cond=1e3):
    rng = np.random.default_rng(seed)
    while True:
        w = rng.standard_normal((dim, dim))
        if np.linalg.cond(w) < max_cond:
            return w


class CorrelatedGaussianSource:
    """``x ~ N(0, I)``, ``y = rho x + sqrt(1 - rho^2) eps``, optionally ``y <- (W y)^3``.

    The cubic map is a smooth bijection so the MI is the same as the Gaussian pair's.
    """

    def __init__(self, dim=20, rho=0.0, cubic=False, w_seed=0):
        if not -1.0 < rho < 1.0:
            raise ContractError(f"rho must lie in the open interval (-1, 1), got {rho}")
        self.dim = dim
        self.rho = float(rho)
        self.cubic = cubic
        self.w_seed = w_seed
        self.W = _well_conditioned_matrix(dim, w_seed) if cubic else None

    @property
    def true_mi(self):
        return true_mi(self.rho, self.dim)

    def with_rho(self, rho):
        """Same task (including W) at a new correlation."""
        return CorrelatedGaussianSource(self.dim, rho, self.cubic, self.w_seed)

    def sample_xy(self, n, rng):
        if n < 2:
            raise ContractError("batch size must be at least 2")
        x = rng.standard_normal((n, self.dim))
        eps = rng.standard_normal((n, self.dim))
        y = self.rho * x + np.sqrt(1.0 - self.rho**2) * eps
        if self.cubic:
            y = (y @ self.W.T) ** 3
        return x, y

    def sample(self, n, rng):
        return Batch(*self.sample_xy(n, rng))


sample_joint = CorrelatedGaussianSource.sample


def known_cond_log_prob(src, x, y, pairing="diagonal"):
    """Exact ``log p(y|x)`` for the non-cubic source: ``N(rho x, (1 - rho^2) I)``."""
    if src.cubic:
        raise UnsupportedError("the cubic-transformed conditional has no closed form")
    x, y = T.as_tensor(x), T.as_tensor(y)
    logvar = T.Tensor(np.full(x.shape, np.log1p(-src.rho**2)))
    return gaussian_log_prob(T.scale(x, src.rho), logvar, y, pairing)


class KnownConditional:
    """The true conditional of a :class:`CorrelatedGaussianSource`, with the same
    interface as :class:`DiagGaussianCond` so estimators accept either."""

    parameters = []

    def __init__(self, src):
        if src.cubic:
            raise UnsupportedError("the cubic-transformed conditional has no closed form")
        self.src = src

    def mu_logvar(self, x):
        x = T.as_tensor(x)
        return T.scale(x, self.src.rho), T.Tensor(np.full(x.shape, np.log1p(-self.src.rho**2)))

    def log_prob(self, x, y, pairing="diagonal"):
        return known_cond_log_prob(self.src, x, y, pairing)

    def mean_log_prob(self, x, y):
        mu, logvar = self.mu_logvar(x)
        return gaussian_mean_log_prob(mu, logvar, T.as_tensor(y))


class LinearGaussianChannel:
    """``x ~ N(0, I)``, ``y = A x + eps`` with trainable ``A`` and unit noise."""

    def __init__(self, A):
        A = np.asarray(A, dtype=np.float64)
        if A.ndim != 2 or A.shape[0] != A.shape[1]:
            raise DimensionError(f"A must be square, got {A.shape}")
        self.A = T.Tensor(A, requires_grad=True)

    @property
    def dim(self):
        return self.A.shape[0]

    @classmethod
    def with_mi(cls, target_mi, dim, rng):
        """Random direction for ``A`` rescaled so the channel carries ``target_mi`` nats."""
        from scipy.optimize import brentq

        if target_mi < 0:
            raise ContractError("target MI must be non-negative")
        if target_mi == 0:
            return cls(np.zeros((dim, dim)))
        g = rng.standard_normal((dim, dim)) / np.sqrt(dim)
        s2 = np.linalg.svd(g, compute_uv=False) ** 2
        f = lambda c: 0.5 * np.log1p(c * c * s2).sum() - target_mi
        hi = 1.0
        while f(hi) < 0:
            hi *= 2.0
        return cls(brentq(f, 0.0, hi, xtol=1e-14) * g)

    def noise(self, n, rng):
        return rng.standard_normal((n, self.dim)), rng.standard_normal((n, self.dim))

    def sample(self, n, rng, x=None, eps=None):
        """Reparameterized draw: gradients reach ``A`` through the returned ``y``."""
        if x is None or eps is None:
            x, eps = self.noise(n, rng)
        y = T.add(T.matmul(T.Tensor(x), T.transpose(self.A)), T.Tensor(eps))
        return Batch(x, y)


def channel_true_mi(ch):
    """``(1/2) log det(I + A A^T)`` via a Cholesky factor."""
    A = ch.A.data if isinstance(ch, LinearGaussianChannel) else np.asarray(ch, dtype=np.float64)
    if not np.isfinite(A).all():
        raise NumericError("channel matrix has non-finite entries")
    L = np.linalg.cholesky(np.eye(A.shape[0]) + A @ A.T)
    return float(np.log(np.diagonal(L)).sum())
