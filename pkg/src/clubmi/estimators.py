"""Sample-based mutual-information bounds.

Each estimator is a pure function of a :class:`~clubmi.batch.Batch` and model
parameters and returns an :class:`Estimate` whose ``value`` is a differentiable
scalar tensor in nats. Upper bounds take a conditional model exposing
``log_prob(x, y, pairing)`` (either a learned
:class:`~clubmi.distributions.DiagGaussianCond` or the exact
:class:`~clubmi.distributions.KnownConditional`); lower bounds take a
:class:`Critic`.
"""
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from . import tensor as T
from .batch import Batch
from .distributions import LOG_2PI, gaussian_log_prob
from .errors import ContractError
from .nn import DenseNet

UPPER, LOWER = "upper", "lower"


@dataclass
class Estimate:
    value: T.Tensor
    kind: str
    estimator_id: str
    # Differentiable stand-in used for gradients when it differs from ``value``.
    surrogate: Optional[T.Tensor] = None

    def __float__(self):
        return self.value.item()

    @property
    def objective(self):
        return self.value if self.surrogate is None else self.surrogate


class Critic:
    """Scalar score ``f(x, y)`` from a ReLU net on ``concat(x, y)``."""

    def __init__(self, x_dim, y_dim, hidden=15, rng=None, net=None):
        self.x_dim, self.y_dim = x_dim, y_dim
        self.net = net if net is not None else DenseNet([x_dim + y_dim, hidden, 1], rng)

    @property
    def parameters(self):
        return self.net.parameters

    def paired(self, x, y):
        """``f(x_i, y_i)`` for each row."""
        x, y = T.as_tensor(x), T.as_tensor(y)
        return T.reshape(self.net(T.concat_cols(x, y)), (x.shape[0],))

    def scores(self, x, y):
        """Matrix ``F[i, j] = f(x_i, y_j)`` over all pairs."""
        x, y = T.as_tensor(x), T.as_tensor(y)
        n, m = x.shape[0], y.shape[0]
        rows = np.repeat(np.arange(n), m)
        cols = np.tile(np.arange(m), n)
        inp = T.concat_cols(T.take_rows(x, rows), T.take_rows(y, cols))
        return T.reshape(self.net(inp), (n, m))


def _require_pairs(batch):
    if batch.n < 2:
        raise ContractError("estimators need at least two pairs")


# --- upper bounds ------------------------------------------------------------

def _club(batch, cond, negatives, estimator_id):
    _require_pairs(batch)
    if negatives == "pairwise":
        full = cond.log_prob(batch.x, batch.y, "full")
        value = T.sub(T.mean(T.diagonal(full)), T.mean(full))
    elif negatives == "moments":
        pos = cond.log_prob(batch.x, batch.y, "diagonal")
        value = T.mean(T.sub(pos, cond.mean_log_prob(batch.x, batch.y)))
    else:
        raise ValueError(f"unknown negatives mode {negatives!r}")
    return Estimate(value, UPPER, estimator_id)


def club_known(batch, cond, negatives="pairwise"):
    """Contrastive log-ratio bound with the true conditional.

    Mean over all ``N^2`` pairs of ``log p(y_i|x_i) - log p(y_j|x_i)``.
    ``negatives="moments"`` evaluates the negative term through the first two
    sample moments of ``y`` (exact for Gaussian conditionals, O(N)).
    """
    return _club(batch, cond, negatives, "club")


def vclub(batch, cond, negatives="pairwise"):
    """:func:`club_known` with a learned conditional ``q(y|x)``."""
    return _club(batch, cond, negatives, "vclub")


def vclub_sampled(batch, cond, rng=None, index=None):
    """One uniformly drawn negative per anchor; ``k'_i = i`` is allowed.

    Pass ``index`` to fix the negatives instead of drawing them from ``rng``.
    """
    _require_pairs(batch)
    n = batch.n
    if index is None:
        rng = np.random.default_rng() if rng is None else rng
        index = rng.integers(0, n, size=n)
    mu, logvar = cond.mu_logvar(batch.x)
    pos = gaussian_log_prob(mu, logvar, batch.y, "diagonal")
    neg = gaussian_log_prob(mu, logvar, T.take_rows(batch.y, index), "diagonal")
    return Estimate(T.mean(T.sub(pos, neg)), UPPER, "vclub-s")


def _standard_normal_log_prob(y):
    d = y.shape[1]
    return T.add_scalar(T.scale(T.sum(T.square(y), axis=1), -0.5), -0.5 * d * LOG_2PI)


def vub(batch, cond, estimator_id="vub"):
    """Variational upper bound against a fixed standard-normal marginal."""
    _require_pairs(batch)
    pos = cond.log_prob(batch.x, batch.y, "diagonal")
    return Estimate(T.mean(T.sub(pos, _standard_normal_log_prob(batch.y))), UPPER, estimator_id)


def l1out(batch, cond, estimator_id="l1out"):
    """Leave-one-out bound; the mixture over ``j != i`` is formed in log space."""
    _require_pairs(batch)
    n = batch.n
    full = cond.log_prob(batch.x, batch.y, "full")
    off_diag = ~np.eye(n, dtype=bool)
    # column i holds log q(y_i | x_j) over j
    loo = T.add_scalar(T.logsumexp(full, axis=0, mask=off_diag), -np.log(n - 1))
    return Estimate(T.mean(T.sub(T.diagonal(full), loo)), UPPER, estimator_id)


# --- lower bounds ------------------------------------------------------------

def _joint_and_marginal(batch, critic, pairing, rng):
    """Critic values on positive pairs and on the product-of-marginals sample.

    ``allpairs`` uses all N^2 pairs (diagonal included) for the marginal term and
    returns it as an n x n matrix; ``shuffle`` pairs each x_i with one y from a
    random permutation and returns a vector.
    """
    if pairing == "allpairs":
        scores = critic.scores(batch.x, batch.y)
        return T.diagonal(scores), scores
    if pairing == "shuffle":
        rng = np.random.default_rng() if rng is None else rng
        perm = rng.permutation(batch.n)
        return critic.paired(batch.x, batch.y), critic.paired(batch.x, T.take_rows(batch.y, perm))
    raise ValueError(f"unknown pairing {pairing!r}")


def _log_mean_exp(a):
    return T.add_scalar(T.logsumexp(a), -np.log(a.size))


def nwj(batch, critic, pairing="allpairs", rng=None):
    """``E_joint[f] - E_marg[exp(f - 1)]``; the exponential mean is max-shifted."""
    _require_pairs(batch)
    joint, marg = _joint_and_marginal(batch, critic, pairing, rng)
    marg_term = T.exp(T.add_scalar(_log_mean_exp(marg), -1.0))
    return Estimate(T.sub(T.mean(joint), marg_term), LOWER, "nwj")


class MineEMA:
    """Running mean of ``E_marg[exp(f)]`` for the bias-corrected MINE gradient."""

    def __init__(self, decay=0.99):
        self.decay = decay
        self.value = None

    def update(self, batch_mean):
        if self.value is None:
            self.value = batch_mean
        else:
            self.value = self.decay * self.value + (1.0 - self.decay) * batch_mean
        return self.value


def mine(batch, critic, pairing="allpairs", rng=None, ema=None):
    """Donsker-Varadhan dual: ``E_joint[f] - log E_marg[exp(f)]``.

    With ``ema`` the returned ``surrogate`` replaces the log term's gradient by
    ``grad E_marg[exp f] / EMA``; the reported ``value`` is unchanged.
    """
    _require_pairs(batch)
    joint, marg = _joint_and_marginal(batch, critic, pairing, rng)
    log_term = _log_mean_exp(marg)
    joint_mean = T.mean(joint)
    value = T.sub(joint_mean, log_term)
    surrogate = None
    if ema is not None:
        marg_mean = T.exp(log_term)
        running = ema.update(marg_mean.item())
        surrogate = T.sub(joint_mean, T.scale(marg_mean, 1.0 / running))
    return Estimate(value, LOWER, "mine", surrogate)


def infonce(batch, critic):
    """``mean_i [f(x_i, y_i) - logsumexp_j f(x_i, y_j)] + log N``; never exceeds ``log N``."""
    _require_pairs(batch)
    scores = critic.scores(batch.x, batch.y)
    per_anchor = T.sub(T.diagonal(scores), T.logsumexp(scores, axis=1))
    return Estimate(T.add_scalar(T.mean(per_anchor), np.log(batch.n)), LOWER, "infonce")


def loglik_loss(batch, cond):
    """Negative mean conditional log-likelihood on the positive pairs."""
    return T.neg(T.mean(cond.log_prob(batch.x, batch.y, "diagonal")))


# --- registry ----------------------------------------------------------------

@dataclass(frozen=True)
class EstimatorInfo:
    estimator_id: str
    kind: str
    model: str  # "cond", "known" or "critic"
    evaluate: Callable


ESTIMATORS = {
    "club": EstimatorInfo("club", UPPER, "known", lambda b, m, rng, **kw: club_known(b, m)),
    "vclub": EstimatorInfo("vclub", UPPER, "cond", lambda b, m, rng, **kw: vclub(b, m)),
    "vclub-s": EstimatorInfo(
        "vclub-s", UPPER, "cond", lambda b, m, rng, **kw: vclub_sampled(b, m, rng)
    ),
    "vub": EstimatorInfo("vub", UPPER, "known", lambda b, m, rng, **kw: vub(b, m, "vub")),
    "vvub": EstimatorInfo("vvub", UPPER, "cond", lambda b, m, rng, **kw: vub(b, m, "vvub")),
    "l1out": EstimatorInfo("l1out", UPPER, "known", lambda b, m, rng, **kw: l1out(b, m, "l1out")),
    "vl1out": EstimatorInfo(
        "vl1out", UPPER, "cond", lambda b, m, rng, **kw: l1out(b, m, "vl1out")
    ),
    "nwj": EstimatorInfo(
        "nwj", LOWER, "critic",
        lambda b, m, rng, pairing="allpairs", **kw: nwj(b, m, pairing, rng),
    ),
    "mine": EstimatorInfo(
        "mine", LOWER, "critic",
        lambda b, m, rng, pairing="allpairs", ema=None, **kw: mine(b, m, pairing, rng, ema),
    ),
    "infonce": EstimatorInfo("infonce", LOWER, "critic", lambda b, m, rng, **kw: infonce(b, m)),
}


def get_estimator(estimator_id):
    try:
        return ESTIMATORS[estimator_id]
    except KeyError:
        raise ContractError(
            f"unknown estimator {estimator_id!r}; valid: {', '.join(ESTIMATORS)}"
        ) from None


__all__ = [
    "Batch", "Critic", "Estimate", "MineEMA", "ESTIMATORS", "get_estimator",
    "club_known", "vclub", "vclub_sampled", "vub", "l1out", "nwj", "mine", "infonce",
    "loglik_loss",
]
