"""Training loops: fitting estimators over an MI schedule and MI minimization."""
import zlib
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np

from . import tensor as T
from .distributions import (
    CorrelatedGaussianSource,
    DiagGaussianCond,
    KnownConditional,
    LinearGaussianChannel,
    channel_true_mi,
    rho_for_mi,
)
from .batch import Batch
from .errors import ContractError, NumericError
from .estimators import LOWER, Critic, MineEMA, get_estimator, loglik_loss, vclub, vclub_sampled
from .nn import Adam


@dataclass
class TrainConfig:
    batch_size: int = 64
    iters_per_level: int = 4000
    learning_rate: float = 5e-3
    hidden_units: int = 15
    seed: int = 0
    approx_steps_per_iter: int = 1
    dim: int = 20
    pairing: str = "allpairs"
    mine_ema: bool = False

    def __post_init__(self):
        for name in ("batch_size", "iters_per_level", "learning_rate", "hidden_units",
                     "approx_steps_per_iter", "dim"):
            if not getattr(self, name) > 0:
                raise ContractError(f"{name} must be positive, got {getattr(self, name)}")
        if self.batch_size < 2:
            raise ContractError("batch_size must be at least 2")
        if self.pairing not in ("allpairs", "shuffle"):
            raise ContractError(f"pairing must be allpairs or shuffle, got {self.pairing!r}")

    def to_dict(self):
        return asdict(self)


MINIMIZERS = ("vclub", "vclub-s", "vl1out", "vvub", "nwj", "mine", "infonce")


@dataclass
class MinimizeConfig:
    train: TrainConfig = field(default_factory=lambda: TrainConfig(dim=4))
    estimator: str = "vclub-s"
    target_mi_start: float = 2.0
    max_iters: int = 2000
    mi_eval_every: int = 10
    # None: sampled branch iff the estimator is vclub-s
    sampling: Optional[bool] = None
    freeze_channel: bool = False

    def __post_init__(self):
        if self.estimator not in MINIMIZERS:
            raise ContractError(
                f"unknown minimization estimator {self.estimator!r}; valid: {', '.join(MINIMIZERS)}"
            )
        if self.max_iters <= 0 or self.mi_eval_every <= 0:
            raise ContractError("max_iters and mi_eval_every must be positive")
        if self.max_iters % self.mi_eval_every:
            raise ContractError("mi_eval_every must divide max_iters")
        if self.target_mi_start < 0:
            raise ContractError("target_mi_start must be non-negative")

    @property
    def use_sampling(self):
        if self.sampling is None:
            return self.estimator == "vclub-s"
        return self.sampling

    def to_dict(self):
        out = asdict(self)
        out["train"] = self.train.to_dict()
        return out


def stream(seed, *keys):
    """Independent generator for a (seed, key...) cell, stable across runs."""
    words = [int(seed)] + [zlib.crc32(str(k).encode()) for k in keys]
    return np.random.default_rng(words)


def make_model(estimator_id, x_dim, y_dim, hidden, rng, source=None):
    info = get_estimator(estimator_id)
    if info.model == "cond":
        return DiagGaussianCond(x_dim, y_dim, hidden, rng)
    if info.model == "critic":
        return Critic(x_dim, y_dim, hidden, rng)
    if source is None:
        raise ContractError(f"{estimator_id} needs the true conditional of a source")
    return KnownConditional(source)


def fit_estimator_step(batch, model, estimator_id, optimizer=None, rng=None, iteration=None,
                       **options):
    """One training update of ``model`` followed by the estimate on the same batch.

    Upper bounds step on the conditional log-likelihood; lower bounds step on
    the bound itself. Models without parameters (the exact conditional) are
    only evaluated.
    """
    info = get_estimator(estimator_id)
    try:
        if optimizer is not None:
            optimizer.zero_grad()
            if info.kind == LOWER:
                objective = info.evaluate(batch, model, rng, **options).objective
                loss = T.neg(objective)
            else:
                loss = loglik_loss(batch, model)
            T.backward(loss)
            optimizer.step()
        with T.no_grad():
            return info.evaluate(batch, model, rng, **{k: v for k, v in options.items()
                                                      if k != "ema"})
    except NumericError as exc:
        raise NumericError(f"{estimator_id}: {exc}", iteration=iteration) from exc


@dataclass
class EstimateTrace:
    estimator_id: str
    task: str
    iters_per_level: int
    levels: list
    iterations: np.ndarray
    true_mi: np.ndarray
    estimates: np.ndarray

    def level_slices(self):
        k = self.iters_per_level
        return [(lvl, slice(i * k, (i + 1) * k)) for i, lvl in enumerate(self.levels)]


class EstimatorRun:
    """A model, its optimizer and RNG streams for one (estimator, task) cell."""

    def __init__(self, estimator_id, cfg, source):
        self.estimator_id = estimator_id
        self.cfg = cfg
        self.info = get_estimator(estimator_id)
        self.model_rng = stream(cfg.seed, estimator_id, "model")
        self.eval_rng = stream(cfg.seed, estimator_id, "eval")
        self.model = make_model(estimator_id, cfg.dim, cfg.dim, cfg.hidden_units,
                                self.model_rng, source)
        params = self.model.parameters
        self.optimizer = Adam(params, lr=cfg.learning_rate) if params else None
        self.options = {}
        if self.info.model == "critic" and estimator_id != "infonce":
            self.options["pairing"] = cfg.pairing
        if estimator_id == "mine" and cfg.mine_ema:
            self.options["ema"] = MineEMA(0.99)

    def set_source(self, source):
        if self.info.model == "known":
            self.model = KnownConditional(source)

    def step(self, batch, iteration=None):
        estimate = None
        for _ in range(self.cfg.approx_steps_per_iter if self.optimizer else 1):
            estimate = fit_estimator_step(batch, self.model, self.estimator_id, self.optimizer,
                                          self.eval_rng, iteration, **self.options)
        return estimate


def run_schedule(estimator_id, levels, cfg, task="gaussian", w_seed=0):
    """Train one estimator continuously while the true MI steps through ``levels``."""
    if not levels:
        raise ContractError("levels must be non-empty")
    cubic = task == "cubic"
    if task not in ("gaussian", "cubic"):
        raise ContractError(f"unknown task {task!r}")
    base = CorrelatedGaussianSource(cfg.dim, rho_for_mi(levels[0], cfg.dim), cubic, w_seed)
    run = EstimatorRun(estimator_id, cfg, base)
    data_rng = stream(cfg.seed, estimator_id, task, "data")
    k = cfg.iters_per_level
    total = k * len(levels)
    true_vals = np.empty(total)
    estimates = np.empty(total)
    it = 0
    for level in levels:
        source = base.with_rho(rho_for_mi(level, cfg.dim))
        run.set_source(source)
        for _ in range(k):
            batch = source.sample(cfg.batch_size, data_rng)
            try:
                estimates[it] = run.step(batch, iteration=it).value.item()
            except NumericError as exc:
                raise NumericError(f"{exc} at MI level {level}", iteration=it) from exc
            true_vals[it] = source.true_mi
            it += 1
    return EstimateTrace(estimator_id, task, k, list(levels), np.arange(total), true_vals,
                         estimates)


def estimate_over_schedule(levels, cfg, estimator_ids, task="gaussian", w_seed=0):
    """Run :func:`run_schedule` for each estimator; returns ``{id: EstimateTrace}``."""
    return {eid: run_schedule(eid, levels, cfg, task, w_seed) for eid in estimator_ids}


@dataclass
class MinimizeTrace:
    iterations: np.ndarray
    estimates: np.ndarray
    mi_iterations: np.ndarray
    true_mi: np.ndarray
    diverged: bool
    events: list = field(default_factory=list)


def _diverged(mi_iters, mi_vals, window=500, jump=1.0):
    for a in range(len(mi_iters)):
        span = (mi_iters > mi_iters[a]) & (mi_iters <= mi_iters[a] + window)
        if span.any() and (mi_vals[span] - mi_vals[a]).max() > jump:
            return True
    return False


def minimize_mi(channel, cfg, record_events=False):
    """Alternate critic fitting and channel updates to drive the channel's MI down.

    Each iteration: sample a reparameterized batch, fit the estimator's model on
    it, evaluate the estimator with the graph into ``channel.A``, and take one
    Adam step on ``A`` to decrease the estimate. The exact MI is recorded every
    ``cfg.mi_eval_every`` iterations (and before the first update).
    """
    tc = cfg.train
    if channel.dim != tc.dim:
        raise ContractError(f"channel dim {channel.dim} does not match config dim {tc.dim}")
    info = get_estimator(cfg.estimator)
    data_rng = stream(tc.seed, cfg.estimator, "minimize-data")
    eval_rng = stream(tc.seed, cfg.estimator, "minimize-eval")
    model = make_model(cfg.estimator, tc.dim, tc.dim, tc.hidden_units,
                       stream(tc.seed, cfg.estimator, "minimize-model"))
    model_opt = Adam(model.parameters, lr=tc.learning_rate)
    channel_opt = Adam([channel.A], lr=tc.learning_rate)
    options = {"pairing": tc.pairing} if cfg.estimator in ("nwj", "mine") else {}
    events = [] if record_events else None
    log = events.append if record_events else (lambda _e: None)

    estimates = np.empty(cfg.max_iters)
    mi_iters, mi_vals = [0], [channel_true_mi(channel)]
    for it in range(cfg.max_iters):
        x, eps = channel.noise(tc.batch_size, data_rng)
        batch = channel.sample(tc.batch_size, data_rng, x, eps)
        log("sample")
        fixed = Batch(batch.x, batch.y.detach())
        for _ in range(tc.approx_steps_per_iter):
            fit_estimator_step(fixed, model, cfg.estimator, model_opt, eval_rng, it, **options)
            log("loglik_step" if info.kind != LOWER else "critic_step")
        try:
            if cfg.estimator in ("vclub", "vclub-s"):
                est = (vclub_sampled(batch, model, eval_rng) if cfg.use_sampling
                       else vclub(batch, model))
            else:
                est = info.evaluate(batch, model, eval_rng, **options)
            log("estimate")
            (g,) = T.grad(est.objective, [channel.A])
        except NumericError as exc:
            raise NumericError(str(exc), iteration=it) from exc
        if cfg.freeze_channel:
            g = np.zeros_like(g)
        channel_opt.step([g])
        log("minimize_step")
        estimates[it] = est.value.item()
        if (it + 1) % cfg.mi_eval_every == 0:
            mi_iters.append(it + 1)
            mi_vals.append(channel_true_mi(channel))
    mi_iters, mi_vals = np.array(mi_iters), np.array(mi_vals)
    return MinimizeTrace(np.arange(cfg.max_iters), estimates, mi_iters, mi_vals,
                         _diverged(mi_iters, mi_vals), events or [])
