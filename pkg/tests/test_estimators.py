import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from clubmi import tensor as T
from clubmi.batch import Batch
from clubmi.distributions import CorrelatedGaussianSource, DiagGaussianCond, KnownConditional
from clubmi.errors import ContractError
from clubmi.estimators import (
    ESTIMATORS,
    Critic,
    MineEMA,
    club_known,
    get_estimator,
    infonce,
    l1out,
    loglik_loss,
    mine,
    nwj,
    vclub,
    vclub_sampled,
    vub,
)
from clubmi.nn import DenseNet

from oracles import (
    central_diff,
    club_loop,
    infonce_loop,
    l1out_loop,
    mine_loop,
    nwj_loop,
    pair_matrix,
    rel_err,
    vclub_sampled_loop,
    vub_loop,
)


def make_batch(rng, n, dx=2, dy=2):
    return Batch(rng.normal(size=(n, dx)), rng.normal(size=(n, dy)))


def random_cond(rng, dx=2, dy=2, hidden=6):
    cond = DiagGaussianCond(dx, dy, hidden, rng)
    # non-zero biases so the nets are not trivially centred
    for net in (cond.mu_net, cond.logvar_net):
        for _, b in net.layers:
            b.data = rng.normal(size=b.shape) * 0.3
    return cond


def cond_matrix(cond, batch):
    mu, lv = cond.mu_logvar(batch.x)
    return pair_matrix(mu.data.tolist(), np.exp(lv.data).tolist(), batch.y.data.tolist())


def constant_cond(dx, dy, rng):
    """Conditional whose output ignores x: all first-layer weights are zero."""
    cond = random_cond(rng, dx, dy)
    for net in (cond.mu_net, cond.logvar_net):
        w, _ = net.layers[0]
        w.data = np.zeros_like(w.data)
    return cond


def constant_critic(dx, dy, c):
    net = DenseNet([dx + dy, 1], weights=[(np.zeros((1, dx + dy)), np.array([c]))])
    return Critic(dx, dy, net=net)


class TestScalarLoopEquivalence:
    @pytest.mark.parametrize("n", [2, 3, 4, 5])
    def test_vclub(self, n, rng):
        batch, cond = make_batch(rng, n), random_cond(rng)
        L = cond_matrix(cond, batch)
        assert abs(vclub(batch, cond).value.item() - club_loop(L)) < 1e-10

    @pytest.mark.parametrize("n", [2, 3, 5])
    def test_vclub_moments(self, n, rng):
        batch, cond = make_batch(rng, n), random_cond(rng)
        L = cond_matrix(cond, batch)
        assert abs(vclub(batch, cond, "moments").value.item() - club_loop(L)) < 1e-10

    @pytest.mark.parametrize("n", [2, 4, 5])
    def test_vclub_sampled(self, n, rng):
        batch, cond = make_batch(rng, n), random_cond(rng)
        index = rng.integers(0, n, size=n)
        L = cond_matrix(cond, batch)
        out = vclub_sampled(batch, cond, index=index).value.item()
        assert abs(out - vclub_sampled_loop(L, index)) < 1e-10

    @pytest.mark.parametrize("n", [2, 3, 5])
    def test_vub(self, n, rng):
        batch, cond = make_batch(rng, n), random_cond(rng)
        L = cond_matrix(cond, batch)
        diag = [L[i][i] for i in range(n)]
        assert abs(vub(batch, cond).value.item() - vub_loop(diag, batch.y.data.tolist())) < 1e-10

    @pytest.mark.parametrize("n", [2, 3, 5])
    def test_l1out(self, n, rng):
        batch, cond = make_batch(rng, n), random_cond(rng)
        L = cond_matrix(cond, batch)
        assert abs(l1out(batch, cond).value.item() - l1out_loop(L)) < 1e-10

    def _critic_matrix(self, critic, batch):
        x, y = batch.x.data, batch.y.data
        n = batch.n
        return [[critic.net(np.concatenate([x[i], y[j]])[None, :]).item() for j in range(n)]
                for i in range(n)]

    @pytest.mark.parametrize("fn, loop", [(nwj, nwj_loop), (mine, mine_loop),
                                          (infonce, infonce_loop)])
    @pytest.mark.parametrize("n", [2, 3, 4, 5])
    def test_lower_bounds(self, fn, loop, n, rng):
        batch = make_batch(rng, n)
        critic = Critic(2, 2, 6, rng)
        F = self._critic_matrix(critic, batch)
        assert abs(fn(batch, critic).value.item() - loop(F)) < 1e-10

    @pytest.mark.parametrize("n", [2, 4])
    def test_club_known(self, n, rng):
        src = CorrelatedGaussianSource(2, 0.6)
        batch = src.sample(n, rng)
        var = [[1 - 0.36] * 2] * n
        L = pair_matrix((0.6 * batch.x.data).tolist(), var, batch.y.data.tolist())
        out = club_known(batch, KnownConditional(src)).value.item()
        assert abs(out - club_loop(L)) < 1e-10


class TestSampledUnbiasedness:
    def test_exhaustive_enumeration(self, rng):
        n = 3
        batch, cond = make_batch(rng, n), random_cond(rng)
        values = [vclub_sampled(batch, cond, index=np.array(idx)).value.item()
                  for idx in itertools.product(range(n), repeat=n)]
        assert len(values) == n**n
        assert abs(math.fsum(values) / len(values) - vclub(batch, cond).value.item()) < 1e-12

    def test_monte_carlo(self, rng):
        batch, cond = make_batch(rng, 64), random_cond(rng)
        draws = np.random.default_rng(1)
        vals = np.array([vclub_sampled(batch, cond, draws).value.item() for _ in range(10_000)])
        se = vals.std(ddof=1) / math.sqrt(len(vals))
        assert abs(vals.mean() - vclub(batch, cond).value.item()) < 3 * se

    def test_self_negatives_give_zero(self, rng):
        batch, cond = make_batch(rng, 5), random_cond(rng)
        assert vclub_sampled(batch, cond, index=np.arange(5)).value.item() == 0.0


class TestExchangeability:
    @pytest.mark.parametrize("eid", ["vclub", "club", "vub", "l1out", "nwj", "mine", "infonce"])
    def test_row_permutation(self, eid, rng):
        src = CorrelatedGaussianSource(3, 0.5)
        batch = src.sample(7, rng)
        info = get_estimator(eid)
        if info.model == "known":
            model = KnownConditional(src)
        elif info.model == "cond":
            model = random_cond(rng, 3, 3)
        else:
            model = Critic(3, 3, 5, rng)
        perm = rng.permutation(7)
        shuffled = Batch(batch.x.data[perm], batch.y.data[perm])
        a = info.evaluate(batch, model, None).value.item()
        b = info.evaluate(shuffled, model, None).value.item()
        assert abs(a - b) < 1e-10


class TestIndependenceZeroPoint:
    @settings(max_examples=25, deadline=None)
    @given(st.integers(2, 9), st.integers(0, 2**31))
    def test_constant_conditional(self, n, seed):
        rng = np.random.default_rng(seed)
        cond = constant_cond(3, 2, rng)
        batch = make_batch(rng, n, 3, 2)
        assert abs(vclub(batch, cond).value.item()) < 1e-12
        assert abs(l1out(batch, cond).value.item()) < 1e-12

    def test_club_known_rho_zero(self, rng):
        src = CorrelatedGaussianSource(4, 0.0)
        cond = KnownConditional(src)
        vals = np.array([club_known(src.sample(64, rng), cond).value.item() for _ in range(200)])
        assert abs(vals.mean()) < 3 * vals.std(ddof=1) / math.sqrt(200)


class TestLowerBoundIdentities:
    def test_nwj_constant_critic(self, rng):
        batch = make_batch(rng, 4)
        assert nwj(batch, constant_critic(2, 2, 1.0)).value.item() == pytest.approx(0.0, abs=1e-15)
        c = 2.5
        out = nwj(batch, constant_critic(2, 2, c)).value.item()
        assert out == pytest.approx(c - math.exp(c - 1), abs=1e-12)

    @pytest.mark.parametrize("c", [-3.0, 0.0, 4.2])
    def test_mine_constant_critic(self, c, rng):
        assert abs(mine(make_batch(rng, 5), constant_critic(2, 2, c)).value.item()) < 1e-12

    def test_infonce_zero_critic(self, rng):
        assert infonce(make_batch(rng, 6), constant_critic(2, 2, 0.0)).value.item() == pytest.approx(0.0, abs=1e-14)

    @settings(max_examples=30, deadline=None)
    @given(st.integers(2, 8), st.integers(0, 2**31), st.floats(0.1, 20.0))
    def test_infonce_at_most_log_n(self, n, seed, gain):
        rng = np.random.default_rng(seed)
        critic = Critic(2, 2, 5, rng)
        for w, b in critic.net.layers:
            w.data = w.data * gain
        assert infonce(make_batch(rng, n), critic).value.item() <= math.log(n) + 1e-12

    @settings(max_examples=30, deadline=None)
    @given(st.integers(2, 8), st.integers(0, 2**31), st.floats(-50, 50))
    def test_mine_shift_invariance(self, n, seed, c):
        rng = np.random.default_rng(seed)
        critic = Critic(2, 2, 5, rng)
        batch = make_batch(rng, n)
        base = mine(batch, critic).value.item()
        w, b = critic.net.layers[-1]
        b.data = b.data + c
        assert abs(mine(batch, critic).value.item() - base) < 1e-10

    def test_shuffle_pairing_uses_one_negative_per_row(self, rng):
        batch = make_batch(rng, 5)
        critic = Critic(2, 2, 4, rng)
        a = nwj(batch, critic, "shuffle", np.random.default_rng(3)).value.item()
        perm = np.random.default_rng(3).permutation(5)
        x, y = batch.x.data, batch.y.data
        joint = critic.paired(x, y).data.mean()
        marg = np.exp(critic.paired(x, y[perm]).data - 1).mean()
        assert abs(a - (joint - marg)) < 1e-12

    def test_mine_ema_surrogate(self, rng):
        batch = make_batch(rng, 4)
        critic = Critic(2, 2, 4, rng)
        ema = MineEMA(0.99)
        est = mine(batch, critic, ema=ema)
        assert est.value.item() == mine(batch, critic).value.item()
        # first update initialises the running mean, so the surrogate is joint - 1
        joint = critic.paired(batch.x, batch.y).data.mean()
        assert est.surrogate.item() == pytest.approx(joint - 1.0, abs=1e-12)
        first = ema.value
        assert first == pytest.approx(math.exp(joint - est.value.item()), rel=1e-12)
        est2 = mine(batch, critic, ema=ema)
        assert ema.value == pytest.approx(first, rel=1e-12)
        assert est2.objective is est2.surrogate
        ema.update(2 * first)
        assert ema.value == pytest.approx(0.99 * first + 0.01 * 2 * first, rel=1e-12)


class TestKnownConditional:
    def test_vclub_frozen_equals_club_known(self, rng):
        rho = 0.4258
        src = CorrelatedGaussianSource(5, rho)
        batch = src.sample(16, rng)
        a = vclub(batch, DiagGaussianCond.frozen_linear(rho, 5)).value.item()
        b = club_known(batch, KnownConditional(src)).value.item()
        assert abs(a - b) < 1e-10

    def test_vub_matches_gaussian_kl(self, rng):
        rho, d = 0.4258, 20
        src = CorrelatedGaussianSource(d, rho)
        cond = KnownConditional(src)
        vals = np.array([vub(src.sample(64, rng), cond).value.item() for _ in range(300)])
        # KL(N(rho x, (1-rho^2) I) || N(0, I)) averaged over x ~ N(0, I)
        kl = 0.5 * d * ((1 - rho**2) + rho**2 - 1 - math.log(1 - rho**2))
        assert abs(vals.mean() - kl) < 3 * vals.std(ddof=1) / math.sqrt(len(vals))

    def test_vub_identical_densities(self, rng):
        cond = DiagGaussianCond(3, 3, 4, rng)
        for net in (cond.mu_net, cond.logvar_net):
            for w, b in net.layers:
                w.data[:] = 0.0
                b.data[:] = 0.0
        assert vub(make_batch(rng, 6, 3, 3), cond).value.item() == 0.0

    def test_loglik_entropy_identity(self, rng):
        d = 3
        src = CorrelatedGaussianSource(d, 0.0)
        cond = KnownConditional(src)
        vals = np.array([loglik_loss(src.sample(64, rng), cond).item() for _ in range(400)])
        target = 0.5 * d * (math.log(2 * math.pi) + 1)
        assert abs(vals.mean() - target) < 3 * vals.std(ddof=1) / math.sqrt(len(vals))

    def test_loglik_is_negative_mean_diagonal(self, rng):
        batch, cond = make_batch(rng, 5), random_cond(rng)
        full = cond.log_prob(batch.x, batch.y, "full").data
        assert loglik_loss(batch, cond).item() == pytest.approx(-np.diagonal(full).mean(), abs=1e-13)

    def test_analytic_club_small(self, rng):
        src = CorrelatedGaussianSource(1, 0.5)
        vals = club_known(src.sample(20_000, rng), KnownConditional(src), "moments").value.item()
        assert abs(vals - 1 / 3) < 0.05


def _fd_check(loss_fn, leaves):
    grads = T.grad(loss_fn(), leaves)
    fd = central_diff(lambda: loss_fn().item(), [t.data for t in leaves])
    for g, f in zip(grads, fd):
        if np.abs(f).max() > 1e-8:
            assert rel_err(g, f) < 1e-4
        else:
            assert np.abs(g).max() < 1e-8


class TestGradients:
    @pytest.mark.parametrize("eid", ["vclub", "vclub-s", "vvub", "vl1out"])
    def test_upper_bounds_wrt_params_and_data(self, eid, rng):
        cond = random_cond(rng, 4, 4, 6)
        x = T.Tensor(rng.normal(size=(8, 4)), requires_grad=True)
        y = T.Tensor(rng.normal(size=(8, 4)), requires_grad=True)
        info = get_estimator(eid)
        index = rng.integers(0, 8, size=8)

        def loss():
            b = Batch(x, y)
            if eid == "vclub-s":
                return vclub_sampled(b, cond, index=index).value
            return info.evaluate(b, cond, None).value

        _fd_check(loss, cond.parameters + [x, y])

    def test_vclub_moments_gradient(self, rng):
        cond = random_cond(rng, 4, 4, 6)
        x = T.Tensor(rng.normal(size=(8, 4)), requires_grad=True)
        y = T.Tensor(rng.normal(size=(8, 4)), requires_grad=True)
        _fd_check(lambda: vclub(Batch(x, y), cond, "moments").value, cond.parameters + [x, y])

    @pytest.mark.parametrize("eid", ["nwj", "mine", "infonce"])
    def test_lower_bounds(self, eid, rng):
        critic = Critic(4, 4, 6, rng)
        x = T.Tensor(rng.normal(size=(8, 4)), requires_grad=True)
        y = T.Tensor(rng.normal(size=(8, 4)), requires_grad=True)
        info = get_estimator(eid)
        _fd_check(lambda: info.evaluate(Batch(x, y), critic, None).value,
                  critic.parameters + [x, y])

    def test_loglik(self, rng):
        cond = random_cond(rng, 4, 4, 6)
        batch = make_batch(rng, 8, 4, 4)
        _fd_check(lambda: loglik_loss(batch, cond), cond.parameters)


class TestRegistry:
    def test_ids_and_kinds(self):
        upper = {"club", "vclub", "vclub-s", "vub", "vvub", "l1out", "vl1out"}
        lower = {"nwj", "mine", "infonce"}
        assert set(ESTIMATORS) == upper | lower
        for eid, info in ESTIMATORS.items():
            assert info.kind == ("upper" if eid in upper else "lower")

    def test_unknown_id_lists_valid(self):
        with pytest.raises(ContractError, match="vclub-s"):
            get_estimator("clubbb")

    def test_estimate_kind_matches_registry(self, rng):
        src = CorrelatedGaussianSource(2, 0.3)
        batch = src.sample(4, rng)
        for eid, info in ESTIMATORS.items():
            model = {"known": KnownConditional(src), "cond": random_cond(rng),
                     "critic": Critic(2, 2, 3, rng)}[info.model]
            est = info.evaluate(batch, model, np.random.default_rng(0))
            assert est.kind == info.kind and est.estimator_id == eid

    def test_single_pair_rejected(self, rng):
        cond = random_cond(rng)
        with pytest.raises(ContractError):
            vclub(Batch(np.zeros((1, 2)), np.zeros((1, 2))), cond)
