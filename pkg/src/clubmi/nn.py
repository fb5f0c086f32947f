"""Dense ReLU networks and the Adam optimizer on top of :mod:`clubmi.tensor`."""
import numpy as np

from . import tensor as T
from .errors import DimensionError, NumericError


def glorot_uniform(fan_in, fan_out, rng):
    a = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-a, a, size=(fan_out, fan_in))


class DenseNet:
    """Affine layers with ReLU between them and no activation on the output.

    ``widths`` lists layer sizes input-first, e.g. ``[20, 15, 20]``. Weights are
    stored ``out x in`` and biases start at zero.
    """

    def __init__(self, widths, rng=None, weights=None):
        if len(widths) < 2:
            raise ValueError("a DenseNet needs at least input and output widths")
        self.widths = list(widths)
        if weights is None:
            rng = np.random.default_rng() if rng is None else rng
            weights = [
                (glorot_uniform(fan_in, fan_out, rng), np.zeros(fan_out))
                for fan_in, fan_out in zip(self.widths[:-1], self.widths[1:])
            ]
        self.layers = []
        for (w, b), fan_in, fan_out in zip(weights, self.widths[:-1], self.widths[1:]):
            w, b = np.asarray(w, dtype=np.float64), np.asarray(b, dtype=np.float64)
            if w.shape != (fan_out, fan_in) or b.shape != (fan_out,):
                raise DimensionError(
                    f"layer expects W {(fan_out, fan_in)}, b {(fan_out,)}; got {w.shape}, {b.shape}"
                )
            self.layers.append((T.Tensor(w, requires_grad=True), T.Tensor(b, requires_grad=True)))

    @property
    def parameters(self):
        return [p for layer in self.layers for p in layer]

    @property
    def in_width(self):
        return self.widths[0]

    def __call__(self, x):
        return self.forward(x)

    def forward(self, x):
        x = T.as_tensor(x)
        if x.ndim != 2 or x.shape[1] != self.in_width:
            raise DimensionError(f"net expects (batch, {self.in_width}) input, got {x.shape}")
        h = x
        last = len(self.layers) - 1
        for k, (w, b) in enumerate(self.layers):
            h = T.add_bias(T.matmul(h, T.transpose(w)), b)
            if k < last:
                h = T.relu(h)
        return h

    def snapshot(self):
        """Copy of the parameters as ``[(W, b), ...]`` numpy pairs."""
        return [(w.data.copy(), b.data.copy()) for w, b in self.layers]


class Adam:
    """Bias-corrected Adam over a fixed list of parameter tensors."""

    def __init__(self, params, lr=5e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = list(params)
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.step_count = 0
        self.m = [np.zeros(p.shape) for p in self.params]
        self.v = [np.zeros(p.shape) for p in self.params]

    def zero_grad(self):
        for p in self.params:
            p.grad = None

    def step(self, grads=None):
        """Apply one update from ``grads`` (defaults to each parameter's ``.grad``)."""
        if grads is None:
            grads = [np.zeros(p.shape) if p.grad is None else p.grad for p in self.params]
        for p, g in zip(self.params, grads):
            if g.shape != p.shape:
                raise DimensionError(f"gradient shape {g.shape} does not match parameter {p.shape}")
            if not np.isfinite(g).all():
                raise NumericError("non-finite gradient passed to Adam")
        self.step_count += 1
        t = self.step_count
        c1 = 1.0 - self.beta1**t
        c2 = 1.0 - self.beta2**t
        for p, g, m, v in zip(self.params, grads, self.m, self.v):
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p.data = p.data - self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)
