"""Small dense networks in plain numpy: forward, analytic backward, Adam, gradient check."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

ACTIVATIONS = ("relu", "tanh", "identity")
# gradients smaller than this are compared absolutely in gradient checks
REL_FLOOR = 1e-6


class StaleCacheError(RuntimeError):
    """Raised when a forward cache is reused after the weights changed."""


def _act(name, z):
    if name == "relu":
        return np.maximum(z, 0.0)
    if name == "tanh":
        return np.tanh(z)
    return z


def _act_grad(name, z, y):
    if name == "relu":
        return (z > 0.0).astype(z.dtype)
    if name == "tanh":
        return 1.0 - y * y
    return np.ones_like(z)


@dataclass
class Layer:
    W: np.ndarray  # (in, out)
    b: np.ndarray  # (out,)
    activation: str = "relu"

    def __post_init__(self):
        self.W = np.asarray(self.W, dtype=np.float64)
        self.b = np.asarray(self.b, dtype=np.float64)
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")
        if self.W.ndim != 2 or self.b.shape != (self.W.shape[1],):
            raise ValueError(f"layer shapes W{self.W.shape} b{self.b.shape} do not match")


@dataclass
class Cache:
    version: int
    xs: list  # input of every layer
    zs: list  # pre-activations
    ys: list  # outputs


class DenseNet:
    """Chain of affine layers with elementwise activations.

    Inputs are row batches ``(n, in_dim)``; a 1-D vector is treated as a
    batch of one and the output is squeezed back.
    """

    def __init__(self, layers):
        self.layers = list(layers)
        if not self.layers:
            raise ValueError("a network needs at least one layer")
        for a, b in zip(self.layers, self.layers[1:]):
            if a.W.shape[1] != b.W.shape[0]:
                raise ValueError("adjacent layer dimensions are incompatible")
        self.version = 0

    @classmethod
    def create(cls, sizes, activations, rng):
        """Uniform fan-in initialisation ``U(-1/sqrt(fan_in), 1/sqrt(fan_in))``."""
        if len(activations) != len(sizes) - 1:
            raise ValueError("need one activation per layer")
        layers = []
        for n_in, n_out, act in zip(sizes[:-1], sizes[1:], activations):
            lim = 1.0 / np.sqrt(n_in)
            layers.append(Layer(rng.uniform(-lim, lim, (n_in, n_out)),
                                rng.uniform(-lim, lim, n_out), act))
        return cls(layers)

    @property
    def in_dim(self) -> int:
        return self.layers[0].W.shape[0]

    @property
    def out_dim(self) -> int:
        return self.layers[-1].W.shape[1]

    @property
    def sizes(self):
        return [self.in_dim] + [l.W.shape[1] for l in self.layers]

    def params(self) -> list:
        """Parameter arrays in a fixed order: W0, b0, W1, b1, ..."""
        out = []
        for l in self.layers:
            out += [l.W, l.b]
        return out

    def touch(self):
        self.version += 1

    def copy(self) -> "DenseNet":
        net = DenseNet([Layer(l.W.copy(), l.b.copy(), l.activation) for l in self.layers])
        return net

    def forward(self, x):
        return forward(self, x)

    def __call__(self, x):
        return forward(self, x)[0]

    def to_dict(self) -> dict:
        return {"layers": [{"activation": l.activation, "shape": list(l.W.shape),
                            "W": l.W.ravel().tolist(), "b": l.b.tolist()} for l in self.layers]}

    @classmethod
    def from_dict(cls, d) -> "DenseNet":
        layers = []
        for ld in d["layers"]:
            W = np.array(ld["W"], dtype=np.float64).reshape(ld["shape"])
            layers.append(Layer(W, np.array(ld["b"], dtype=np.float64), ld["activation"]))
        return cls(layers)


def forward(net: DenseNet, x):
    x = np.asarray(x, dtype=np.float64)
    squeeze = x.ndim == 1
    h = x[None, :] if squeeze else x
    if h.ndim != 2 or h.shape[1] != net.in_dim:
        raise ValueError(f"expected input dim {net.in_dim}, got shape {x.shape}")
    xs, zs, ys = [], [], []
    for l in net.layers:
        xs.append(h)
        z = h @ l.W + l.b
        h = _act(l.activation, z)
        zs.append(z)
        ys.append(h)
    return (h[0] if squeeze else h), Cache(net.version, xs, zs, ys)


def backward(net: DenseNet, cache: Cache, grad_out):
    """Gradients of ``sum(grad_out * y)``: returns (param grads in ``params()`` order, input grad)."""
    if cache.version != net.version or len(cache.zs) != len(net.layers):
        raise StaleCacheError("cache does not belong to the current weights")
    g = np.asarray(grad_out, dtype=np.float64)
    squeeze = g.ndim == 1
    g = g[None, :] if squeeze else g
    grads = [None] * (2 * len(net.layers))
    for i in range(len(net.layers) - 1, -1, -1):
        l = net.layers[i]
        gz = g * _act_grad(l.activation, cache.zs[i], cache.ys[i])
        grads[2 * i] = cache.xs[i].T @ gz
        grads[2 * i + 1] = gz.sum(axis=0)
        g = gz @ l.W.T
    return grads, (g[0] if squeeze else g)


@dataclass
class AdamState:
    m: list
    v: list
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def for_params(cls, params, **kw):
        return cls([np.zeros_like(p) for p in params], [np.zeros_like(p) for p in params], **kw)

    def to_dict(self):
        return {"step": self.step, "beta1": self.beta1, "beta2": self.beta2, "eps": self.eps,
                "m": [a.ravel().tolist() for a in self.m], "v": [a.ravel().tolist() for a in self.v],
                "shapes": [list(a.shape) for a in self.m]}

    @classmethod
    def from_dict(cls, d):
        shape = d["shapes"]
        m = [np.array(a, dtype=np.float64).reshape(s) for a, s in zip(d["m"], shape)]
        v = [np.array(a, dtype=np.float64).reshape(s) for a, s in zip(d["v"], shape)]
        return cls(m, v, d["step"], d["beta1"], d["beta2"], d["eps"])


def adam_update(params, grads, state: AdamState, lr: float):
    """In-place bias-corrected Adam step on the given arrays."""
    if len(params) != len(grads) or len(params) != len(state.m):
        raise ValueError("params, grads and optimizer state must align")
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** state.step
    c2 = 1.0 - b2 ** state.step
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if p.shape != g.shape:
            raise ValueError(f"gradient shape {g.shape} does not match parameter {p.shape}")
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p -= lr * (m / c1) / (np.sqrt(v / c2) + state.eps)


@dataclass
class Optimizer:
    """Adam bound to one or more networks; bumps their cache versions on update."""

    nets: list
    lr: float
    state: AdamState = field(default=None)

    def __post_init__(self):
        if self.state is None:
            self.state = AdamState.for_params(self.params())

    def params(self):
        out = []
        for n in self.nets:
            out += n.params()
        return out

    def step(self, grads):
        adam_update(self.params(), grads, self.state, self.lr)
        for n in self.nets:
            n.touch()


def polyak_update(target: DenseNet, source: DenseNet, tau: float):
    """target <- tau * source + (1 - tau) * target, in place."""
    for pt, ps in zip(target.params(), source.params()):
        if tau == 1.0:
            pt[...] = ps
        else:
            pt *= 1.0 - tau
            pt += tau * ps
    target.touch()


def _relu_pattern(net, x):
    _, cache = forward(net, x)
    return [z > 0 for z, l in zip(cache.zs, net.layers) if l.activation == "relu"]


def _same_pattern(a, b):
    return all(np.array_equal(p, q) for p, q in zip(a, b))


def fd_gradient_check(params, value_fn, grads, fd_step: float = 1e-5, pattern_fn=None,
                      on_change=None):
    """Compare analytic ``grads`` of ``value_fn()`` w.r.t. ``params`` to central differences.

    ``pattern_fn`` returns a hashable-ish signature of the piecewise-linear
    regime (e.g. ReLU masks); entries whose perturbation changes it are skipped.
    ``on_change`` is called after every in-place perturbation.
    """
    if fd_step <= 0:
        raise ValueError("fd_step must be > 0")
    on_change = on_change or (lambda: None)
    base = pattern_fn() if pattern_fn else None
    worst = 0.0
    for p, g in zip(params, grads):
        flat, gflat = p.reshape(-1), np.asarray(g).reshape(-1)
        for i in range(flat.size):
            old = flat[i]
            vals, same = [], True
            for x in (old + fd_step, old - fd_step):
                flat[i] = x
                on_change()
                if pattern_fn is not None:
                    same = same and _same_pattern(base, pattern_fn())
                vals.append(value_fn())
            flat[i] = old
            on_change()
            if not same:
                continue
            num = (vals[0] - vals[1]) / (2.0 * fd_step)
            worst = max(worst, abs(num - gflat[i]) / max(abs(num), abs(gflat[i]), REL_FLOOR))
    return worst


def gradient_check(net: DenseNet, loss, x, fd_step: float = 1e-5):
    """Max relative error between analytic and central-difference parameter gradients.

    ``loss`` maps the network output to ``(value, dvalue/doutput)``. Parameters
    whose perturbation flips a ReLU unit are skipped: the loss has a kink there.
    """
    y, cache = forward(net, x)
    _, gy = loss(y)
    grads, _ = backward(net, cache, gy)
    return fd_gradient_check(net.params(), lambda: loss(forward(net, x)[0])[0], grads, fd_step,
                             pattern_fn=lambda: _relu_pattern(net, x), on_change=net.touch)


def input_gradient_check(net: DenseNet, loss, x, fd_step: float = 1e-5):
    """Max relative error of the input gradient against central differences."""
    x = np.array(x, dtype=np.float64)
    y, cache = forward(net, x)
    _, gy = loss(y)
    _, gx = backward(net, cache, gy)
    worst = 0.0
    flat, gflat = x.reshape(-1), gx.reshape(-1)
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + fd_step
        lp = loss(forward(net, x)[0])[0]
        flat[i] = old - fd_step
        lm = loss(forward(net, x)[0])[0]
        flat[i] = old
        num = (lp - lm) / (2.0 * fd_step)
        worst = max(worst, abs(num - gflat[i]) / max(abs(num), abs(gflat[i]), REL_FLOOR))
    return worst
