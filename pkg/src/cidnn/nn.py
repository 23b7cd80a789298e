"""Minimal feed-forward network engine.

Each layer computes

    affine -> batch norm -> (+ incoming bypass outputs) -> activation -> dropout

Bypass edges ``(src, dst)`` use 0-based layer indices and add the output
of layer ``src`` to the post-batch-norm, pre-activation signal of layer
``dst``; they require equal widths and ``src < dst``.  Weights are stored
``out x in``.  All arithmetic is float64.
"""

import copy
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg.blas import daxpy as _axpy

LEAKY_SLOPE = 0.01
EPS_BN = 1e-5
BN_MOMENTUM = 0.99
ACTIVATIONS = ("leaky_relu", "sigmoid", "identity")


@dataclass(frozen=True)
class LayerSpec:
    in_dim: int
    out_dim: int
    activation: str = "leaky_relu"
    batchnorm: bool = True
    dropout: float = 0.0

    def __post_init__(self):
        if self.in_dim <= 0 or self.out_dim <= 0:
            raise ValueError("layer dimensions must be positive")
        if self.activation not in ACTIVATIONS:
            raise ValueError("unknown activation %r" % self.activation)
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout rate must lie in [0, 1)")


def stack(in_dim, hidden, out_dim, dropout=0.2, batchnorm=True):
    """Leaky-ReLU hidden layers with dropout and a sigmoid output layer."""
    dims = [in_dim] + list(hidden)
    specs = [LayerSpec(a, b, "leaky_relu", batchnorm, dropout)
             for a, b in zip(dims[:-1], dims[1:])]
    specs.append(LayerSpec(dims[-1], out_dim, "sigmoid", batchnorm, 0.0))
    return specs


def all_bypasses(specs):
    """Every forward pair of layers whose outputs have the same width."""
    n = len(specs)
    return tuple((i, j) for i in range(n) for j in range(i + 1, n)
                 if specs[i].out_dim == specs[j].out_dim)


@dataclass
class Mlp:
    specs: list
    weights: list
    biases: list
    bn_gain: list
    bn_bias: list
    running_mean: list
    running_var: list
    bypasses: tuple = ()
    _incoming: list = field(default=None, init=False, repr=False, compare=False)

    def __post_init__(self):
        validate(self.specs, self.bypasses)
        self._incoming = [[s for s, d in self.bypasses if d == i]
                          for i in range(len(self.specs))]

    @property
    def in_dim(self):
        return self.specs[0].in_dim

    @property
    def out_dim(self):
        return self.specs[-1].out_dim

    def parameters(self):
        """Trainable arrays in a fixed order (W, b[, gain, bias] per layer)."""
        out = []
        for i, spec in enumerate(self.specs):
            out += [self.weights[i], self.biases[i]]
            if spec.batchnorm:
                out += [self.bn_gain[i], self.bn_bias[i]]
        return out

    def parameter_names(self):
        names = []
        for i, spec in enumerate(self.specs):
            names += ["W%d" % i, "b%d" % i]
            if spec.batchnorm:
                names += ["gain%d" % i, "beta%d" % i]
        return names

    def num_weights(self):
        return sum(p.size for p in self.parameters())

    def copy(self):
        return copy.deepcopy(self)


def validate(specs, bypasses):
    if not specs:
        raise ValueError("network needs at least one layer")
    for a, b in zip(specs[:-1], specs[1:]):
        if a.out_dim != b.in_dim:
            raise ValueError("dimension mismatch: layer output %d feeds input %d"
                             % (a.out_dim, b.in_dim))
    for s, d in bypasses:
        if not 0 <= s < d < len(specs):
            raise ValueError("bypass (%d, %d) must run forward between existing layers"
                             % (s, d))
        if specs[s].out_dim != specs[d].out_dim:
            raise ValueError("bypass (%d, %d) joins unequal widths %d and %d"
                             % (s, d, specs[s].out_dim, specs[d].out_dim))


def init_mlp(specs, bypasses=(), seed=0):
    """He-normal weights for leaky-ReLU layers, 1/fan-in variance otherwise."""
    specs = list(specs)
    bypasses = tuple(tuple(e) for e in bypasses)
    validate(specs, bypasses)
    rng = np.random.default_rng(seed)
    W, b, g, beta, rm, rv = [], [], [], [], [], []
    for spec in specs:
        scale = 2.0 if spec.activation == "leaky_relu" else 1.0
        W.append(rng.standard_normal((spec.out_dim, spec.in_dim)) * np.sqrt(scale / spec.in_dim))
        b.append(np.zeros(spec.out_dim))
        if spec.batchnorm:
            g.append(np.ones(spec.out_dim))
            beta.append(np.zeros(spec.out_dim))
            rm.append(np.zeros(spec.out_dim))
            rv.append(np.ones(spec.out_dim))
        else:
            g.append(None)
            beta.append(None)
            rm.append(None)
            rv.append(None)
    return Mlp(specs, W, b, g, beta, rm, rv, bypasses)


def _activate(kind, u):
    if kind == "leaky_relu":
        return np.maximum(u, LEAKY_SLOPE * u)
    if kind == "sigmoid":
        # split by sign so exp never overflows
        out = np.empty_like(u)
        pos = u >= 0
        out[pos] = 1.0 / (1.0 + np.exp(-u[pos]))
        e = np.exp(u[~pos])
        out[~pos] = e / (1.0 + e)
        return out
    return u


def _activation_backward(kind, da, u, a):
    """Chain ``da`` through the activation derivative."""
    if kind == "leaky_relu":
        return np.where(u > 0, da, LEAKY_SLOPE * da)
    if kind == "sigmoid":
        return da * a * (1.0 - a)
    return da


def forward(net, x, train=False, seed=None, update_stats=True):
    """Run the network on a ``B x in_dim`` batch.

    In training mode batch statistics normalise each layer, running
    statistics are updated (unless ``update_stats`` is false) and dropout
    masks are drawn from ``numpy.random.default_rng(seed)`` with inverted
    scaling.  Evaluation mode is a pure function of ``net`` and ``x``.

    Returns the ``B x out_dim`` output and a cache for :func:`backward`.
    """
    x = np.asarray(x, dtype=float)
    if x.ndim != 2 or x.shape[1] != net.in_dim:
        raise ValueError("expected batch of shape (B, %d), got %s" % (net.in_dim, x.shape))
    if not np.all(np.isfinite(x)):
        raise ValueError("non-finite network input")
    rng = np.random.default_rng(seed) if train else None
    layers = []
    outs = []
    h = x
    for i, spec in enumerate(net.specs):
        z = h @ net.weights[i].T
        z += net.biases[i]
        rec = {"h": h}
        if spec.batchnorm:
            if train:
                mu = z.mean(axis=0)
                z -= mu
                var = np.einsum("ij,ij->j", z, z) / z.shape[0]
                if update_stats:
                    n = z.shape[0]
                    unbiased = var * n / (n - 1) if n > 1 else var
                    net.running_mean[i] *= BN_MOMENTUM
                    net.running_mean[i] += (1.0 - BN_MOMENTUM) * mu
                    net.running_var[i] *= BN_MOMENTUM
                    net.running_var[i] += (1.0 - BN_MOMENTUM) * unbiased
                    np.maximum(net.running_var[i], EPS_BN, out=net.running_var[i])
            else:
                z -= net.running_mean[i]
                var = net.running_var[i]
            inv = 1.0 / np.sqrt(var + EPS_BN)
            zhat = z
            zhat *= inv
            u = zhat * net.bn_gain[i]
            u += net.bn_bias[i]
            rec.update(zhat=zhat, inv=inv)
        else:
            u = z
        if net._incoming[i] and u is z:
            u = u.copy()
        for src in net._incoming[i]:
            u += outs[src]
        a = _activate(spec.activation, u)
        rec.update(u=u, a=a)
        if train and spec.dropout > 0.0:
            keep = rng.random(a.shape) >= spec.dropout
            rec["keep"] = keep
            a = a * keep
            a *= 1.0 / (1.0 - spec.dropout)
        outs.append(a)
        layers.append(rec)
        h = a
    return h, {"layers": layers, "train": train}


def backward(net, cache, grad_out):
    """Gradients of ``sum(grad_out * output)`` w.r.t. ``net.parameters()``.

    The list returned matches the order of ``net.parameters()``.
    """
    layers = cache["layers"]
    if len(layers) != len(net.specs):
        raise ValueError("cache does not belong to this network")
    grad_out = np.asarray(grad_out, dtype=float)
    if grad_out.shape != layers[-1]["a"].shape:
        raise ValueError("output gradient shape %s does not match output %s"
                         % (grad_out.shape, layers[-1]["a"].shape))
    n_layers = len(net.specs)
    d_outs = [None] * n_layers
    d_outs[-1] = grad_out
    grads = [None] * n_layers
    for i in range(n_layers - 1, -1, -1):
        spec, rec = net.specs[i], layers[i]
        da = d_outs[i]
        if "keep" in rec:
            da = da * rec["keep"]
            da *= 1.0 / (1.0 - spec.dropout)
        du = _activation_backward(spec.activation, da, rec["u"], rec["a"])
        for src in net._incoming[i]:
            d_outs[src] = du if d_outs[src] is None else d_outs[src] + du
        if spec.batchnorm:
            zhat = rec["zhat"]
            d_gain = np.einsum("ij,ij->j", du, zhat)
            d_beta = du.sum(axis=0)
            scale = net.bn_gain[i] * rec["inv"]
            if cache["train"]:
                # batch-statistics term: mean(dzhat) and mean(dzhat * zhat) removed
                m = du.shape[0]
                dz = zhat * (d_gain / m)
                np.subtract(du, dz, out=dz)
                dz -= d_beta / m
                dz *= scale
            else:
                dz = du * scale
            layer_grads = [None, None, d_gain, d_beta]
        else:
            dz = du
            layer_grads = [None, None]
        layer_grads[0] = dz.T @ rec["h"]
        layer_grads[1] = dz.sum(axis=0)
        grads[i] = layer_grads
        if i > 0:
            dh = dz @ net.weights[i]
            d_outs[i - 1] = dh if d_outs[i - 1] is None else d_outs[i - 1] + dh
    return [g for layer in grads for g in layer]


class Adam:
    """Adam with bias correction; updates parameter arrays in place."""

    def __init__(self, params, lr=1e-4, beta1=0.9, beta2=0.999, eps=1e-8):
        for p in params:
            if p.dtype != np.float64 or not p.flags.c_contiguous:
                raise ValueError("parameters must be contiguous float64 arrays")
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.step_count = 0
        self.m = [np.zeros(p.size) for p in params]
        self.v = [np.zeros(p.size) for p in params]

    def step(self, params, grads):
        if len(params) != len(grads):
            raise ValueError("got %d gradients for %d parameters" % (len(grads), len(params)))
        self.step_count += 1
        t = self.step_count
        b1, b2 = self.beta1, self.beta2
        step = self.lr * np.sqrt(1.0 - b2 ** t) / (1.0 - b1 ** t)
        eps = self.eps * np.sqrt(1.0 - b2 ** t)
        for p, g, m, v in zip(params, grads, self.m, self.v):
            if p.shape != g.shape:
                raise ValueError("gradient shape %s does not match parameter %s"
                                 % (g.shape, p.shape))
            g = np.ravel(g)
            # m = b1 m + (1-b1) g; v = b2 v + (1-b2) g^2; p -= step m / (sqrt(v) + eps)
            m *= b1
            _axpy(g, m, a=1.0 - b1)
            tmp = np.multiply(g, g)
            v *= b2
            _axpy(tmp, v, a=1.0 - b2)
            np.sqrt(v, out=tmp)
            tmp += eps
            np.divide(m, tmp, out=tmp)
            _axpy(tmp, p.reshape(-1), a=-step)
