"""Network assembly, initialisation, batch normalisation and born-dead checks."""

from dataclasses import asdict, dataclass, field
from typing import List, NamedTuple, Optional

import numpy as np

from . import tensor as T
from .exceptions import DimensionError, SpecError, UsageError
from .farkas import DEFAULT_EPSILON, FarkasDenseLayer, FarkasResidualBlock
from .rng import make_rng
from .tensor import Tensor

LAYER_KINDS = ("dense", "farkas_dense", "farkas_residual", "batchnorm", "activation")
INIT_KINDS = ("default_uniform", "symmetric_normal", "asymmetric_positive_bias",
              "zero_last_in_block")


@dataclass
class LayerSpec:
    """One entry of a :class:`NetworkSpec`.

    Only the fields relevant to ``kind`` are read: ``dense`` uses
    ``n_in/n_out/bias``; ``farkas_dense`` adds ``agg/cutoff/epsilon/activation``;
    ``farkas_residual`` uses ``n_out`` (block output ``m``, input ``m - 1``)
    and ``hidden``; ``batchnorm`` uses ``n_out``; ``activation`` uses
    ``activation/alpha``.
    """

    kind: str
    n_in: int = 0
    n_out: int = 0
    hidden: int = 0
    bias: bool = True
    agg: str = "sum"
    cutoff: float = 0.0
    epsilon: float = DEFAULT_EPSILON
    activation: str = "relu"
    alpha: Optional[float] = None
    shortcut: bool = True

    def in_width(self):
        if self.kind == "farkas_residual":
            return self.n_out - 1
        return self.n_in

    def out_width(self):
        return self.n_out


def dense(n_in, n_out, bias=True):
    return LayerSpec("dense", n_in=n_in, n_out=n_out, bias=bias)


def farkas_dense(n_in, n_out, agg="sum", cutoff=0.0, epsilon=DEFAULT_EPSILON,
                 activation="relu", alpha=None):
    return LayerSpec("farkas_dense", n_in=n_in, n_out=n_out, agg=agg, cutoff=cutoff,
                     epsilon=epsilon, activation=activation, alpha=alpha)


def farkas_residual(m, hidden, agg="sum", cutoff=0.0, epsilon=DEFAULT_EPSILON, shortcut=True):
    return LayerSpec("farkas_residual", n_in=m - 1, n_out=m, hidden=hidden, agg=agg,
                     cutoff=cutoff, epsilon=epsilon, shortcut=shortcut)


def batchnorm(m):
    return LayerSpec("batchnorm", n_in=m, n_out=m)


def activation(kind="relu", alpha=None):
    return LayerSpec("activation", activation=kind, alpha=alpha)


@dataclass
class InitScheme:
    kind: str = "default_uniform"
    sigma: float = 1.0
    sigma_w: float = 1.0
    b0: float = 0.1

    def __post_init__(self):
        if self.kind not in INIT_KINDS:
            raise SpecError(f"unknown init scheme {self.kind!r}; expected one of {INIT_KINDS}")
        if self.sigma <= 0 or self.sigma_w <= 0:
            raise SpecError("init standard deviations must be positive")


@dataclass
class NetworkSpec:
    layers: List[LayerSpec] = field(default_factory=list)
    init: InitScheme = field(default_factory=InitScheme)
    seed: int = 0

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        return cls(layers=[LayerSpec(**l) for l in d.get("layers", [])],
                   init=InitScheme(**d.get("init", {})), seed=int(d.get("seed", 0)))


def mlp_spec(n_in, hidden, n_classes, farkas=False, agg="sum", use_batchnorm=False,
             init=None, seed=0):
    """Hidden ReLU (or Farkas) layers of the given widths, then a linear head."""
    layers, prev = [], n_in
    for width in hidden:
        if farkas:
            layers.append(farkas_dense(prev, width, agg=agg))
        else:
            layers += [dense(prev, width), activation("relu")]
        if use_batchnorm:
            layers.append(batchnorm(width))
        prev = width
    layers.append(dense(prev, n_classes))
    return NetworkSpec(layers, init or InitScheme(), seed)


# --------------------------------------------------------------------------
# modules
# --------------------------------------------------------------------------


class Dense:
    kind = "dense"

    def __init__(self, n, m, bias=True):
        self.n, self.m, self.has_bias = int(n), int(m), bool(bias)
        self.W = Tensor(np.zeros((m, n)), requires_grad=True)
        self.b = Tensor(np.zeros(m), requires_grad=True) if bias else None

    def parameters(self):
        return [self.W] + ([self.b] if self.has_bias else [])

    def effective_weights(self):
        return self.W.data.copy()

    def effective_bias(self):
        return self.b.data.copy() if self.has_bias else np.zeros(self.m)

    def forward(self, x):
        y = T.linear(x, self.W)
        return T.add_bias(y, self.b) if self.has_bias else y

    __call__ = forward


class Activation:
    kind = "activation"

    def __init__(self, kind="relu", alpha=None):
        self.activation, self.alpha = kind, alpha

    def parameters(self):
        return []

    def forward(self, x):
        return T.activate(x, self.activation, self.alpha)

    __call__ = forward


class BatchNorm:
    """Per-feature batch normalisation with running statistics."""

    kind = "batchnorm"

    def __init__(self, m, momentum=0.1, eps=1e-5):
        if eps <= 0:
            raise SpecError("batchnorm eps must be positive")
        self.m = int(m)
        self.momentum, self.eps = float(momentum), float(eps)
        self.gamma = Tensor(np.ones(m), requires_grad=True)
        self.beta = Tensor(np.zeros(m), requires_grad=True)
        self.running_mean = np.zeros(m)
        self.running_var = np.ones(m)

    def parameters(self):
        return [self.gamma, self.beta]

    def forward(self, y, training=True, update_stats=True):
        return batchnorm_forward(self, y, training, update_stats)

    __call__ = forward


def batchnorm_forward(state, y, training=True, update_stats=True):
    """Normalise ``y[batch, m]`` per feature, then scale by gamma and shift by beta.

    Training mode uses batch statistics (biased variance for the transform,
    unbiased for the running estimate); inference uses the running estimates.
    """
    if y.ndim != 2 or y.shape[1] != state.m:
        raise DimensionError(f"batchnorm over {state.m} features got shape {y.shape}")
    x = y.data
    gamma = state.gamma.data
    if training:
        n = x.shape[0]
        if n < 2:
            raise UsageError("batchnorm in training mode needs a batch of at least 2")
        mu = x.mean(axis=0)
        var = x.var(axis=0)
        if update_stats:
            mom = state.momentum
            state.running_mean = (1 - mom) * state.running_mean + mom * mu
            state.running_var = (1 - mom) * state.running_var + mom * var * n / (n - 1)
    else:
        mu, var = state.running_mean, state.running_var
    inv_std = 1.0 / np.sqrt(var + state.eps)
    xhat = (x - mu) * inv_std
    out = gamma * xhat + state.beta.data

    def backward(g):
        dxhat = g * gamma
        if training:
            n = x.shape[0]
            dx = inv_std / n * (n * dxhat - dxhat.sum(axis=0) - xhat * (dxhat * xhat).sum(axis=0))
        else:
            dx = dxhat * inv_std
        return dx, (g * xhat).sum(axis=0), g.sum(axis=0)

    return Tensor._from_op(out, (y, state.gamma, state.beta), backward, "batchnorm")


class Network:
    """Modules applied in order; ``weight_index[i]`` maps module ``i`` to its layer index."""

    def __init__(self, modules, spec=None):
        self.modules = list(modules)
        self.spec = spec
        self.weight_index = []
        layer = -1
        for mod in self.modules:
            if mod.kind in ("dense", "farkas_dense", "farkas_residual"):
                layer += 1
            self.weight_index.append(layer)

    def parameters(self):
        return [p for mod in self.modules for p in mod.parameters()]

    def n_parameters(self):
        return int(sum(p.data.size for p in self.parameters()))

    def zero_grad(self):
        for p in self.parameters():
            p.grad = None

    def farkas_layers(self):
        return [m for m in self.modules if m.kind in ("farkas_dense", "farkas_residual")]

    def forward(self, x, training=True, trace=False, update_stats=True):
        h = x if isinstance(x, Tensor) else Tensor(x)
        outputs = []
        for mod in self.modules:
            if mod.kind == "batchnorm":
                h = mod.forward(h, training=training, update_stats=update_stats)
            else:
                h = mod.forward(h)
            if trace:
                outputs.append(h)
        return (h, outputs) if trace else h

    __call__ = forward

    def predict_logits(self, x):
        with T.no_grad():
            return self.forward(x, training=False).data

    def __len__(self):
        return len(self.modules)


def _validate(spec):
    width = None
    for i, ls in enumerate(spec.layers):
        if ls.kind not in LAYER_KINDS:
            raise SpecError(f"layer {i}: unknown kind {ls.kind!r}")
        if ls.kind in ("farkas_dense", "farkas_residual") and ls.n_out < 2:
            raise SpecError(f"layer {i}: a Farkas layer needs at least 2 outputs, got {ls.n_out}")
        if ls.kind == "farkas_residual" and ls.hidden < 2:
            raise SpecError(f"layer {i}: residual block hidden width must be >= 2")
        if ls.kind == "activation":
            continue
        if ls.kind in ("dense", "farkas_dense") and (ls.n_in < 1 or ls.n_out < 1):
            raise SpecError(f"layer {i}: widths must be positive")
        if width is not None and ls.in_width() != width:
            raise SpecError(f"layer {i}: expects {ls.in_width()} inputs but receives {width}")
        width = ls.out_width()


def build(spec):
    """Instantiate and initialise the network described by ``spec``."""
    _validate(spec)
    modules = []
    for ls in spec.layers:
        if ls.kind == "dense":
            modules.append(Dense(ls.n_in, ls.n_out, ls.bias))
        elif ls.kind == "farkas_dense":
            modules.append(FarkasDenseLayer(ls.n_in, ls.n_out, agg=ls.agg, cutoff=ls.cutoff,
                                            epsilon=ls.epsilon, activation=ls.activation,
                                            alpha=ls.alpha))
        elif ls.kind == "farkas_residual":
            modules.append(FarkasResidualBlock(ls.n_out, ls.hidden, agg=ls.agg, cutoff=ls.cutoff,
                                               epsilon=ls.epsilon, shortcut=ls.shortcut))
        elif ls.kind == "batchnorm":
            modules.append(BatchNorm(ls.n_out))
        else:
            modules.append(Activation(ls.activation, ls.alpha))
    net = Network(modules, spec)
    init(net, spec.init, spec.seed)
    return net


def _fill(rng, shape, fan_in, scheme, is_bias):
    if scheme.kind in ("default_uniform", "zero_last_in_block"):
        bound = 1.0 / np.sqrt(fan_in)
        return rng.uniform(-bound, bound, size=shape)
    if scheme.kind == "symmetric_normal":
        return np.zeros(shape) if is_bias else rng.normal(0.0, scheme.sigma, size=shape)
    # asymmetric_positive_bias
    return np.full(shape, scheme.b0) if is_bias else rng.normal(0.0, scheme.sigma_w, size=shape)


def init(network, scheme, seed):
    """Draw every parameter from ``scheme``; layer ``i`` uses stream ``("init", i)``."""
    if isinstance(scheme, str):
        scheme = InitScheme(scheme)
    if scheme.kind not in INIT_KINDS:
        raise SpecError(f"unknown init scheme {scheme.kind!r}")
    for idx, mod in enumerate(network.modules):
        rng = make_rng(seed, "init", idx)
        if mod.kind == "dense":
            mod.W.data = _fill(rng, mod.W.shape, mod.n, scheme, False)
            if mod.has_bias:
                mod.b.data = _fill(rng, mod.b.shape, mod.n, scheme, True)
        elif mod.kind == "farkas_dense":
            mod.W.data = _fill(rng, mod.W.shape, mod.n, scheme, False)
            mod.b.data = _fill(rng, mod.b.shape, mod.n, scheme, True)
        elif mod.kind == "farkas_residual":
            inner = mod.inner
            inner.W.data = _fill(rng, inner.W.shape, inner.n, scheme, False)
            inner.b.data = _fill(rng, inner.b.shape, inner.n, scheme, True)
            mod.W2.data = _fill(rng, mod.W2.shape, mod.hidden, scheme, False)
            mod.b2.data = _fill(rng, mod.b2.shape, mod.hidden, scheme, True)
            if scheme.kind == "zero_last_in_block":
                mod.W2.data = np.zeros(mod.W2.shape)
        elif mod.kind == "batchnorm":
            mod.gamma.data = np.ones(mod.m)
            mod.beta.data = np.zeros(mod.m)
            mod.running_mean = np.zeros(mod.m)
            mod.running_var = np.ones(mod.m)
    return network


class BornDead(NamedTuple):
    dead: bool
    layer: Optional[int]


def is_born_dead(network, probe, training=True):
    """Find the shallowest layer whose activated output is zero on every probe row.

    Layer indices count weight-bearing layers (dense, Farkas dense, residual
    block) from 0; an activation module belongs to the layer before it.
    """
    probe = probe if isinstance(probe, Tensor) else Tensor(probe)
    if probe.ndim != 2 or probe.shape[0] < 1:
        raise UsageError("probe must be a non-empty [K, n] array")
    use_batch_stats = training and probe.shape[0] >= 2
    with T.no_grad():
        _, outs = network.forward(probe, training=use_batch_stats, trace=True, update_stats=False)
    for mod, out, layer in zip(network.modules, outs, network.weight_index):
        if mod.kind in ("activation", "farkas_dense", "farkas_residual"):
            if not np.any(out.data):
                return BornDead(True, max(layer, 0))
    return BornDead(False, None)
