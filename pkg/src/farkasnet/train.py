"""SGD training and the desk-scale experiments."""

import time
from dataclasses import asdict, dataclass, field
from typing import List, Optional, Tuple

import numpy as np

from . import lp
from . import tensor as T
from .data import Dataset, gen_rings, gen_two_clusters
from .exceptions import InputError, UsageError
from .farkas import FarkasDenseLayer, aggregate_rows
from .netbuild import (Activation, Dense, InitScheme, Network, build, dense, farkas_dense,
                       activation, is_born_dead, mlp_spec, NetworkSpec)
from .rng import make_rng
from .tensor import Tensor

LARGE_LR, MEDIUM_LR, SMALL_LR = 0.1, 0.05, 0.01


@dataclass
class SgdConfig:
    learning_rate: float = SMALL_LR
    momentum: float = 0.9
    weight_decay: float = 5e-4
    epochs: int = 200
    lr_schedule: Optional[List[Tuple[int, float]]] = None
    batch_size: int = 32

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise InputError("learning_rate must be positive")
        if self.epochs < 0:
            raise InputError("epochs must be non-negative")
        if self.lr_schedule is None:
            self.lr_schedule = [(self.epochs // 2, 0.1), ((3 * self.epochs) // 4, 0.1)]
        self.lr_schedule = [(int(e), float(k)) for e, k in self.lr_schedule]

    def lr_at(self, epoch):
        """Base rate times every multiplier whose milestone is <= ``epoch`` (0-based)."""
        lr = self.learning_rate
        for milestone, mult in self.lr_schedule:
            if epoch >= milestone:
                lr *= mult
        return lr


def sgd_step(params, grads, velocities, cfg, epoch):
    """One momentum-SGD update, in place.

    ``v <- momentum * v + g + weight_decay * p``; ``p <- p - lr(epoch) * v``.
    ``params``/``grads``/``velocities`` are parallel lists of arrays.
    """
    if not (len(params) == len(grads) == len(velocities)):
        raise UsageError("params, grads and velocities must have equal length")
    lr = cfg.lr_at(epoch)
    for p, g, v in zip(params, grads, velocities):
        if p.shape != g.shape or p.shape != v.shape:
            raise UsageError(f"shape mismatch: param {p.shape}, grad {g.shape}, velocity {v.shape}")
        v *= cfg.momentum
        v += g
        if cfg.weight_decay:
            v += cfg.weight_decay * p
        p -= lr * v
    return params


class SGD:
    """Holds momentum buffers for a list of parameter tensors."""

    def __init__(self, params, cfg):
        self.params = list(params)
        self.cfg = cfg
        self.velocities = [np.zeros_like(p.data) for p in self.params]

    def step(self, epoch):
        grads = [p.grad if p.grad is not None else np.zeros_like(p.data) for p in self.params]
        sgd_step([p.data for p in self.params], grads, self.velocities, self.cfg, epoch)

    def zero_grad(self):
        for p in self.params:
            p.grad = None


def error_rate(logits, labels):
    """Fraction of rows whose true-class logit is not strictly the largest.

    Ties count as errors: a point no neuron responds to gets equal logits and
    is not classified.
    """
    logits = np.asarray(logits)
    labels = np.asarray(labels)
    if logits.shape[0] == 0:
        return 0.0
    rows = np.arange(labels.shape[0])
    true = logits[rows, labels]
    others = logits.copy()
    others[rows, labels] = -np.inf
    correct = true > others.max(axis=1)
    return float(1.0 - correct.mean())


def evaluate(network, ds):
    with np.errstate(all="ignore"):
        logits = network.predict_logits(ds.inputs)
        if not np.all(np.isfinite(logits)):
            return float("nan"), 1.0
        loss = T.softmax_cross_entropy(Tensor(logits), ds.labels).item()
    return loss, error_rate(logits, ds.labels)


def layer_margins(network):
    """``[(layer, guaranteed margin, LP p*)]`` for every Farkas layer and block."""
    out = []
    for mod, layer in zip(network.modules, network.weight_index):
        if mod.kind == "farkas_dense":
            res = lp.min_max_margin(lp.LpProblem(mod.effective_weights(), mod.effective_bias()))
            out.append((layer, mod.guaranteed_margin(), res.p_star))
        elif mod.kind == "farkas_residual":
            W, b = mod.outer_system()
            res = lp.min_max_margin(lp.LpProblem(W, b))
            out.append((layer, mod.guaranteed_margin(), res.p_star))
    return out


@dataclass
class RunReport:
    name: str
    seed: int
    train_loss: List[float] = field(default_factory=list)
    train_err: List[float] = field(default_factory=list)
    test_err: List[float] = field(default_factory=list)
    init_loss: float = float("nan")
    init_train_err: float = float("nan")
    init_test_err: float = float("nan")
    born_dead_at_init: bool = False
    born_dead_layer: Optional[int] = None
    constant_err: float = float("nan")  # best constant classifier on the training set
    margins: List[Tuple[int, float, float]] = field(default_factory=list)
    diverged: bool = False
    wall_clock: float = 0.0

    @property
    def final_train_err(self):
        return self.train_err[-1] if self.train_err else self.init_train_err

    @property
    def final_test_err(self):
        return self.test_err[-1] if self.test_err else self.init_test_err

    @property
    def final_accuracy(self):
        return 1.0 - self.final_train_err

    @property
    def no_progress_5_epochs(self):
        """Trajectory-based born-dead flag: over the first five epochs the train
        error never beats the best constant classifier. Loss is not used since a
        dead body still lets the read-out bias lower it."""
        early = self.train_err[:5]
        return bool(early) and bool(min(early) >= self.constant_err - 1e-12)

    def rows(self):
        return [(e + 1, self.train_loss[e], self.train_err[e], self.test_err[e])
                for e in range(len(self.train_loss))]

    def summary(self):
        """JSON-ready summary (wall clock excluded so reruns compare byte for byte)."""
        d = asdict(self)
        for k in ("train_loss", "train_err", "test_err", "wall_clock"):
            d.pop(k)
        d["final_train_err"] = self.final_train_err
        d["final_test_err"] = self.final_test_err
        d["no_progress_5_epochs"] = self.no_progress_5_epochs
        d["margins"] = [{"layer": l, "guaranteed": g, "p_star": p} for l, g, p in self.margins]
        return d


def fit(network, train, cfg, seed, test=None, name="run", probe=None):
    """Train ``network`` with minibatch momentum SGD on softmax cross-entropy."""
    test = train if test is None else test
    t0 = time.perf_counter()
    report = RunReport(name=name, seed=int(seed))
    dead = is_born_dead(network, train.inputs if probe is None else probe)
    report.born_dead_at_init, report.born_dead_layer = dead.dead, dead.layer
    report.init_loss, report.init_train_err = evaluate(network, train)
    report.init_test_err = evaluate(network, test)[1]
    report.constant_err = float(1.0 - np.bincount(train.labels).max() / len(train))
    opt = SGD(network.parameters(), cfg)
    n = len(train)
    bs = max(1, min(cfg.batch_size, n))
    for epoch in range(cfg.epochs):
        if not report.diverged:
            order = make_rng(seed, "shuffle", epoch).permutation(n)
            with np.errstate(all="ignore"):
                for start in range(0, n, bs):
                    idx = order[start : start + bs]
                    if idx.shape[0] < 2 and any(m.kind == "batchnorm" for m in network.modules):
                        continue
                    opt.zero_grad()
                    logits = network.forward(train.inputs[idx], training=True)
                    loss = T.softmax_cross_entropy(logits, train.labels[idx])
                    loss.backward()
                    opt.step(epoch)
            if not all(np.all(np.isfinite(p.data)) for p in opt.params):
                report.diverged = True
        loss, err = evaluate(network, train)
        report.train_loss.append(loss)
        report.train_err.append(err)
        report.test_err.append(evaluate(network, test)[1])
    opt.zero_grad()
    if not report.diverged:
        report.margins = layer_margins(network)
    report.wall_clock = time.perf_counter() - t0
    return report


# --------------------------------------------------------------------------
# experiment: two-cluster toy problem
# --------------------------------------------------------------------------


@dataclass
class Toy2dConfig:
    seed: int = 0
    epochs: int = 200
    learning_rate: float = SMALL_LR
    momentum: float = 0.9
    weight_decay: float = 5e-4
    batch_size: int = 20
    n_per_cluster: int = 100
    centers: Tuple[Tuple[float, float], Tuple[float, float]] = ((2.0, 2.0), (-2.0, -2.0))
    std: float = 0.5
    agg: str = "sum"
    swap_labels: bool = False


def adversarial_rows(centers):
    """Two identical hyperplanes whose normals point away from the second cluster.

    Each row is ``-u`` with ``u`` the unit vector from the first center to
    the second; the bias puts the hyperplane one unit past the midpoint on the
    side of the first cluster, so every point near the second center is on
    the zero side of the ReLU.
    """
    a, b = (np.asarray(c, dtype=np.float64) for c in centers)
    u = (b - a) / np.linalg.norm(b - a)
    mid = 0.5 * (a + b)
    w = np.stack([-u, -u])
    bias = np.full(2, float(u @ mid) - 1.0)
    return w, bias


def toy_networks(cfg):
    """Plain and Farkas single-hidden-layer nets sharing the adversarial rows and read-out."""
    w, bias = adversarial_rows(cfg.centers)
    head = make_rng(cfg.seed, "toy-head").uniform(-1 / np.sqrt(3), 1 / np.sqrt(3), size=(2, 3))

    hidden = Dense(2, 2)
    hidden.W.data, hidden.b.data = w.copy(), bias.copy()
    read = Dense(2, 2, bias=False)
    read.W.data = head[:, :2].copy()
    plain = Network([hidden, Activation("relu"), read])

    fl = FarkasDenseLayer(2, 3, agg=cfg.agg, weight=w.copy(), bias=np.append(bias, bias[0]))
    read_f = Dense(3, 2, bias=False)
    read_f.W.data = head.copy()
    farkas = Network([fl, read_f])
    return plain, farkas


def run_toy2d(cfg=None):
    """Train the adversarially initialised plain and Farkas nets; returns ``(plain, farkas)``."""
    cfg = cfg or Toy2dConfig()
    ds = gen_two_clusters(cfg.seed, cfg.n_per_cluster, cfg.centers, cfg.std)
    if cfg.swap_labels:
        ds = ds.swapped_labels()
    sgd = SgdConfig(cfg.learning_rate, cfg.momentum, cfg.weight_decay, cfg.epochs,
                    batch_size=cfg.batch_size)
    plain, farkas = toy_networks(cfg)
    r_plain = fit(plain, ds, sgd, cfg.seed, name="plain")
    r_farkas = fit(farkas, ds, sgd, cfg.seed, name="farkas")
    return r_plain, r_farkas


# --------------------------------------------------------------------------
# experiment: born-dead probability versus depth
# --------------------------------------------------------------------------


def chain_spec(width, depth, farkas, init, seed, agg="sum"):
    """``depth`` width-preserving ReLU layers without a read-out."""
    layers = []
    for _ in range(depth):
        if farkas:
            layers.append(farkas_dense(width, width, agg=agg))
        else:
            layers += [dense(width, width), activation("relu")]
    return NetworkSpec(layers, init, seed)


def run_born_dead(depths=(1, 2, 5, 10, 20, 30), width=2, trials=200, init=None, seed=0,
                  n_probe=64, agg="sum"):
    """Fraction of randomly initialised nets that are born dead, per depth.

    Each trial draws a fresh probe set from N(0, I) and builds a plain and a
    Farkas chain from the same trial seed. ``premise_p`` is the trial-averaged
    smallest per-neuron probability (over probes) of a negative first-layer
    pre-activation.
    """
    init = init or InitScheme("symmetric_normal", sigma=1.0)
    if isinstance(init, str):
        init = InitScheme(init)
    table = []
    for depth in depths:
        dead_plain = dead_farkas = 0
        p_min = []
        for t in range(trials):
            tseed = int(make_rng(seed, "born-dead", depth, t).integers(2**62))
            probe = make_rng(tseed, "probe").standard_normal((n_probe, width))
            plain = build(chain_spec(width, depth, False, init, tseed))
            fark = build(chain_spec(width, depth, True, init, tseed, agg))
            dead_plain += is_born_dead(plain, probe).dead
            dead_farkas += is_born_dead(fark, probe).dead
            first = plain.modules[0]
            pre = probe @ first.W.data.T + first.b.data
            p_min.append(float((pre < 0).mean(axis=0).min()))
        table.append({"depth": depth, "width": width, "trials": trials,
                      "plain_fraction": dead_plain / trials,
                      "farkas_fraction": dead_farkas / trials,
                      "premise_p": float(np.mean(p_min))})
    return table


# --------------------------------------------------------------------------
# experiment: l_inf stability of the aggregated row
# --------------------------------------------------------------------------


def run_norm_stability(trials=1000, dims=((2, 8), (2, 8)), seed=0):
    """Check ``||[W; -mean(W)]||_inf <= ||W||_inf`` on random Gaussian ``W``.

    ``dims`` gives inclusive ranges for the number of trainable rows and
    columns. Sum mode is checked alongside and can violate the bound; the
    bias analogue compares ``|mean(b)|`` against ``max |b_j|``.
    """
    (r_lo, r_hi), (c_lo, c_hi) = dims
    rng = make_rng(seed, "norm-stability")
    mean_ok = sum_ok = bias_ok = 0
    worst = -np.inf
    for _ in range(trials):
        rows = int(rng.integers(r_lo, r_hi + 1))
        cols = int(rng.integers(c_lo, c_hi + 1))
        w = rng.standard_normal((rows, cols))
        b = rng.standard_normal(rows)
        base = lp.inf_norm(w)
        with_mean = lp.inf_norm(np.vstack([w, aggregate_rows(w, "mean")]))
        with_sum = lp.inf_norm(np.vstack([w, aggregate_rows(w, "sum")]))
        mean_ok += with_mean <= base + 1e-12
        sum_ok += with_sum <= base + 1e-12
        bias_ok += abs(b.mean()) <= np.abs(b).max() + 1e-12
        worst = max(worst, with_mean - base)
    return {"trials": trials, "mean_satisfied": int(mean_ok), "sum_satisfied": int(sum_ok),
            "bias_mean_satisfied": int(bias_ok), "max_mean_excess": float(worst)}


# --------------------------------------------------------------------------
# experiment: small plain vs Farkas comparison
# --------------------------------------------------------------------------

VARIANTS = ("plain", "plain_bn", "farkas", "farkas_bn")


@dataclass
class CompareConfig:
    seeds: Tuple[int, ...] = tuple(range(10))
    dataset: str = "rings"  # rings | clusters | csv:<path> | idx:<images>,<labels>
    n_per_class: int = 100
    depth: int = 8
    width: int = 8
    epochs: int = 100
    learning_rate: float = SMALL_LR
    momentum: float = 0.9
    weight_decay: float = 5e-4
    batch_size: int = 32
    init: str = "default_uniform"
    agg: str = "sum"
    variants: Tuple[str, ...] = ("plain", "farkas")
    standardize: bool = False


def compare_datasets(cfg, seed):
    from .data import load_csv, load_idx

    if cfg.dataset == "rings":
        return (gen_rings(seed, cfg.n_per_class, stream="train"),
                gen_rings(seed, cfg.n_per_class, stream="test"))
    if cfg.dataset == "clusters":
        return (gen_two_clusters(seed, cfg.n_per_class, stream="train"),
                gen_two_clusters(seed, cfg.n_per_class, stream="test"))
    if cfg.dataset.startswith("csv:"):
        full = load_csv(cfg.dataset[4:])
    elif cfg.dataset.startswith("idx:"):
        images, labels = cfg.dataset[4:].split(",")
        full = load_idx(images, labels)
    else:
        raise InputError(f"unknown dataset {cfg.dataset!r}")
    order = make_rng(seed, "split").permutation(len(full))
    cut = max(1, int(0.8 * len(full)))
    tr, te = order[:cut], order[cut:] if cut < len(full) else order[:cut]
    train = Dataset(full.inputs[tr], full.labels[tr])
    test = Dataset(full.inputs[te], full.labels[te])
    return train, test


def run_small_compare(cfg=None):
    """Train each variant on each seed; returns ``{variant: [RunReport, ...]}``."""
    cfg = cfg or CompareConfig()
    for v in cfg.variants:
        if v not in VARIANTS:
            raise InputError(f"unknown variant {v!r}; expected one of {VARIANTS}")
    sgd = SgdConfig(cfg.learning_rate, cfg.momentum, cfg.weight_decay, cfg.epochs,
                    batch_size=cfg.batch_size)
    out = {v: [] for v in cfg.variants}
    for seed in cfg.seeds:
        train, test = compare_datasets(cfg, seed)
        if cfg.standardize:
            train = train.standardized()
            test = test.standardized(train.mean, train.std)
        n_classes = max(train.n_classes, test.n_classes)
        for v in cfg.variants:
            spec = mlp_spec(train.n_features, [cfg.width] * cfg.depth, n_classes,
                            farkas=v.startswith("farkas"), agg=cfg.agg,
                            use_batchnorm=v.endswith("_bn"), init=InitScheme(cfg.init), seed=seed)
            net = build(spec)
            out[v].append(fit(net, train, sgd, seed, test=test, name=v))
    return out
