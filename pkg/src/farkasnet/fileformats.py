"""On-disk formats: binary weights files, flat key-value configs and run reports.

Weights file (all integers unsigned, all values little-endian)::

    header   b"FKNW" | u32 version (=1) | u32 record count
    record   u8 kind | u8 activation | u8 aggregation | u8 flags
             u32 ndims | u32 * ndims
             f64 alpha | f64 cutoff | f64 epsilon | f64 bn momentum | f64 bn eps
             u32 len(lambda) | f64 * len(lambda)
             u32 buffer count | per buffer: u32 length | f64 * length

kind: 0 dense, 1 farkas_dense, 2 farkas_residual, 3 batchnorm, 4 activation.
activation: 0 relu, 1 leaky, 2 elu, 3 identity. aggregation: 0 none, 1 sum,
2 mean. flags: bit 0 has bias, bit 1 shortcut, bit 2 alpha set.
dims: dense/farkas ``(n, m)``, residual ``(m, hidden)``, batchnorm ``(m,)``.
Buffers are the flattened parameters in :func:`_buffers` order; ``lambda``
is the stored certificate (empty for non-Farkas records).
"""

import csv
import io
import json
import math
import struct

import numpy as np

from .exceptions import FormatError
from .farkas import FarkasDenseLayer, FarkasResidualBlock
from .netbuild import (Activation, BatchNorm, Dense, LayerSpec, Network, NetworkSpec,
                       InitScheme)

MAGIC = b"FKNW"
VERSION = 1
KIND_CODES = {"dense": 0, "farkas_dense": 1, "farkas_residual": 2, "batchnorm": 3,
              "activation": 4}
ACT_CODES = {"relu": 0, "leaky": 1, "elu": 2, "identity": 3}
AGG_CODES = {None: 0, "sum": 1, "mean": 2}
_KINDS = {v: k for k, v in KIND_CODES.items()}
_ACTS = {v: k for k, v in ACT_CODES.items()}
_AGGS = {v: k for k, v in AGG_CODES.items()}
REPORT_COLUMNS = ("epoch", "train_loss", "train_err", "test_err")


def _buffers(mod):
    if mod.kind == "dense":
        return [mod.W, mod.b] if mod.has_bias else [mod.W]
    if mod.kind == "farkas_dense":
        return [mod.W, mod.b]
    if mod.kind == "farkas_residual":
        return [mod.inner.W, mod.inner.b, mod.W2, mod.b2]
    if mod.kind == "batchnorm":
        return [mod.gamma, mod.beta, mod.running_mean, mod.running_var]
    return []


def _as_array(buf):
    return buf if isinstance(buf, np.ndarray) else buf.data


def _encode(mod):
    kind = mod.kind
    act = getattr(mod, "activation", "relu")
    alpha = getattr(mod, "alpha", None)
    agg = getattr(mod, "agg", None)
    flags = 0
    if kind == "dense":
        dims = (mod.n, mod.m)
        flags |= 1 if mod.has_bias else 0
    elif kind == "farkas_dense":
        dims = (mod.n, mod.m)
        flags |= 1
    elif kind == "farkas_residual":
        dims = (mod.m, mod.hidden)
        flags |= 1 | (2 if mod.shortcut else 0)
    elif kind == "batchnorm":
        dims = (mod.m,)
    else:
        dims = ()
    if alpha is not None:
        flags |= 4
    out = [struct.pack("<BBBBI", KIND_CODES[kind], ACT_CODES[act],
                       AGG_CODES[agg if kind in ("farkas_dense", "farkas_residual") else None],
                       flags, len(dims))]
    out.append(struct.pack(f"<{len(dims)}I", *dims))
    out.append(struct.pack("<5d", alpha if alpha is not None else 0.0,
                           getattr(mod, "cutoff", 0.0), getattr(mod, "epsilon", 0.0),
                           getattr(mod, "momentum", 0.0), getattr(mod, "eps", 0.0)))
    lam = mod.lambda_ if kind in ("farkas_dense", "farkas_residual") else np.zeros(0)
    out.append(struct.pack("<I", lam.size) + lam.astype("<f8").tobytes())
    bufs = _buffers(mod)
    out.append(struct.pack("<I", len(bufs)))
    for buf in bufs:
        arr = np.ascontiguousarray(_as_array(buf), dtype="<f8").reshape(-1)
        out.append(struct.pack("<I", arr.size) + arr.tobytes())
    return b"".join(out)


def dumps_weights(network):
    parts = [MAGIC, struct.pack("<II", VERSION, len(network.modules))]
    parts += [_encode(mod) for mod in network.modules]
    return b"".join(parts)


def save_weights(network, path):
    with open(path, "wb") as fh:
        fh.write(dumps_weights(network))


class _Reader:
    def __init__(self, raw):
        self.raw, self.pos = raw, 0

    def take(self, fmt):
        size = struct.calcsize(fmt)
        if self.pos + size > len(self.raw):
            raise FormatError("weights file truncated", offset=len(self.raw))
        vals = struct.unpack_from(fmt, self.raw, self.pos)
        self.pos += size
        return vals

    def array(self, count):
        size = 8 * count
        if self.pos + size > len(self.raw):
            raise FormatError("weights file truncated", offset=len(self.raw))
        arr = np.frombuffer(self.raw, dtype="<f8", count=count, offset=self.pos).astype(np.float64)
        self.pos += size
        return arr


def _decode(r):
    start = r.pos
    kind_c, act_c, agg_c, flags, ndims = r.take("<BBBBI")
    if kind_c not in _KINDS or act_c not in _ACTS or agg_c not in _AGGS:
        raise FormatError("unknown record code", offset=start)
    kind, act, agg = _KINDS[kind_c], _ACTS[act_c], _AGGS[agg_c]
    dims = r.take(f"<{ndims}I")
    alpha, cutoff, epsilon, momentum, bn_eps = r.take("<5d")
    alpha = alpha if flags & 4 else None
    (lam_len,) = r.take("<I")
    lam = r.array(lam_len)
    (nbuf,) = r.take("<I")
    bufs = []
    for _ in range(nbuf):
        (length,) = r.take("<I")
        bufs.append(r.array(length))
    try:
        if kind == "dense":
            n, m = dims
            mod = Dense(n, m, bias=bool(flags & 1))
        elif kind == "farkas_dense":
            n, m = dims
            mod = FarkasDenseLayer(n, m, agg=agg, cutoff=cutoff, epsilon=epsilon,
                                   activation=act, alpha=alpha)
        elif kind == "farkas_residual":
            m, hidden = dims
            mod = FarkasResidualBlock(m, hidden, agg=agg, cutoff=cutoff, epsilon=epsilon,
                                      activation=act, alpha=alpha, shortcut=bool(flags & 2))
        elif kind == "batchnorm":
            (m,) = dims
            mod = BatchNorm(m, momentum=momentum, eps=bn_eps)
        else:
            mod = Activation(act, alpha)
    except (ValueError, TypeError) as exc:
        raise FormatError(f"invalid {kind} record: {exc}", offset=start) from None
    targets = _buffers(mod)
    if len(targets) != len(bufs):
        raise FormatError(f"{kind} record has {len(bufs)} buffers, expected {len(targets)}",
                          offset=start)
    for i, (tgt, buf) in enumerate(zip(targets, bufs)):
        shape = _as_array(tgt).shape
        if buf.size != int(np.prod(shape)):
            raise FormatError(f"{kind} buffer {i} has {buf.size} values, expected {shape}",
                              offset=start)
        if isinstance(tgt, np.ndarray):
            if i == 2:
                mod.running_mean = buf.reshape(shape)
            else:
                mod.running_var = buf.reshape(shape)
        else:
            tgt.data = buf.reshape(shape)
    return mod, lam


def _spec_of(mod):
    if mod.kind == "dense":
        return LayerSpec("dense", n_in=mod.n, n_out=mod.m, bias=mod.has_bias)
    if mod.kind == "farkas_dense":
        return LayerSpec("farkas_dense", n_in=mod.n, n_out=mod.m, agg=mod.agg, cutoff=mod.cutoff,
                         epsilon=mod.epsilon, activation=mod.activation, alpha=mod.alpha)
    if mod.kind == "farkas_residual":
        return LayerSpec("farkas_residual", n_in=mod.n, n_out=mod.m, hidden=mod.hidden,
                         agg=mod.agg, cutoff=mod.cutoff, epsilon=mod.epsilon,
                         shortcut=mod.shortcut)
    if mod.kind == "batchnorm":
        return LayerSpec("batchnorm", n_in=mod.m, n_out=mod.m)
    return LayerSpec("activation", activation=mod.activation, alpha=mod.alpha)


def loads_weights(raw):
    """Parse bytes from :func:`dumps_weights`; stored certificates land in ``net.stored_lambdas``."""
    if len(raw) < 12:
        raise FormatError("weights header truncated", offset=len(raw))
    if raw[:4] != MAGIC:
        raise FormatError("not a weights file (bad magic)", offset=0)
    r = _Reader(raw)
    r.pos = 4
    version, count = r.take("<II")
    if version != VERSION:
        raise FormatError(f"unsupported weights version {version} (expected {VERSION})", offset=4)
    modules, lambdas = [], []
    for _ in range(count):
        mod, lam = _decode(r)
        modules.append(mod)
        lambdas.append(lam)
    if r.pos != len(raw):
        raise FormatError(f"{len(raw) - r.pos} trailing bytes after last record", offset=r.pos)
    net = Network(modules, NetworkSpec([_spec_of(m) for m in modules], InitScheme(), 0))
    net.stored_lambdas = lambdas
    return net


def load_weights(path):
    with open(path, "rb") as fh:
        return loads_weights(fh.read())


# --------------------------------------------------------------------------
# flat key-value configs
# --------------------------------------------------------------------------


def _flatten(obj, prefix, out):
    if isinstance(obj, dict):
        for k in sorted(obj):
            _flatten(obj[k], f"{prefix}{k}.", out)
    elif isinstance(obj, (list, tuple)) and any(isinstance(v, (dict, list, tuple)) for v in obj):
        for i, v in enumerate(obj):
            _flatten(v, f"{prefix}{i}.", out)
    else:
        out.append((prefix[:-1], obj))


def dumps_config(cfg):
    """Serialise a (nested) dict as sorted ``dotted.key = json-value`` lines."""
    items = []
    _flatten(cfg, "", items)
    lines = [f"{k} = {json.dumps(list(v) if isinstance(v, tuple) else v)}" for k, v in items]
    return "\n".join(lines) + "\n"


def _parse_value(text):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def _listify(node):
    if not isinstance(node, dict):
        return node
    node = {k: _listify(v) for k, v in node.items()}
    if node and all(k.isdigit() for k in node):
        return [node[k] for k in sorted(node, key=int)]
    return node


def loads_config(text):
    """Inverse of :func:`dumps_config`; blank lines and ``#`` comments are skipped."""
    root = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise FormatError(f"config line {lineno}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        if not key:
            raise FormatError(f"config line {lineno}: empty key")
        node = root
        parts = key.split(".")
        for part in parts[:-1]:
            node = node.setdefault(part, {})
            if not isinstance(node, dict):
                raise FormatError(f"config line {lineno}: {key!r} conflicts with a scalar")
        node[parts[-1]] = _parse_value(value)
    return _listify(root)


def load_config(path):
    with open(path) as fh:
        return loads_config(fh.read())


def save_config(cfg, path):
    with open(path, "w") as fh:
        fh.write(dumps_config(cfg))


# --------------------------------------------------------------------------
# reports
# --------------------------------------------------------------------------


def report_csv(report):
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(REPORT_COLUMNS)
    for row in report.rows():
        writer.writerow([row[0]] + [repr(float(v)) for v in row[1:]])
    return buf.getvalue()


def write_report_csv(report, path):
    with open(path, "w", newline="") as fh:
        fh.write(report_csv(report))


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        f = float(obj)
        return f if math.isfinite(f) else str(f)
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    return obj


def write_json(obj, path):
    with open(path, "w") as fh:
        json.dump(_jsonable(obj), fh, indent=2, sort_keys=True)
        fh.write("\n")
