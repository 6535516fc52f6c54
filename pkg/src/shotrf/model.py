"""RF regression network in plain numpy.

Layout, for a batch X of shape (N, D)::

    xb = gamma * (X - mu) / sqrt(var + eps) + beta          batch norm
    g  = sigmoid(relu(xb @ A1 + a1) @ A2 + a2)              attention gate, D -> D/4 -> D
    h  = relu((xb * g) @ W_in + b_in)                       D -> H
    h  = relu(h + relu(h @ W1 + b1) @ W2 + b2)              R residual blocks, H -> H
    y  = h @ w_head + b_head [+ X[:, skip]]                 H -> 1

The optional skip adds one raw input feature straight to the output, so the
network learns a correction to that input rather than the RF itself.  The
second-pass model uses it on the first-pass RF it receives as feedback.

Training mode normalizes with batch statistics, inference with the running
ones, and only inference clamps y to [0, 51].  Gradients are exact
reverse-mode derivatives of the mean squared error.

Model file layout (all integers unsigned little-endian)::

    8 bytes   magic b"SHOTRFNN"
    u32       format version (1)
    u32 + n   schema_version, UTF-8
    4 x u32   input_dim, hidden, blocks, attention width
    f64       batch-norm epsilon
    i32       skip input index, -1 for none
    u32       tensor count T
    T x       u16 name length, name (ASCII), u8 ndim, ndim x u32 dims
    ...       tensor data in header order, float64 little-endian, C order
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

RF_MIN, RF_MAX = 0.0, 51.0
MAGIC = b"SHOTRFNN"
FORMAT_VERSION = 1


class ModelFormatError(ValueError):
    pass


class SchemaMismatch(ValueError):
    pass


class TrainingDiverged(RuntimeError):
    def __init__(self, epoch: int):
        super().__init__(f"training loss became non-finite in epoch {epoch}")
        self.epoch = epoch


@dataclass
class TrainConfig:
    learning_rate: float = 1e-4
    batch_size: int = 64
    epochs: int = 100
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    seed: int = 0
    bn_momentum: float = 0.1
    bn_eps: float = 1e-5
    hidden: int = 256
    blocks: int = 3
    # decoupled (AdamW-style) decay on weight matrices; 0 disables
    weight_decay: float = 0.0
    # input feature added to the output (see module docstring); None disables
    skip_input: int | None = None

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")


@dataclass(frozen=True)
class LabeledExample:
    features: np.ndarray
    rf_label: float

    def __post_init__(self):
        if not RF_MIN <= self.rf_label <= RF_MAX:
            raise ValueError(f"rf_label {self.rf_label} outside [0, 51]")


@dataclass
class ModelParams:
    input_dim: int
    hidden: int
    blocks: int
    attn_dim: int
    tensors: dict[str, np.ndarray]
    schema_version: str = ""
    bn_eps: float = 1e-5
    skip_input: int | None = None
    loss_trace: list[float] = field(default_factory=list, compare=False)

    def __getitem__(self, name: str) -> np.ndarray:
        return self.tensors[name]

    def copy(self) -> "ModelParams":
        return replace(
            self,
            tensors={k: v.copy() for k, v in self.tensors.items()},
            loss_trace=list(self.loss_trace),
        )

    def trainable(self) -> list[str]:
        return [k for k in tensor_names(self.blocks) if not k.startswith("bn_running")]

    def validate(self) -> None:
        expected = tensor_shapes(self.input_dim, self.hidden, self.blocks, self.attn_dim)
        if set(expected) != set(self.tensors):
            raise ModelFormatError("tensor set does not match the architecture")
        for name, shape in expected.items():
            t = self.tensors[name]
            if t.shape != shape:
                raise ModelFormatError(f"tensor {name} has shape {t.shape}, expected {shape}")
            if not np.all(np.isfinite(t)):
                raise ModelFormatError(f"tensor {name} has non-finite entries")
        if np.any(self.tensors["bn_running_var"] <= 0):
            raise ModelFormatError("running variance must be positive")
        if self.skip_input is not None and not 0 <= self.skip_input < self.input_dim:
            raise ModelFormatError(f"skip input {self.skip_input} outside the feature range")


def tensor_names(blocks: int) -> list[str]:
    names = ["bn_gamma", "bn_beta", "bn_running_mean", "bn_running_var",
             "att_w1", "att_b1", "att_w2", "att_b2", "in_w", "in_b"]
    for r in range(blocks):
        names += [f"res{r}_w1", f"res{r}_b1", f"res{r}_w2", f"res{r}_b2"]
    return names + ["head_w", "head_b"]


def tensor_shapes(d: int, h: int, blocks: int, a: int) -> dict[str, tuple[int, ...]]:
    shapes = {
        "bn_gamma": (d,), "bn_beta": (d,), "bn_running_mean": (d,), "bn_running_var": (d,),
        "att_w1": (d, a), "att_b1": (a,), "att_w2": (a, d), "att_b2": (d,),
        "in_w": (d, h), "in_b": (h,),
    }
    for r in range(blocks):
        shapes.update({f"res{r}_w1": (h, h), f"res{r}_b1": (h,), f"res{r}_w2": (h, h), f"res{r}_b2": (h,)})
    shapes.update({"head_w": (h,), "head_b": (1,)})
    return {k: shapes[k] for k in tensor_names(blocks)}


def init_params(
    input_dim: int,
    hidden: int = 256,
    blocks: int = 3,
    seed: int = 0,
    schema_version: str = "",
    bn_eps: float = 1e-5,
    skip_input: int | None = None,
) -> ModelParams:
    """He-initialized trunk; residual branches start small, gate starts at 0.5."""
    if input_dim < 1 or hidden < 1 or blocks < 0:
        raise ValueError("invalid architecture")
    rng = np.random.default_rng(seed)
    a = max(1, input_dim // 4)

    def he(fan_in, shape, scale=1.0):
        return rng.normal(0.0, scale * np.sqrt(2.0 / fan_in), size=shape)

    t = {
        "bn_gamma": np.ones(input_dim),
        "bn_beta": np.zeros(input_dim),
        "bn_running_mean": np.zeros(input_dim),
        "bn_running_var": np.ones(input_dim),
        "att_w1": he(input_dim, (input_dim, a)),
        "att_b1": np.zeros(a),
        "att_w2": he(a, (a, input_dim), 0.1),
        "att_b2": np.zeros(input_dim),
        "in_w": he(input_dim, (input_dim, hidden)),
        "in_b": np.zeros(hidden),
    }
    for r in range(blocks):
        t[f"res{r}_w1"] = he(hidden, (hidden, hidden))
        t[f"res{r}_b1"] = np.zeros(hidden)
        t[f"res{r}_w2"] = he(hidden, (hidden, hidden), 0.1)
        t[f"res{r}_b2"] = np.zeros(hidden)
    t["head_w"] = he(hidden, (hidden,), 0.1)
    t["head_b"] = np.zeros(1)
    m = ModelParams(input_dim, hidden, blocks, a, t, schema_version, bn_eps, skip_input)
    if skip_input is not None and not 0 <= skip_input < input_dim:
        raise ValueError(f"skip input {skip_input} outside the feature range")
    return m


def sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z, dtype=np.float64)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def _as_batch(m: ModelParams, x) -> np.ndarray:
    X = np.asarray(getattr(x, "values", x), dtype=np.float64)
    if X.ndim == 1:
        X = X[None, :]
    if X.ndim != 2 or X.shape[1] != m.input_dim:
        raise ValueError(f"expected {m.input_dim} features, got shape {X.shape}")
    if not np.all(np.isfinite(X)):
        raise ValueError("non-finite feature value")
    return X


def _forward(m: ModelParams, X: np.ndarray, train: bool):
    t = m.tensors
    if train:
        mu = X.mean(axis=0)
        var = X.var(axis=0)
    else:
        mu, var = t["bn_running_mean"], t["bn_running_var"]
    inv_std = 1.0 / np.sqrt(var + m.bn_eps)
    xhat = (X - mu) * inv_std
    xb = t["bn_gamma"] * xhat + t["bn_beta"]

    a1 = xb @ t["att_w1"] + t["att_b1"]
    h1 = np.maximum(a1, 0.0)
    gate = sigmoid(h1 @ t["att_w2"] + t["att_b2"])
    xa = xb * gate

    z0 = xa @ t["in_w"] + t["in_b"]
    h = np.maximum(z0, 0.0)
    block_cache = []
    for r in range(m.blocks):
        u = h @ t[f"res{r}_w1"] + t[f"res{r}_b1"]
        v = np.maximum(u, 0.0)
        s = h + v @ t[f"res{r}_w2"] + t[f"res{r}_b2"]
        block_cache.append((h, u, v, s))
        h = np.maximum(s, 0.0)
    y = h @ t["head_w"] + t["head_b"][0]
    if m.skip_input is not None:
        y = y + X[:, m.skip_input]
    cache = dict(mu=mu, var=var, xhat=xhat, xb=xb, a1=a1, h1=h1, gate=gate, xa=xa,
                 z0=z0, blocks=block_cache, h=h)
    return y, cache


def forward(m: ModelParams, x, mode: str = "infer") -> np.ndarray | float:
    """Predicted RF for one vector (returns float) or a batch (returns array)."""
    if mode not in ("train", "infer"):
        raise ValueError("mode must be 'train' or 'infer'")
    single = np.ndim(getattr(x, "values", x)) == 1
    X = _as_batch(m, x)
    y, _ = _forward(m, X, train=mode == "train")
    if mode == "infer":
        y = np.clip(y, RF_MIN, RF_MAX)
    return float(y[0]) if single else y


def attention_mask(m: ModelParams, x) -> np.ndarray:
    X = _as_batch(m, x)
    return _forward(m, X, train=False)[1]["gate"]


def suppress_feature(m: ModelParams, j: int) -> ModelParams:
    """Copy of `m` whose gate for feature j is exactly 0 and which ignores j in the gate."""
    out = m.copy()
    t = out.tensors
    t["att_w1"][j, :] = 0.0
    t["att_w2"][:, j] = 0.0
    t["att_b2"][j] = -1e4  # exp(-1e4) underflows to 0
    return out


def loss(predictions: Sequence[float], labels: Sequence[float]) -> float:
    p = np.asarray(predictions, dtype=np.float64).ravel()
    g = np.asarray(labels, dtype=np.float64).ravel()
    if p.size == 0:
        raise ValueError("loss of an empty batch")
    if p.size != g.size:
        raise ValueError("predictions and labels differ in length")
    d = p - g
    return float(np.mean(d * d))


def gradients(m: ModelParams, X, labels) -> tuple[float, dict[str, np.ndarray]]:
    """MSE loss and its gradient w.r.t. every trainable tensor (train-mode BN)."""
    X = _as_batch(m, X)
    yt = np.asarray(labels, dtype=np.float64).ravel()
    if X.shape[0] == 0 or yt.size != X.shape[0]:
        raise ValueError("batch and labels must be nonempty and of equal length")
    t = m.tensors
    y, c = _forward(m, X, train=True)
    n = X.shape[0]
    diff = y - yt
    value = float(np.mean(diff * diff))
    g: dict[str, np.ndarray] = {}

    dy = 2.0 * diff / n
    g["head_b"] = np.array([dy.sum()])
    g["head_w"] = c["h"].T @ dy
    dh = np.outer(dy, t["head_w"])
    for r in reversed(range(m.blocks)):
        h_in, u, v, s = c["blocks"][r]
        ds = dh * (s > 0)
        g[f"res{r}_b2"] = ds.sum(axis=0)
        g[f"res{r}_w2"] = v.T @ ds
        du = (ds @ t[f"res{r}_w2"].T) * (u > 0)
        g[f"res{r}_b1"] = du.sum(axis=0)
        g[f"res{r}_w1"] = h_in.T @ du
        dh = ds + du @ t[f"res{r}_w1"].T
    dz0 = dh * (c["z0"] > 0)
    g["in_b"] = dz0.sum(axis=0)
    g["in_w"] = c["xa"].T @ dz0
    dxa = dz0 @ t["in_w"].T

    gate = c["gate"]
    dgate = dxa * c["xb"]
    dxb = dxa * gate
    da2 = dgate * gate * (1.0 - gate)
    g["att_b2"] = da2.sum(axis=0)
    g["att_w2"] = c["h1"].T @ da2
    da1 = (da2 @ t["att_w2"].T) * (c["a1"] > 0)
    g["att_b1"] = da1.sum(axis=0)
    g["att_w1"] = c["xb"].T @ da1
    dxb = dxb + da1 @ t["att_w1"].T

    g["bn_beta"] = dxb.sum(axis=0)
    g["bn_gamma"] = (dxb * c["xhat"]).sum(axis=0)
    return value, g


def _batches(n: int, size: int, rng: np.random.Generator) -> list[np.ndarray]:
    order = rng.permutation(n)
    parts = [order[i : i + size] for i in range(0, n, size)]
    # a lone trailing example would get degenerate batch statistics
    if len(parts) > 1 and parts[-1].size == 1:
        parts[-2] = np.concatenate([parts[-2], parts[-1]])
        parts.pop()
    return parts


def train(
    dataset: Sequence[LabeledExample],
    cfg: TrainConfig | None = None,
    schema_version: str = "",
    init: ModelParams | None = None,
) -> ModelParams:
    """Adam on MSE over seeded mini-batches; the result carries `loss_trace` per epoch."""
    cfg = cfg or TrainConfig()
    if not dataset:
        raise ValueError("empty training set")
    X = np.stack([np.asarray(getattr(e.features, "values", e.features), dtype=np.float64) for e in dataset])
    y = np.array([e.rf_label for e in dataset], dtype=np.float64)
    if not np.all(np.isfinite(X)):
        raise ValueError("non-finite feature value in training set")

    rng = np.random.default_rng(cfg.seed)
    if init is None:
        m = init_params(X.shape[1], cfg.hidden, cfg.blocks, int(rng.integers(2**31)),
                        schema_version, cfg.bn_eps, cfg.skip_input)
        base = X[:, cfg.skip_input] if cfg.skip_input is not None else 0.0
        m.tensors["head_b"][0] = np.mean(y - base)
    else:
        m = init.copy()
        if m.input_dim != X.shape[1]:
            raise ValueError("initial model does not match the feature dimension")
    t = m.tensors
    names = m.trainable()
    mom1 = {k: np.zeros_like(t[k]) for k in names}
    mom2 = {k: np.zeros_like(t[k]) for k in names}
    b1, b2 = cfg.adam_beta1, cfg.adam_beta2
    step = 0
    for epoch in range(cfg.epochs):
        total = 0.0
        for idx in _batches(len(y), cfg.batch_size, rng):
            xb = X[idx]
            value, grads = gradients(m, xb, y[idx])
            if not np.isfinite(value):
                raise TrainingDiverged(epoch)
            total += value * idx.size
            step += 1
            lr_t = cfg.learning_rate * np.sqrt(1 - b2**step) / (1 - b1**step)
            for k in names:
                gk = grads[k]
                mom1[k] *= b1
                mom1[k] += (1 - b1) * gk
                mom2[k] *= b2
                mom2[k] += (1 - b2) * gk * gk
                t[k] -= lr_t * mom1[k] / (np.sqrt(mom2[k]) + cfg.adam_eps)
                if cfg.weight_decay and t[k].ndim == 2:
                    t[k] *= 1.0 - cfg.learning_rate * cfg.weight_decay
            n = idx.size
            bvar = xb.var(axis=0) * (n / (n - 1) if n > 1 else 1.0)
            mo = cfg.bn_momentum
            t["bn_running_mean"] *= 1 - mo
            t["bn_running_mean"] += mo * xb.mean(axis=0)
            t["bn_running_var"] *= 1 - mo
            t["bn_running_var"] += mo * bvar
        epoch_loss = total / len(y)
        if not np.isfinite(epoch_loss) or not all(np.all(np.isfinite(t[k])) for k in names):
            raise TrainingDiverged(epoch)
        m.loss_trace.append(epoch_loss)
    return m


def predict(m: ModelParams, X) -> np.ndarray:
    return np.atleast_1d(forward(m, np.atleast_2d(np.asarray(X, dtype=np.float64)), "infer"))


# --- serialization -------------------------------------------------------------


def save_model(m: ModelParams, path: str | Path) -> None:
    m.validate()
    names = tensor_names(m.blocks)
    schema = m.schema_version.encode("utf-8")
    out = bytearray(MAGIC)
    out += struct.pack("<I", FORMAT_VERSION)
    out += struct.pack("<I", len(schema)) + schema
    out += struct.pack("<4I", m.input_dim, m.hidden, m.blocks, m.attn_dim)
    out += struct.pack("<d", m.bn_eps)
    out += struct.pack("<i", -1 if m.skip_input is None else m.skip_input)
    out += struct.pack("<I", len(names))
    for name in names:
        arr = m.tensors[name]
        raw = name.encode("ascii")
        out += struct.pack("<H", len(raw)) + raw
        out += struct.pack("<B", arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape)
    for name in names:
        out += np.ascontiguousarray(m.tensors[name], dtype="<f8").tobytes()
    Path(path).write_bytes(bytes(out))


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise ModelFormatError("truncated model file")
        chunk = self.data[self.pos : self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def load_model(path: str | Path, expected_schema: str | None = None) -> ModelParams:
    data = Path(path).read_bytes()
    r = _Reader(data)
    if len(data) < len(MAGIC) or r.take(len(MAGIC)) != MAGIC:
        raise ModelFormatError("bad magic")
    (version,) = r.unpack("<I")
    if version != FORMAT_VERSION:
        raise ModelFormatError(f"unsupported format version {version}")
    (slen,) = r.unpack("<I")
    try:
        schema = r.take(slen).decode("utf-8")
    except UnicodeDecodeError:
        raise ModelFormatError("schema_version is not valid UTF-8") from None
    d, h, blocks, a = r.unpack("<4I")
    (bn_eps,) = r.unpack("<d")
    if not bn_eps > 0:
        raise ModelFormatError("batch-norm epsilon must be positive")
    (skip,) = r.unpack("<i")
    if skip < -1:
        raise ModelFormatError(f"invalid skip input index {skip}")
    (count,) = r.unpack("<I")
    expected = tensor_shapes(d, h, blocks, a)
    if count != len(expected):
        raise ModelFormatError(f"expected {len(expected)} tensors, header lists {count}")
    header = []
    for _ in range(count):
        (nlen,) = r.unpack("<H")
        name = r.take(nlen).decode("ascii", "replace")
        (ndim,) = r.unpack("<B")
        shape = r.unpack(f"<{ndim}I")
        if name not in expected or expected[name] != tuple(shape):
            raise ModelFormatError(f"tensor {name} with shape {tuple(shape)} is inconsistent")
        header.append((name, tuple(shape)))
    tensors = {}
    for name, shape in header:
        size = int(np.prod(shape))
        tensors[name] = np.frombuffer(r.take(8 * size), dtype="<f8").astype(np.float64).reshape(shape)
    if r.pos != len(data):
        raise ModelFormatError("trailing bytes after tensor data")
    m = ModelParams(d, h, blocks, a, tensors, schema, bn_eps, None if skip == -1 else skip)
    m.validate()
    if expected_schema is not None and schema != expected_schema:
        raise SchemaMismatch(
            f"model expects feature schema {schema!r}, pipeline produces {expected_schema!r}"
        )
    return m
