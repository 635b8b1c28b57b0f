"""The amortised root-cause ranker network.

A value/position encoder shared by both data regimes, a learned symptom
embedding added to the anomalous stream, L stacked blocks of three
attention operations (sample self-attention on the normal stream,
anomalous-to-normal cross-attention with the same weights, node
self-attention on both streams), and a mean-pool difference decoder that
emits one logit per node.

The two streams are deliberately processed by identical functions: when
the anomalous data equals the normal data and the symptom mask is empty,
the pooled difference is exactly zero and the posterior is uniform.
Padded node columns are masked out of attention, re-zeroed after every
layer norm, and forced to probability zero at the output.
"""

import io
import json
import struct
from dataclasses import dataclass, asdict, field

import numpy as np

from . import tensor as T
from .tensor import Tensor


CHECKPOINT_MAGIC = b"RCKP"
CHECKPOINT_VERSION = 1


@dataclass
class ModelConfig:
    d: int = 160
    n_blocks: int = 8
    heads: int = 8
    mlp_hidden: int = 512
    dropout: float = 0.1
    k_max: int = 100
    # ablation switch: let anomalous samples also appear as keys/values in
    # the cross-attention step (default excludes them)
    int_self_attention: bool = False
    dtype: str = "float64"

    def __post_init__(self):
        if self.d % self.heads != 0:
            raise ValueError(f"d={self.d} not divisible by heads={self.heads}")

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


def parameter_shapes(cfg: ModelConfig):
    """Ordered mapping name -> shape for every learned tensor."""
    d, h = cfg.d, cfg.mlp_hidden
    shapes = {
        "enc_w": (d,),
        "enc_node": (cfg.k_max, d),
        "target_embed": (d,),
    }
    for i in range(cfg.n_blocks):
        p = f"block{i}."
        for op in ("att_sample", "att_node"):
            for proj in ("wq", "wk", "wv", "wo"):
                shapes[p + f"{op}.{proj}"] = (d, d)
                shapes[p + f"{op}.b{proj[1]}"] = (d,)
        for ln in ("ln_sample", "ln_node", "ln_mlp"):
            shapes[p + ln + ".gain"] = (d,)
            shapes[p + ln + ".bias"] = (d,)
        shapes[p + "mlp.w1"] = (d, h)
        shapes[p + "mlp.b1"] = (h,)
        shapes[p + "mlp.w2"] = (h, d)
        shapes[p + "mlp.b2"] = (d,)
    shapes["dec.w1"] = (d, h)
    shapes["dec.b1"] = (h,)
    shapes["dec.w2"] = (h, 1)
    shapes["dec.b2"] = (1,)
    return shapes


def parameter_count(cfg: ModelConfig) -> int:
    return sum(int(np.prod(s)) for s in parameter_shapes(cfg).values())


class ParameterStore:
    """Named learned tensors; checkpoints round-trip bit-exactly."""

    def __init__(self, cfg: ModelConfig, params: dict):
        self.cfg = cfg
        self.params = params

    @classmethod
    def initialize(cls, cfg: ModelConfig, rng: np.random.Generator) -> "ParameterStore":
        dtype = np.float32 if cfg.dtype == "float32" else np.float64
        params = {}
        for name, shape in parameter_shapes(cfg).items():
            if name.endswith(".gain"):
                data = np.ones(shape)
            elif name.endswith((".bias", ".b1", ".b2", ".bq", ".bk", ".bv", ".bo")):
                data = np.zeros(shape)
            elif name.endswith(("enc_node", "target_embed")):
                data = rng.normal(0.0, 0.02, size=shape)
            elif name.endswith("enc_w"):
                data = rng.normal(0.0, 0.1, size=shape)
            else:
                fan_in = shape[0]
                data = rng.normal(0.0, 1.0 / np.sqrt(fan_in), size=shape)
            params[name] = Tensor(data.astype(dtype), requires_grad=True, dtype=dtype, name=name)
        return cls(cfg, params)

    def __getitem__(self, name: str) -> Tensor:
        return self.params[name]

    def names(self):
        return list(self.params)

    def zero_grads(self):
        for p in self.params.values():
            p.grad = None

    def count(self) -> int:
        return sum(p.size for p in self.params.values())

    def checksum(self, prefix: str = "") -> bytes:
        """Byte-level digest used to assert parameters are untouched."""
        import hashlib

        h = hashlib.sha256()
        for name in sorted(self.params):
            if name.startswith(prefix):
                h.update(name.encode())
                h.update(np.ascontiguousarray(self.params[name].data).tobytes())
        return h.digest()

    # --------------------------------------------------------------- io
    def save(self, path) -> None:
        """Versioned flat file: config header then (name, shape, f32 raw)."""
        buf = io.BytesIO()
        buf.write(CHECKPOINT_MAGIC)
        buf.write(struct.pack("<I", CHECKPOINT_VERSION))
        header = json.dumps(self.cfg.to_dict()).encode()
        buf.write(struct.pack("<I", len(header)))
        buf.write(header)
        buf.write(struct.pack("<I", len(self.params)))
        for name, p in self.params.items():
            nb = name.encode()
            buf.write(struct.pack("<I", len(nb)))
            buf.write(nb)
            buf.write(struct.pack("<I", p.ndim))
            buf.write(struct.pack(f"<{p.ndim}q", *p.shape))
            buf.write(np.ascontiguousarray(p.data, dtype=np.float32).tobytes())
        with open(path, "wb") as fh:
            fh.write(buf.getvalue())

    @classmethod
    def load(cls, path) -> "ParameterStore":
        with open(path, "rb") as fh:
            raw = fh.read()
        buf = io.BytesIO(raw)
        if buf.read(4) != CHECKPOINT_MAGIC:
            raise ValueError(f"{path}: not a checkpoint file")
        (version,) = struct.unpack("<I", buf.read(4))
        if version != CHECKPOINT_VERSION:
            raise ValueError(f"{path}: checkpoint version {version}, expected {CHECKPOINT_VERSION}")
        (hlen,) = struct.unpack("<I", buf.read(4))
        cfg = ModelConfig.from_dict(json.loads(buf.read(hlen).decode()))
        dtype = np.float32 if cfg.dtype == "float32" else np.float64
        expected = parameter_shapes(cfg)
        (n,) = struct.unpack("<I", buf.read(4))
        params = {}
        for _ in range(n):
            (nlen,) = struct.unpack("<I", buf.read(4))
            name = buf.read(nlen).decode()
            (ndim,) = struct.unpack("<I", buf.read(4))
            shape = struct.unpack(f"<{ndim}q", buf.read(8 * ndim))
            count = int(np.prod(shape)) if shape else 1
            data = np.frombuffer(buf.read(4 * count), dtype=np.float32).reshape(shape)
            if name not in expected:
                raise ValueError(f"{path}: unknown parameter {name!r} for this config")
            if tuple(shape) != tuple(expected[name]):
                raise ValueError(
                    f"{path}: parameter {name!r} has shape {shape}, config expects {expected[name]}"
                )
            params[name] = Tensor(data.astype(dtype), requires_grad=True, dtype=dtype, name=name)
        missing = set(expected) - set(params)
        if missing:
            raise ValueError(f"{path}: checkpoint missing parameters {sorted(missing)[:4]}...")
        return cls(cfg, params)


# ---------------------------------------------------------------------------
# forward pass


def _col_mask(k_real: int, k_max: int, dtype) -> np.ndarray:
    m = np.zeros((1, k_max, 1), dtype=dtype)
    m[0, :k_real, 0] = 1.0
    return m


def encode(episode, store: ParameterStore):
    """Embed both data matrices: H[s,k] = w * x[s,k] + e_node[k].

    The symptom embedding is added to the anomalous stream at every
    sample row, only in the node columns flagged by the mask. Padded
    columns are explicitly re-zeroed.
    """
    cfg = store.cfg
    dtype = np.float32 if cfg.dtype == "float32" else np.float64
    keep = _col_mask(episode.k_real, cfg.k_max, dtype)

    def embed(data):
        x = Tensor(np.ascontiguousarray(data, dtype=dtype)[:, :, None])
        return T.mul(T.add(T.mul(x, store["enc_w"]), store["enc_node"]), keep)

    h_obs = embed(episode.obs)
    h_int = embed(episode.int_)
    sym = np.zeros((1, cfg.k_max, 1), dtype=dtype)
    sym[0, : len(episode.mask), 0] = episode.mask.astype(dtype)
    h_int = T.add(h_int, T.mul(Tensor(sym), store["target_embed"]))
    return h_obs, h_int


def mace_block(h_obs, h_int, k_real, store: ParameterStore, block: int,
               train_rng=None):
    """One refinement block over the paired streams.

    (1) per node, normal samples attend among themselves; (2) anomalous
    samples attend to the same normal keys/values with the same weights;
    (3) every sample attends across node positions with padding masked
    out. Each step is residual + layer norm (post-norm); one shared MLP
    closes the block. Both streams pass through identical functions.
    """
    cfg = store.cfg
    p = f"block{block}."
    heads = cfg.heads
    dtype = h_obs.dtype
    keep = _col_mask(k_real, cfg.k_max, dtype)
    rate = cfg.dropout if train_rng is not None else 0.0

    def drop(x):
        return T.dropout(x, rate, train_rng)

    def rezero(x):
        return T.mul(x, keep)

    def out_proj(x, op):
        return drop(T.add(T.matmul(x, store[p + op + ".wo"]), store[p + op + ".bo"]))

    # (1) + (2): sample attention, node axis as batch; both streams read
    # the block-input normal stream as keys/values
    xo = T.transpose(h_obs, (1, 0, 2))  # [K, n_obs, d]
    xi = T.transpose(h_int, (1, 0, 2))  # [K, n_int, d]
    op = "att_sample"
    keys = T.add(T.matmul(xo, store[p + op + ".wk"]), store[p + op + ".bk"])
    vals = T.add(T.matmul(xo, store[p + op + ".wv"]), store[p + op + ".bv"])
    q_obs = T.add(T.matmul(xo, store[p + op + ".wq"]), store[p + op + ".bq"])
    q_int = T.add(T.matmul(xi, store[p + op + ".wq"]), store[p + op + ".bq"])
    att_obs = out_proj(T.attention(q_obs, keys, vals, heads=heads), op)
    if cfg.int_self_attention:
        keys_i = T.concat([keys, T.add(T.matmul(xi, store[p + op + ".wk"]), store[p + op + ".bk"])], axis=1)
        vals_i = T.concat([vals, T.add(T.matmul(xi, store[p + op + ".wv"]), store[p + op + ".bv"])], axis=1)
        att_int = out_proj(T.attention(q_int, keys_i, vals_i, heads=heads), op)
    else:
        att_int = out_proj(T.attention(q_int, keys, vals, heads=heads), op)
    xo = T.layer_norm(T.add(xo, att_obs), store[p + "ln_sample.gain"], store[p + "ln_sample.bias"])
    xi = T.layer_norm(T.add(xi, att_int), store[p + "ln_sample.gain"], store[p + "ln_sample.bias"])
    h_obs = rezero(T.transpose(xo, (1, 0, 2)))
    h_int = rezero(T.transpose(xi, (1, 0, 2)))

    # (3) node self-attention on both streams, shared weights, pad keys masked
    def node_att(stream):
        n = stream.shape[0]
        key_mask = np.broadcast_to(keep[:, :, 0].astype(bool), (n, cfg.k_max))
        op = "att_node"
        q = T.add(T.matmul(stream, store[p + op + ".wq"]), store[p + op + ".bq"])
        k = T.add(T.matmul(stream, store[p + op + ".wk"]), store[p + op + ".bk"])
        v = T.add(T.matmul(stream, store[p + op + ".wv"]), store[p + op + ".bv"])
        att = out_proj(T.attention(q, k, v, key_mask=key_mask, heads=heads), op)
        out = T.layer_norm(T.add(stream, att), store[p + "ln_node.gain"], store[p + "ln_node.bias"])
        return rezero(out)

    h_obs = node_att(h_obs)
    h_int = node_att(h_int)

    # shared MLP
    def mlp(stream):
        h = T.relu(T.add(T.matmul(stream, store[p + "mlp.w1"]), store[p + "mlp.b1"]))
        h = drop(T.add(T.matmul(h, store[p + "mlp.w2"]), store[p + "mlp.b2"]))
        out = T.layer_norm(T.add(stream, h), store[p + "ln_mlp.gain"], store[p + "ln_mlp.bias"])
        return rezero(out)

    return mlp(h_obs), mlp(h_int)


def forward(episode, store: ParameterStore, train_rng=None) -> Tensor:
    """Full pass: raw logits over all node slots (pads still live).

    Use `predict_proba`/`softmax_cross_entropy` with the episode's valid
    mask so padded slots end up with exactly zero probability.
    """
    cfg = store.cfg
    if episode.obs.shape[1] != cfg.k_max:
        raise ValueError(
            f"episode padded to {episode.obs.shape[1]} nodes, model expects {cfg.k_max}"
        )
    h_obs, h_int = encode(episode, store)
    for i in range(cfg.n_blocks):
        h_obs, h_int = mace_block(h_obs, h_int, episode.k_real, store, i, train_rng)
    delta = T.sub(T.mean(h_int, axis=0), T.mean(h_obs, axis=0))  # [K, d]
    h = T.relu(T.add(T.matmul(delta, store["dec.w1"]), store["dec.b1"]))
    logits = T.reshape(T.add(T.matmul(h, store["dec.w2"]), store["dec.b2"]), (cfg.k_max,))
    return logits


def valid_mask(episode, k_max: int) -> np.ndarray:
    m = np.zeros(k_max, dtype=bool)
    m[: episode.k_real] = True
    return m


def predict_proba(episode, store: ParameterStore) -> np.ndarray:
    """Posterior over node slots; padded slots are exactly zero."""
    logits = forward(episode, store)
    valid = valid_mask(episode, store.cfg.k_max)
    logp = T.log_softmax_masked(logits.data, valid)
    probs = np.where(valid, np.exp(logp), 0.0)
    return probs


@dataclass
class RankedResult:
    """Per-node scores plus a total order over the real nodes."""

    scores: np.ndarray
    order: list = field(default=None)
    method: str = ""

    def __post_init__(self):
        self.scores = np.asarray(self.scores, dtype=float)
        if self.order is None:
            self.order = rank_order(self.scores)

    def rank_of(self, node: int) -> int:
        return self.order.index(node)


def rank_order(scores) -> list:
    """Descending-score total order; ties broken by ascending node index."""
    scores = np.asarray(scores)
    return [int(i) for i in np.argsort(-scores, kind="stable")]


def predict_ranking(logits, k_real: int, method: str = "prim") -> RankedResult:
    """Total order over the first `k_real` nodes from logits or probs."""
    if isinstance(logits, Tensor):
        logits = logits.data
    scores = np.asarray(logits, dtype=float)[:k_real]
    return RankedResult(scores=scores, method=method)
