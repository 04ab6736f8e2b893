"""Encoder-decoder LSTM with an Anglicism classifier head on the encoder summary.

Parameter inventory for embedding size E, hidden size H, grapheme/phoneme
vocabulary sizes Vg/Vp and classifier widths C1, C2::

    embeddings      (Vg + Vp) * E
    encoder layer 0  E*4H + H*4H + 4H
    encoder layer 1  H*4H + H*4H + 4H
    decoder          same as encoder
    output proj.     H*Vp + Vp
    classifier       2H*C1 + C1 + C1*C2 + C2 + C2 + 1

so ``parameter_count`` is
``(Vg+Vp)E + 2(4H(E+H) + 4H + 8H^2 + 4H) + (H+1)Vp + 2H C1 + C1 + C1 C2 + 2 C2 + 1``.
"""
from __future__ import annotations

import json
import struct
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from . import numcore as nc
from .lexicon import Batch, Vocabulary
from .numcore import Tensor
from .seeding import stream

LAYERS = 2
MAGIC = b"MTLG2P01"
FORMAT_VERSION = 1


@dataclass
class ModelConfig:
    grapheme_vocab: int
    phoneme_vocab: int
    embed_dim: int = 500
    hidden_dim: int = 500
    cls_hidden1: int = 100
    cls_hidden2: int = 100
    dropout: float = 0.2
    prelu_alpha: float = 1.0
    alpha: float | None = None  # None: unweighted sum of both losses
    init_scale: float = 0.05

    def __post_init__(self):
        for name in ("grapheme_vocab", "phoneme_vocab", "embed_dim", "hidden_dim", "cls_hidden1", "cls_hidden2"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        check_alpha(self.alpha)

    @property
    def layers(self) -> int:
        return LAYERS

    @property
    def feature_dim(self) -> int:
        return 2 * self.hidden_dim


def check_alpha(alpha) -> None:
    if alpha is not None and not 0.0 <= alpha <= 1.0:
        raise ValueError(f"alpha must lie in [0, 1] or be None (unweighted), got {alpha}")


def param_shapes(cfg: ModelConfig) -> list[tuple[str, tuple[int, ...]]]:
    E, H = cfg.embed_dim, cfg.hidden_dim
    shapes = [("emb.grapheme", (cfg.grapheme_vocab, E)), ("emb.phoneme", (cfg.phoneme_vocab, E))]
    for side in ("enc", "dec"):
        for layer in range(LAYERS):
            n_in = E if layer == 0 else H
            shapes += [
                (f"{side}.{layer}.w_x", (n_in, 4 * H)),
                (f"{side}.{layer}.w_h", (H, 4 * H)),
                (f"{side}.{layer}.b", (4 * H,)),
            ]
    shapes += [
        ("out.w", (H, cfg.phoneme_vocab)),
        ("out.b", (cfg.phoneme_vocab,)),
        ("cls.1.w", (2 * H, cfg.cls_hidden1)),
        ("cls.1.b", (cfg.cls_hidden1,)),
        ("cls.2.w", (cfg.cls_hidden1, cfg.cls_hidden2)),
        ("cls.2.b", (cfg.cls_hidden2,)),
        ("cls.out.w", (cfg.cls_hidden2, 1)),
        ("cls.out.b", (1,)),
    ]
    return shapes


def parameter_count(cfg: ModelConfig) -> int:
    E, H, Vg, Vp = cfg.embed_dim, cfg.hidden_dim, cfg.grapheme_vocab, cfg.phoneme_vocab
    C1, C2 = cfg.cls_hidden1, cfg.cls_hidden2
    lstm_stack = 4 * H * (E + H) + 4 * H + 8 * H * H + 4 * H
    return (Vg + Vp) * E + 2 * lstm_stack + (H + 1) * Vp + 2 * H * C1 + C1 + C1 * C2 + 2 * C2 + 1


class ModelParams:
    """Named parameter tensors in a fixed order."""

    def __init__(self, tensors: dict[str, Tensor]):
        self.tensors = tensors

    def __getitem__(self, name: str) -> Tensor:
        return self.tensors[name]

    def __iter__(self):
        return iter(self.tensors.values())

    def __len__(self):
        return len(self.tensors)

    def names(self) -> list[str]:
        return list(self.tensors)

    def group(self, prefix: str) -> list[Tensor]:
        return [t for n, t in self.tensors.items() if n.startswith(prefix)]

    def size(self) -> int:
        return sum(t.size for t in self.tensors.values())

    @property
    def dtype(self):
        return next(iter(self.tensors.values())).dtype

    def copy(self) -> ModelParams:
        return ModelParams({n: Tensor(t.data.copy(), requires_grad=t.requires_grad, name=n) for n, t in self.tensors.items()})

    def astype(self, dtype) -> ModelParams:
        return ModelParams({n: Tensor(t.data.astype(dtype), requires_grad=t.requires_grad, name=n) for n, t in self.tensors.items()})


def init_params(cfg: ModelConfig, seed: int, dtype=np.float32) -> ModelParams:
    """Weights ~ U(-init_scale, init_scale); biases zero except LSTM forget gates at 1."""
    rng = stream(seed, "init")
    H = cfg.hidden_dim
    tensors = {}
    for name, shape in param_shapes(cfg):
        if name.endswith(".b"):
            data = np.zeros(shape)
            if name.startswith(("enc.", "dec.")):
                data[H : 2 * H] = 1.0
        else:
            data = rng.uniform(-cfg.init_scale, cfg.init_scale, size=shape)
        tensors[name] = Tensor(data.astype(dtype), requires_grad=True, name=name)
    return ModelParams(tensors)


# ---------------------------------------------------------------------------
# forward pass


@dataclass
class EncoderState:
    layers: list[tuple[Tensor, Tensor]]  # per layer (h, c), each (B, H)
    feature: Tensor  # (B, 2H): concat(c_top, h_top)


def lstm_cell_step(x: Tensor, h_prev: Tensor, c_prev: Tensor, w_x: Tensor, w_h: Tensor, b: Tensor):
    """One LSTM step. Gate columns are laid out as [input | forget | output | candidate]."""
    H = h_prev.shape[-1]
    z = nc.add(nc.affine(x, w_x, b), nc.matmul(h_prev, w_h))
    gates = nc.sigmoid(nc.columns(z, 0, 3 * H))
    g = nc.tanh(nc.columns(z, 3 * H, 4 * H))
    i = nc.columns(gates, 0, H)
    f = nc.columns(gates, H, 2 * H)
    o = nc.columns(gates, 2 * H, 3 * H)
    c = nc.add(nc.mul(f, c_prev), nc.mul(i, g))
    h = nc.mul(o, nc.tanh(c))
    return h, c


def _layer_weights(params: ModelParams, side: str, layer: int):
    return params[f"{side}.{layer}.w_x"], params[f"{side}.{layer}.w_h"], params[f"{side}.{layer}.b"]


def _as_batch(indices, mask=None):
    idx = np.asarray(indices, dtype=np.int64)
    if idx.ndim == 1:
        idx = idx[None, :]
        mask = None if mask is None else np.asarray(mask)[None, :]
    if mask is None:
        mask = np.ones(idx.shape, dtype=bool)
    return idx, np.asarray(mask, dtype=bool)


def encode(encoder_input, params: ModelParams, mask=None) -> EncoderState:
    """Run both encoder layers over (B, T) indices, freezing each row's state past its last real step."""
    idx, mask = _as_batch(encoder_input, mask)
    B, T = idx.shape
    H = params["enc.0.w_h"].shape[0]
    zeros = Tensor(np.zeros((B, H), dtype=params.dtype))
    states = [(zeros, zeros) for _ in range(LAYERS)]
    emb = params["emb.grapheme"]
    for t in range(T):
        x = nc.embedding(emb, idx[:, t])
        live = mask[:, t : t + 1]
        full = live.all()
        for layer in range(LAYERS):
            h_prev, c_prev = states[layer]
            h, c = lstm_cell_step(x, h_prev, c_prev, *_layer_weights(params, "enc", layer))
            if not full:
                h = nc.where(live, h, h_prev)
                c = nc.where(live, c, c_prev)
            states[layer] = (h, c)
            x = h
    h_top, c_top = states[-1]
    return EncoderState(states, nc.concat([c_top, h_top], axis=1))


def decoder_step(params: ModelParams, states: list[tuple[Tensor, Tensor]], tokens):
    """Feed one phoneme per row; returns (new states, (B, Vp) log-probs)."""
    x = nc.embedding(params["emb.phoneme"], np.asarray(tokens, dtype=np.int64))
    new_states = []
    for layer in range(LAYERS):
        h, c = lstm_cell_step(x, *states[layer], *_layer_weights(params, "dec", layer))
        new_states.append((h, c))
        x = h
    return new_states, nc.log_softmax(nc.affine(x, params["out.w"], params["out.b"]), axis=1)


def decode_teacher_forced(state: EncoderState, decoder_input, params: ModelParams) -> Tensor:
    """Log-prob tensor (B, T, Vp) for gold-fed decoder inputs, starting from the encoder's final states."""
    idx, _ = _as_batch(decoder_input)
    B, T = idx.shape
    states = list(state.layers)
    emb = params["emb.phoneme"]
    tops = []
    for t in range(T):
        x = nc.embedding(emb, idx[:, t])
        for layer in range(LAYERS):
            h, c = lstm_cell_step(x, *states[layer], *_layer_weights(params, "dec", layer))
            states[layer] = (h, c)
            x = h
        tops.append(x)
    H = tops[0].shape[1]
    flat = nc.reshape(nc.stack(tops, axis=1), (B * T, H))
    logp = nc.log_softmax(nc.affine(flat, params["out.w"], params["out.b"]), axis=1)
    return nc.reshape(logp, (B, T, -1))


def classify(state: EncoderState, params: ModelParams, mode: str = "eval", rng=None, dropout: float = 0.2, prelu_alpha: float = 1.0) -> Tensor:
    """Anglicism probability per row, shape (B,). Dropout only in train mode."""
    if mode not in ("train", "eval"):
        raise ValueError(f"mode must be 'train' or 'eval', got {mode!r}")
    h = nc.relu(nc.affine(state.feature, params["cls.1.w"], params["cls.1.b"]))
    if mode == "train":
        h = nc.dropout(h, dropout, rng if rng is not None else stream(0, "dropout"))
    h = nc.prelu(nc.affine(h, params["cls.2.w"], params["cls.2.b"]), prelu_alpha)
    p = nc.sigmoid(nc.affine(h, params["cls.out.w"], params["cls.out.b"]))
    return nc.reshape(p, (p.shape[0],))


def combined_loss(decoder_loss, classifier_loss, alpha: float | None = None):
    """``dec + cls`` when ``alpha`` is None, else ``alpha*dec + (1-alpha)*cls``."""
    check_alpha(alpha)
    if isinstance(decoder_loss, Tensor):
        if alpha is None:
            return nc.add(decoder_loss, classifier_loss)
        return nc.add(nc.scale(decoder_loss, alpha), nc.scale(classifier_loss, 1.0 - alpha))
    if alpha is None:
        return decoder_loss + classifier_loss
    return alpha * decoder_loss + (1.0 - alpha) * classifier_loss


@dataclass
class BatchOutput:
    decoder_loss: Tensor
    classifier_loss: Tensor
    total: Tensor
    probabilities: np.ndarray
    log_probs: Tensor


def forward_batch(params: ModelParams, batch: Batch, cfg: ModelConfig, mode: str = "eval", rng=None) -> BatchOutput:
    state = encode(batch.encoder_input, params, batch.encoder_mask)
    logp = decode_teacher_forced(state, batch.decoder_input, params)
    B, T, V = logp.shape
    dec_loss = nc.nll_loss(nc.reshape(logp, (B * T, V)), batch.decoder_target.reshape(-1), batch.decoder_mask.reshape(-1))
    p = classify(state, params, mode, rng, cfg.dropout, cfg.prelu_alpha)
    cls_loss = nc.bce_loss(p, batch.labels)
    total = combined_loss(dec_loss, cls_loss, cfg.alpha)
    return BatchOutput(dec_loss, cls_loss, total, p.data.copy(), logp)


# ---------------------------------------------------------------------------
# checkpoints


class CheckpointError(Exception):
    pass


class BadMagicError(CheckpointError):
    pass


class VersionError(CheckpointError):
    pass


class CheckpointShapeError(CheckpointError):
    pass


class TruncatedCheckpointError(CheckpointError):
    pass


@dataclass
class ModelBundle:
    params: ModelParams
    config: ModelConfig
    vocab: Vocabulary


_PRECISION = {"float32": "<f4", "float64": "<f8"}


def save_checkpoint(params: ModelParams, cfg: ModelConfig, vocab: Vocabulary, path) -> None:
    precision = np.dtype(params.dtype).name
    if precision not in _PRECISION:
        raise ValueError(f"unsupported parameter dtype {precision}")
    names = [n for n, _ in param_shapes(cfg)]
    manifest = {
        "version": FORMAT_VERSION,
        "precision": precision,
        "config": asdict(cfg),
        "vocab": vocab.to_dict(),
        "tensors": [{"name": n, "shape": list(params[n].shape)} for n in names],
    }
    blob = json.dumps(manifest, sort_keys=True, ensure_ascii=False, separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<Q", len(blob)))
        fh.write(blob)
        for n in names:
            fh.write(np.ascontiguousarray(params[n].data, dtype=_PRECISION[precision]).tobytes())


def load_checkpoint(path) -> ModelBundle:
    raw = Path(path).read_bytes()
    if raw[:8] != MAGIC:
        if raw[:6] == MAGIC[:6]:
            raise VersionError(f"{path}: unsupported checkpoint version {raw[6:8]!r}")
        raise BadMagicError(f"{path}: not a checkpoint (bad magic)")
    if len(raw) < 16:
        raise TruncatedCheckpointError(f"{path}: truncated header")
    (n,) = struct.unpack("<Q", raw[8:16])
    if len(raw) < 16 + n:
        raise TruncatedCheckpointError(f"{path}: truncated manifest")
    try:
        manifest = json.loads(raw[16 : 16 + n].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise CheckpointError(f"{path}: unreadable manifest: {e}") from None
    if manifest.get("version") != FORMAT_VERSION:
        raise VersionError(f"{path}: unsupported manifest version {manifest.get('version')}")
    cfg = ModelConfig(**manifest["config"])
    vocab = Vocabulary.from_dict(manifest["vocab"])
    dtype = np.dtype(_PRECISION[manifest["precision"]])
    expected = dict(param_shapes(cfg))
    listed = [t["name"] for t in manifest["tensors"]]
    if sorted(listed) != sorted(expected):
        raise CheckpointShapeError(f"{path}: tensor set does not match the configuration")
    offset = 16 + n
    tensors = {}
    for entry in manifest["tensors"]:
        name, shape = entry["name"], tuple(entry["shape"])
        if shape != expected[name]:
            raise CheckpointShapeError(f"{path}: tensor {name} has shape {shape}, configuration implies {expected[name]}")
        nbytes = int(np.prod(shape)) * dtype.itemsize
        if offset + nbytes > len(raw):
            raise TruncatedCheckpointError(f"{path}: payload for {name} is truncated")
        data = np.frombuffer(raw, dtype=dtype, count=int(np.prod(shape)), offset=offset).reshape(shape)
        tensors[name] = Tensor(data.astype(dtype.newbyteorder("=")), requires_grad=True, name=name)
        offset += nbytes
    if offset != len(raw):
        raise CheckpointError(f"{path}: {len(raw) - offset} trailing bytes")
    ordered = {name: tensors[name] for name, _ in param_shapes(cfg)}
    return ModelBundle(ModelParams(ordered), cfg, vocab)
