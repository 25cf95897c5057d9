"""
Sequence-to-Sequence Core

This module provides a from-scratch, double-precision encoder-decoder network that
translates utterances into local-view + action token sequences, its trainer and an
exact teacher-forced log-likelihood scorer.

Core Features:
- Closed source/target vocabularies (target: 7 cell tokens, 5 actions, <s>, </s>)
- Multi-layer LSTM encoder over padded, masked utterance batches
- Multi-layer LSTM decoder initialised from the encoder's final states
- Bilinear ("general") attention + tanh attentional layer + softmax projection
- Hand-written backpropagation through time, checked against central differences
- Mini-batch gradient descent with global-norm clipping and plateau halving
- Versioned binary checkpoints and loss-trace CSVs

Checkpoint layout (all integers little-endian):
    8 bytes   magic ``S2SCKPT\\0``
    uint32    format version (1)
    uint32    header length N
    N bytes   UTF-8 JSON header: config echo, vocab, block names/shapes, metadata
    blocks    float64 little-endian, row-major, in header order

Dependencies:
    pip install numpy pandas
"""

import json
import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, fields
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from .frogger_env import ACTIONS, CELL_TOKENS, Action, LocalView
from .helpers.utils import log

PAD = "<pad>"
EOS = "<eos>"
SOURCE_SPECIALS = (PAD, EOS)
TARGET_START = "<s>"
TARGET_END = "</s>"
TARGET_TOKENS: Tuple[str, ...] = CELL_TOKENS + tuple(a.name for a in ACTIONS) + (TARGET_START, TARGET_END)

CHECKPOINT_MAGIC = b"S2SCKPT\x00"
CHECKPOINT_VERSION = 1


class UnknownTokenError(Exception):
    """Custom exception for tokens outside the closed vocabularies."""

    def __init__(self, message: str, token: Optional[str] = None):
        super().__init__(message)
        self.token = token


class DivergenceError(Exception):
    """Raised when the training loss becomes non-finite."""

    def __init__(self, message: str, epoch: Optional[int] = None):
        super().__init__(message)
        self.epoch = epoch


class CheckpointError(Exception):
    """Custom exception for unreadable or inconsistent checkpoint files."""

    def __init__(self, message: str, path: Optional[str] = None):
        super().__init__(message)
        self.path = path


# ---------------------------------------------------------------------------
# Vocabulary / configuration
# ---------------------------------------------------------------------------


class Vocab:
    """Bijective token <-> index maps for the source and target sides."""

    def __init__(self, source_words: Sequence[str]):
        words = sorted(set(source_words) - set(SOURCE_SPECIALS))
        self.source: List[str] = list(SOURCE_SPECIALS) + words
        self.target: List[str] = list(TARGET_TOKENS)
        self.source_index = {tok: i for i, tok in enumerate(self.source)}
        self.target_index = {tok: i for i, tok in enumerate(self.target)}

    @classmethod
    def build(cls, utterances: Sequence[Sequence[str]]) -> "Vocab":
        return cls([tok for utt in utterances for tok in utt])

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "Vocab":
        vocab = cls(data["source"])
        if vocab.source != list(data["source"]) or vocab.target != list(data["target"]):
            raise CheckpointError("Stored vocabulary does not match the rebuilt one")
        return vocab

    def to_dict(self) -> Dict[str, List[str]]:
        return {"source": list(self.source), "target": list(self.target)}

    def encode_source(self, tokens: Sequence[str]) -> List[int]:
        """Map utterance tokens to indices and append the end-of-sentence delimiter."""
        ids = []
        for tok in tokens:
            if tok not in self.source_index:
                raise UnknownTokenError(f"Unknown source token '{tok}'", token=tok)
            ids.append(self.source_index[tok])
        return ids + [self.source_index[EOS]]

    def encode_target(self, tokens: Sequence[str]) -> List[int]:
        ids = []
        for tok in tokens:
            if tok not in self.target_index:
                raise UnknownTokenError(f"Unknown target token '{tok}'", token=tok)
            ids.append(self.target_index[tok])
        return ids


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 100
    layers: int = 2
    hidden: int = 64
    embedding: int = 32
    learning_rate: float = 0.5
    batch_size: int = 8
    seed: int = 11
    clip_norm: float = 5.0
    plateau_tol: float = 0.001
    plateau_patience: int = 10
    plateau_window: int = 5
    min_learning_rate: float = 0.001
    init_scale: float = 0.1
    workers: int = 1

    def __post_init__(self):
        for name in ("epochs", "layers", "hidden", "embedding", "batch_size", "workers", "plateau_window"):
            if getattr(self, name) < 1:
                raise ValueError(f"TrainConfig.{name} must be >= 1, got {getattr(self, name)}")
        for name in ("learning_rate", "clip_norm", "init_scale"):
            if getattr(self, name) <= 0:
                raise ValueError(f"TrainConfig.{name} must be positive, got {getattr(self, name)}")

    @classmethod
    def from_config(cls, settings: Dict[str, Any]) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in settings.items() if k in known})


# ---------------------------------------------------------------------------
# Model
# ---------------------------------------------------------------------------


def param_shapes(vocab: Vocab, layers: int, hidden: int, embedding: int) -> Dict[str, Tuple[int, ...]]:
    """Return every parameter block's shape, in checkpoint order."""
    shapes: Dict[str, Tuple[int, ...]] = {
        "src_emb": (len(vocab.source), embedding),
        "tgt_emb": (len(vocab.target), embedding),
    }
    for side in ("enc", "dec"):
        for layer in range(layers):
            in_dim = embedding if layer == 0 else hidden
            shapes[f"{side}_W{layer}"] = (in_dim + hidden, 4 * hidden)
            shapes[f"{side}_b{layer}"] = (4 * hidden,)
    shapes["att_W"] = (hidden, hidden)
    shapes["comb_W"] = (2 * hidden, hidden)
    shapes["comb_b"] = (hidden,)
    shapes["out_W"] = (hidden, len(vocab.target))
    shapes["out_b"] = (len(vocab.target),)
    return shapes


class Seq2SeqModel:
    """Embeddings, encoder/decoder LSTM stacks, attention and output projection (float64)."""

    def __init__(self, vocab: Vocab, layers: int, hidden: int, embedding: int,
                 params: Dict[str, np.ndarray], metadata: Optional[Dict[str, Any]] = None):
        self.vocab = vocab
        self.layers = layers
        self.hidden = hidden
        self.embedding = embedding
        self.params = params
        self.metadata: Dict[str, Any] = dict(metadata or {})
        self.loss_trace: List[float] = []
        self.check()

    def check(self) -> None:
        """Raise CheckpointError unless every block has the expected shape and finite values."""
        expected = param_shapes(self.vocab, self.layers, self.hidden, self.embedding)
        if list(self.params) != list(expected):
            raise CheckpointError(f"Parameter blocks {list(self.params)} do not match {list(expected)}")
        for name, shape in expected.items():
            block = self.params[name]
            if block.shape != shape:
                raise CheckpointError(f"Block '{name}' has shape {block.shape}, expected {shape}")
            if not np.all(np.isfinite(block)):
                raise CheckpointError(f"Block '{name}' holds non-finite values")

    def copy(self) -> "Seq2SeqModel":
        other = Seq2SeqModel(self.vocab, self.layers, self.hidden, self.embedding,
                             {k: v.copy() for k, v in self.params.items()}, self.metadata)
        other.loss_trace = list(self.loss_trace)
        return other


def init_model(vocab: Vocab, config: TrainConfig, seed: Optional[int] = None) -> Seq2SeqModel:
    """Initialise every parameter uniformly in ``[-init_scale, init_scale]``."""
    rng = np.random.default_rng(config.seed if seed is None else seed)
    params = {name: rng.uniform(-config.init_scale, config.init_scale, size=shape)
              for name, shape in param_shapes(vocab, config.layers, config.hidden, config.embedding).items()}
    return Seq2SeqModel(vocab, config.layers, config.hidden, config.embedding, params)


# ---------------------------------------------------------------------------
# Batches
# ---------------------------------------------------------------------------


@dataclass
class Batch:
    source: np.ndarray      # (T, B) source ids, right-padded
    mask: np.ndarray        # (T, B) 1.0 on real tokens
    target_in: np.ndarray   # (S, B) <s> + target
    target_out: np.ndarray  # (S, B) target + </s>

    @property
    def size(self) -> int:
        return self.source.shape[1]


def _pad_sources(vocab: Vocab, utterances: Sequence[Sequence[str]]) -> Tuple[np.ndarray, np.ndarray]:
    encoded = [vocab.encode_source(u) for u in utterances]
    length = max(len(ids) for ids in encoded)
    source = np.full((length, len(encoded)), vocab.source_index[PAD], dtype=np.int64)
    mask = np.zeros((length, len(encoded)), dtype=np.float64)
    for b, ids in enumerate(encoded):
        source[:len(ids), b] = ids
        mask[:len(ids), b] = 1.0
    return source, mask


def make_batch(vocab: Vocab, pairs: Sequence[Tuple[Sequence[str], Sequence[str]]]) -> Batch:
    """
    Build a padded batch from (utterance tokens, target tokens) pairs.

    All targets must have the same length (view + action is always 10 tokens).
    """
    if not pairs:
        raise ValueError("Cannot build an empty batch")
    source, mask = _pad_sources(vocab, [u for u, _ in pairs])
    targets = [vocab.encode_target(t) for _, t in pairs]
    if len({len(t) for t in targets}) != 1:
        raise ValueError("All targets in a batch must have the same length")
    start, end = vocab.target_index[TARGET_START], vocab.target_index[TARGET_END]
    target_in = np.array([[start] + t for t in targets], dtype=np.int64).T
    target_out = np.array([t + [end] for t in targets], dtype=np.int64).T
    return Batch(source, mask, target_in, target_out)


# ---------------------------------------------------------------------------
# Forward pieces
# ---------------------------------------------------------------------------


def _sigmoid(x: np.ndarray) -> np.ndarray:
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def _log_softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def _lstm_step(W: np.ndarray, b: np.ndarray, x: np.ndarray, h_prev: np.ndarray, c_prev: np.ndarray):
    H = h_prev.shape[1]
    xh = np.concatenate([x, h_prev], axis=1)
    z = xh @ W + b
    i = _sigmoid(z[:, :H])
    f = _sigmoid(z[:, H:2 * H])
    o = _sigmoid(z[:, 2 * H:3 * H])
    g = np.tanh(z[:, 3 * H:])
    c = f * c_prev + i * g
    tc = np.tanh(c)
    h = o * tc
    return h, c, (xh, i, f, o, g, c_prev, tc)


def _lstm_step_backward(W: np.ndarray, cache, dh: np.ndarray, dc: np.ndarray):
    xh, i, f, o, g, c_prev, tc = cache
    H = dh.shape[1]
    do = dh * tc
    dc = dc + dh * o * (1.0 - tc * tc)
    di = dc * g
    dg = dc * i
    df = dc * c_prev
    dz = np.concatenate([di * i * (1.0 - i), df * f * (1.0 - f), do * o * (1.0 - o), dg * (1.0 - g * g)], axis=1)
    dW = xh.T @ dz
    db = dz.sum(axis=0)
    dxh = dz @ W.T
    in_dim = xh.shape[1] - H
    return dxh[:, :in_dim], dxh[:, in_dim:], dc * f, dW, db


@dataclass
class Encoded:
    outputs: np.ndarray         # (T, B, H) top-layer outputs
    mask: np.ndarray            # (T, B)
    final_h: List[np.ndarray]   # per layer (B, H)
    final_c: List[np.ndarray]
    caches: Optional[list] = None

    @property
    def size(self) -> int:
        return self.outputs.shape[1]

    def take(self, index: int) -> "Encoded":
        """Return the single-utterance view of batch column ``index``."""
        length = int(self.mask[:, index].sum())
        return Encoded(self.outputs[:length, index:index + 1], self.mask[:length, index:index + 1],
                       [h[index:index + 1] for h in self.final_h], [c[index:index + 1] for c in self.final_c])


def _encode_ids(model: Seq2SeqModel, source: np.ndarray, mask: np.ndarray, keep_caches: bool = False) -> Encoded:
    p = model.params
    T, B = source.shape
    H = model.hidden
    h = [np.zeros((B, H)) for _ in range(model.layers)]
    c = [np.zeros((B, H)) for _ in range(model.layers)]
    outputs = np.zeros((T, B, H))
    caches = [] if keep_caches else None
    for t in range(T):
        x = p["src_emb"][source[t]]
        m = mask[t][:, None]
        step_caches = []
        for layer in range(model.layers):
            h_new, c_new, cache = _lstm_step(p[f"enc_W{layer}"], p[f"enc_b{layer}"], x, h[layer], c[layer])
            h[layer] = m * h_new + (1.0 - m) * h[layer]
            c[layer] = m * c_new + (1.0 - m) * c[layer]
            step_caches.append(cache)
            x = h[layer]
        outputs[t] = x
        if keep_caches:
            caches.append(step_caches)
    return Encoded(outputs, mask, h, c, caches)


def encode(model: Seq2SeqModel, source_tokens: Sequence[str]) -> Encoded:
    """
    Run the encoder over one utterance.

    Returns:
        Encoded with one output per source position (the appended <eos> included)

    Raises:
        UnknownTokenError: If a token is outside the source vocabulary
    """
    return encode_many(model, [source_tokens])


def encode_many(model: Seq2SeqModel, utterances: Sequence[Sequence[str]]) -> Encoded:
    """Encode several utterances as one padded, masked batch."""
    source, mask = _pad_sources(model.vocab, utterances)
    return _encode_ids(model, source, mask)


def _decoder_step(model: Seq2SeqModel, token_ids: np.ndarray, h: List[np.ndarray], c: List[np.ndarray],
                  enc_out: np.ndarray, valid: np.ndarray):
    """One teacher-forced decoder step; returns logits, new states, attention weights and the cache."""
    p = model.params
    x = p["tgt_emb"][token_ids]
    h, c = list(h), list(c)
    layer_caches = []
    for layer in range(model.layers):
        h[layer], c[layer], cache = _lstm_step(p[f"dec_W{layer}"], p[f"dec_b{layer}"], x, h[layer], c[layer])
        layer_caches.append(cache)
        x = h[layer]
    top = x
    q = top @ p["att_W"]
    scores = np.einsum("bh,tbh->bt", q, enc_out)
    scores = np.where(valid, scores, -np.inf)
    scores = scores - scores.max(axis=1, keepdims=True)
    weights = np.exp(scores)
    weights /= weights.sum(axis=1, keepdims=True)
    ctx = np.einsum("bt,tbh->bh", weights, enc_out)
    cat = np.concatenate([ctx, top], axis=1)
    att_h = np.tanh(cat @ p["comb_W"] + p["comb_b"])
    logits = att_h @ p["out_W"] + p["out_b"]
    return logits, h, c, weights, (layer_caches, top, q, weights, cat, att_h)


def _decode_ids(model: Seq2SeqModel, encoded: Encoded, target_in: np.ndarray):
    valid = encoded.mask.T > 0
    h, c = encoded.final_h, encoded.final_c
    logits_steps, weight_steps, caches = [], [], []
    for s in range(target_in.shape[0]):
        logits, h, c, weights, cache = _decoder_step(model, target_in[s], h, c, encoded.outputs, valid)
        logits_steps.append(logits)
        weight_steps.append(weights)
        caches.append(cache)
    return np.stack(logits_steps), np.stack(weight_steps), caches, (h, c)


def _target_ids(model: Seq2SeqModel, target_tokens: Sequence[str]) -> Tuple[np.ndarray, np.ndarray]:
    ids = model.vocab.encode_target(target_tokens)
    start, end = model.vocab.target_index[TARGET_START], model.vocab.target_index[TARGET_END]
    return np.array([start] + ids)[:, None], np.array(ids + [end])[:, None]


def decode_logits(model: Seq2SeqModel, encoded: Encoded, target_tokens: Sequence[str]) -> Tuple[np.ndarray, np.ndarray]:
    """
    Teacher-forced decoder logits for one encoded utterance.

    Returns:
        Tuple of (logits (S, |target vocab|), attention weights (S, T)) with S = len(target) + 1
    """
    if encoded.size != 1:
        raise ValueError("decode_logits expects a single encoded utterance")
    target_in, _ = _target_ids(model, target_tokens)
    logits, weights, _, _ = _decode_ids(model, encoded, target_in)
    return logits[:, 0, :], weights[:, 0, :]


def decode_logprob(model: Seq2SeqModel, encoded: Encoded, target_tokens: Sequence[str]) -> float:
    """
    Total teacher-forced log probability of ``target_tokens`` followed by </s>.

    Returns:
        ``sum_t log softmax(logits_t)[target_t]`` (always <= 0)

    Raises:
        UnknownTokenError: If a token is outside the target vocabulary
    """
    if encoded.size != 1:
        raise ValueError("decode_logprob expects a single encoded utterance")
    target_in, target_out = _target_ids(model, target_tokens)
    logits, _, _, _ = _decode_ids(model, encoded, target_in)
    logp = _log_softmax(logits[:, 0, :])
    return float(logp[np.arange(len(target_out)), target_out[:, 0]].sum())


def target_tokens(view: LocalView, action: Action) -> Tuple[str, ...]:
    """The decoder target for a (view, action) pair: 9 cell tokens then the action name."""
    return tuple(view.cells) + (Action(action).name,)


def score(model: Seq2SeqModel, utterance: Sequence[str], view: LocalView, action: Action) -> float:
    """Log probability of reconstructing ``view`` + ``action`` from ``utterance``."""
    return decode_logprob(model, encode(model, utterance), target_tokens(view, action))


def score_all_actions(model: Seq2SeqModel, encoded: Encoded, view: LocalView) -> np.ndarray:
    """
    Score every (utterance, action) pair for one view.

    The 10 decoding steps that consume <s> and the view tokens are shared by all five
    actions; only the final step (action in, </s> out) is run per action.

    Returns:
        Array (number of utterances, 5) of total log probabilities
    """
    vocab = model.vocab
    n = encoded.size
    view_ids = vocab.encode_target(view.cells)
    action_ids = [vocab.target_index[a.name] for a in ACTIONS]
    end = vocab.target_index[TARGET_END]
    prefix_in = np.tile(np.array([vocab.target_index[TARGET_START]] + view_ids)[:, None], (1, n))

    logits, _, _, (h, c) = _decode_ids(model, encoded, prefix_in)
    logp = _log_softmax(logits)
    prefix = sum(logp[s, :, view_ids[s]] for s in range(len(view_ids)))
    scores = np.empty((n, len(ACTIONS)))
    valid = encoded.mask.T > 0
    for a, action_id in enumerate(action_ids):
        last_logits, _, _, _, _ = _decoder_step(model, np.full(n, action_id), h, c, encoded.outputs, valid)
        end_logp = _log_softmax(last_logits)[:, end]
        scores[:, a] = prefix + logp[len(view_ids), :, action_id] + end_logp
    return scores


# ---------------------------------------------------------------------------
# Backward pass
# ---------------------------------------------------------------------------


def loss_and_grads(model: Seq2SeqModel, batch: Batch) -> Tuple[float, Dict[str, np.ndarray]]:
    """
    Summed negative log-likelihood of a batch and its gradient for every block.

    Returns:
        Tuple of (loss summed over examples and positions, gradients keyed like ``model.params``)
    """
    p = model.params
    L, H = model.layers, model.hidden
    grads = {name: np.zeros_like(block) for name, block in p.items()}

    encoded = _encode_ids(model, batch.source, batch.mask, keep_caches=True)
    logits, _, dec_caches, _ = _decode_ids(model, encoded, batch.target_in)
    logp = _log_softmax(logits)
    S, B = batch.target_out.shape
    steps, cols = np.meshgrid(np.arange(S), np.arange(B), indexing="ij")
    loss = -float(logp[steps, cols, batch.target_out].sum())

    dlogits = np.exp(logp)
    dlogits[steps, cols, batch.target_out] -= 1.0

    enc_out = encoded.outputs
    d_enc = np.zeros_like(enc_out)
    dh_next = [np.zeros((B, H)) for _ in range(L)]
    dc_next = [np.zeros((B, H)) for _ in range(L)]

    for s in reversed(range(S)):
        layer_caches, top, q, weights, cat, att_h = dec_caches[s]
        dlg = dlogits[s]
        grads["out_W"] += att_h.T @ dlg
        grads["out_b"] += dlg.sum(axis=0)
        dpre = (dlg @ p["out_W"].T) * (1.0 - att_h * att_h)
        grads["comb_W"] += cat.T @ dpre
        grads["comb_b"] += dpre.sum(axis=0)
        dcat = dpre @ p["comb_W"].T
        dctx, dtop = dcat[:, :H], dcat[:, H:]

        dweights = np.einsum("bh,tbh->bt", dctx, enc_out)
        d_enc += weights.T[:, :, None] * dctx[None, :, :]
        dscores = weights * (dweights - (weights * dweights).sum(axis=1, keepdims=True))
        dq = np.einsum("bt,tbh->bh", dscores, enc_out)
        d_enc += dscores.T[:, :, None] * q[None, :, :]
        grads["att_W"] += top.T @ dq
        dx = dtop + dq @ p["att_W"].T

        for layer in reversed(range(L)):
            dx, dh_prev, dc_prev, dW, db = _lstm_step_backward(
                p[f"dec_W{layer}"], layer_caches[layer], dx + dh_next[layer], dc_next[layer])
            grads[f"dec_W{layer}"] += dW
            grads[f"dec_b{layer}"] += db
            dh_next[layer], dc_next[layer] = dh_prev, dc_prev
        np.add.at(grads["tgt_emb"], batch.target_in[s], dx)

    # decoder initial states are the encoder final states
    dh_rec, dc_rec = dh_next, dc_next
    for t in reversed(range(batch.source.shape[0])):
        m = batch.mask[t][:, None]
        dx = d_enc[t]
        for layer in reversed(range(L)):
            dh_total = dx + dh_rec[layer]
            dc_total = dc_rec[layer]
            dx, dh_prev, dc_prev, dW, db = _lstm_step_backward(
                p[f"enc_W{layer}"], encoded.caches[t][layer], m * dh_total, m * dc_total)
            grads[f"enc_W{layer}"] += dW
            grads[f"enc_b{layer}"] += db
            dh_rec[layer] = dh_prev + (1.0 - m) * dh_total
            dc_rec[layer] = dc_prev + (1.0 - m) * dc_total
        np.add.at(grads["src_emb"], batch.source[t], dx)

    return loss, grads


def batch_loss(model: Seq2SeqModel, batch: Batch) -> float:
    """Summed negative log-likelihood of a batch (forward only)."""
    encoded = _encode_ids(model, batch.source, batch.mask)
    logits, _, _, _ = _decode_ids(model, encoded, batch.target_in)
    logp = _log_softmax(logits)
    S, B = batch.target_out.shape
    steps, cols = np.meshgrid(np.arange(S), np.arange(B), indexing="ij")
    return -float(logp[steps, cols, batch.target_out].sum())


def gradient_check(model: Seq2SeqModel, batch: Batch, eps: float = 1e-5) -> Dict[str, float]:
    """
    Compare analytic gradients with central finite differences, block by block.

    Returns:
        Relative error ``|g_a - g_n| / max(|g_a| + |g_n|, 1e-12)`` (Frobenius norms) per block
    """
    _, analytic = loss_and_grads(model, batch)
    errors = {}
    for name, block in model.params.items():
        numeric = np.zeros_like(block)
        flat, num_flat = block.reshape(-1), numeric.reshape(-1)
        for k in range(flat.size):
            original = flat[k]
            flat[k] = original + eps
            plus = batch_loss(model, batch)
            flat[k] = original - eps
            minus = batch_loss(model, batch)
            flat[k] = original
            num_flat[k] = (plus - minus) / (2.0 * eps)
        diff = np.linalg.norm(analytic[name] - numeric)
        errors[name] = float(diff / max(np.linalg.norm(analytic[name]) + np.linalg.norm(numeric), 1e-12))
    return errors


# ---------------------------------------------------------------------------
# Training
# ---------------------------------------------------------------------------


def _sharded_grads(model: Seq2SeqModel, vocab: Vocab, pairs, workers: int):
    shards = [pairs[k::workers] for k in range(workers) if pairs[k::workers]]
    with ThreadPoolExecutor(max_workers=len(shards)) as pool:
        results = list(pool.map(lambda shard: loss_and_grads(model, make_batch(vocab, shard)), shards))
    loss = 0.0
    grads = {name: np.zeros_like(block) for name, block in model.params.items()}
    # fixed reduction order: shard 0, 1, ...
    for shard_loss, shard_grads in results:
        loss += shard_loss
        for name in grads:
            grads[name] += shard_grads[name]
    return loss, grads


def plateau_step(loss_trace: List[float], lr: float, best: float, stale: int,
                 config: TrainConfig) -> Tuple[float, float, int]:
    """
    Advance the learning-rate plateau schedule by one epoch.

    The schedule watches the mean of the last ``plateau_window`` epoch losses, so
    mini-batch noise alone does not count as a plateau. No decision is taken until a
    full window exists.

    Returns:
        Tuple of (learning rate, best smoothed loss, epochs since the last improvement)
    """
    if len(loss_trace) < config.plateau_window:
        return lr, best, stale
    smoothed = float(np.mean(loss_trace[-config.plateau_window:]))
    if smoothed > best * (1.0 - config.plateau_tol):
        stale += 1
        if stale >= config.plateau_patience:
            lr = max(lr * 0.5, config.min_learning_rate)
            stale = 0
    else:
        stale = 0
    return lr, min(best, smoothed), stale


def train(dataset, config: TrainConfig, vocab: Optional[Vocab] = None, verbose: bool = True) -> Seq2SeqModel:
    """
    Fit a model to a dataset of annotated examples.

    Minimises the mean (per example) negative log-likelihood of view + action given the
    utterance by mini-batch gradient descent with global-norm clipping; the learning
    rate halves after ``plateau_patience`` epochs in which the ``plateau_window``-epoch
    mean loss failed to improve on its best value by a relative ``plateau_tol``.

    Args:
        dataset: Object with ``examples`` (utterance, view, action)
        config: Training configuration
        vocab: Source vocabulary (built from the dataset when omitted)
        verbose: Print one line per epoch

    Returns:
        Trained model; ``model.loss_trace`` holds the per-epoch mean NLL

    Raises:
        ValueError: If the dataset is empty
        DivergenceError: If the loss becomes non-finite
    """
    examples = list(dataset.examples)
    if not examples:
        raise ValueError("Cannot train on an empty dataset")
    pairs = [(ex.utterance, target_tokens(ex.view, ex.action)) for ex in examples]
    vocab = vocab or Vocab.build([u for u, _ in pairs])

    init_seed, shuffle_seed = np.random.SeedSequence(config.seed).spawn(2)
    model = init_model(vocab, config, seed=int(init_seed.generate_state(1)[0]))
    shuffle_rng = np.random.default_rng(shuffle_seed)

    lr = config.learning_rate
    best = np.inf
    stale = 0
    for epoch in range(1, config.epochs + 1):
        order = shuffle_rng.permutation(len(pairs))
        total = 0.0
        for start in range(0, len(pairs), config.batch_size):
            chunk = [pairs[i] for i in order[start:start + config.batch_size]]
            if config.workers > 1:
                loss, grads = _sharded_grads(model, vocab, chunk, config.workers)
            else:
                loss, grads = loss_and_grads(model, make_batch(vocab, chunk))
            if not np.isfinite(loss):
                raise DivergenceError(f"Loss became non-finite in epoch {epoch}", epoch=epoch)
            scale = 1.0 / len(chunk)
            norm = scale * np.sqrt(sum(float((g * g).sum()) for g in grads.values()))
            if norm > config.clip_norm:
                scale *= config.clip_norm / norm
            for name, g in grads.items():
                model.params[name] -= lr * scale * g
            total += loss

        epoch_loss = total / len(pairs)
        if not np.isfinite(epoch_loss):
            raise DivergenceError(f"Loss became non-finite in epoch {epoch}", epoch=epoch)
        model.loss_trace.append(epoch_loss)
        lr, best, stale = plateau_step(model.loss_trace, lr, best, stale, config)
        if verbose:
            log(f"   epoch {epoch:4d}/{config.epochs}  mean NLL {epoch_loss:.5f}  lr {lr:g}")

    model.metadata.update({
        "train_config": asdict(config),
        "examples": len(pairs),
        "bit_identical_to_serial": config.workers == 1,
    })
    return model


def token_accuracy(model: Seq2SeqModel, examples) -> float:
    """Teacher-forced argmax accuracy over the 10 view + action tokens of every example."""
    examples = list(examples)
    if not examples:
        raise ValueError("No examples to evaluate")
    batch = make_batch(model.vocab, [(ex.utterance, target_tokens(ex.view, ex.action)) for ex in examples])
    encoded = _encode_ids(model, batch.source, batch.mask)
    logits, _, _, _ = _decode_ids(model, encoded, batch.target_in)
    predictions = logits.argmax(axis=-1)[:-1]
    return float((predictions == batch.target_out[:-1]).mean())


# ---------------------------------------------------------------------------
# Persistence
# ---------------------------------------------------------------------------


def save_checkpoint(model: Seq2SeqModel, path: str) -> None:
    """Write the versioned binary checkpoint described in the module docstring."""
    header = {
        "config": {"layers": model.layers, "hidden": model.hidden, "embedding": model.embedding},
        "vocab": model.vocab.to_dict(),
        "blocks": [[name, list(block.shape)] for name, block in model.params.items()],
        "metadata": model.metadata,
    }
    header_bytes = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as f:
        f.write(CHECKPOINT_MAGIC)
        f.write(struct.pack("<II", CHECKPOINT_VERSION, len(header_bytes)))
        f.write(header_bytes)
        for block in model.params.values():
            f.write(np.ascontiguousarray(block, dtype="<f8").tobytes(order="C"))


def load_checkpoint(path: str) -> Seq2SeqModel:
    """
    Read a checkpoint written by ``save_checkpoint``.

    Raises:
        CheckpointError: On a bad magic/version, truncated data or inconsistent shapes
    """
    with open(path, "rb") as f:
        data = f.read()
    if data[:len(CHECKPOINT_MAGIC)] != CHECKPOINT_MAGIC:
        raise CheckpointError("Not a seq2seq checkpoint (bad magic)", path=path)
    offset = len(CHECKPOINT_MAGIC)
    version, header_len = struct.unpack_from("<II", data, offset)
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(f"Unsupported checkpoint version {version}", path=path)
    offset += 8
    header = json.loads(data[offset:offset + header_len].decode("utf-8"))
    offset += header_len

    params: Dict[str, np.ndarray] = {}
    for name, shape in header["blocks"]:
        count = int(np.prod(shape)) if shape else 1
        end = offset + 8 * count
        if end > len(data):
            raise CheckpointError(f"Checkpoint truncated in block '{name}'", path=path)
        params[name] = np.frombuffer(data[offset:end], dtype="<f8").astype(np.float64).reshape(shape)
        offset = end
    if offset != len(data):
        raise CheckpointError("Trailing bytes after the last parameter block", path=path)

    cfg = header["config"]
    try:
        return Seq2SeqModel(Vocab.from_dict(header["vocab"]), cfg["layers"], cfg["hidden"], cfg["embedding"],
                            params, header.get("metadata"))
    except CheckpointError as e:
        raise CheckpointError(str(e), path=path)


def save_loss_trace(model: Seq2SeqModel, path: str) -> None:
    """Write the per-epoch loss trace as ``epoch,mean_nll`` CSV."""
    frame = pd.DataFrame({"epoch": np.arange(1, len(model.loss_trace) + 1), "mean_nll": model.loss_trace})
    frame.to_csv(path, index=False, float_format="%.10f", lineterminator="\n")
