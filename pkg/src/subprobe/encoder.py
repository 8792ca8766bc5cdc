"""A small pre-LN transformer encoder with a named registry of maskable
matrices, masked-language-model pretraining, and the random-reset
baselines (reset encoder / reset all)."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Parameter, Tensor
from .hardconcrete import MaskParams, MaskSample, apply_mask
from .optim import AdamState, adam_step, lr_schedule
from .rng import RngState

__all__ = [
    "EncoderConfig",
    "EncoderWeights",
    "init_weights",
    "encode",
    "pretrain_mlm",
    "reset_encoder",
    "reset_all",
]

MATRIX_KINDS = ("wq", "wk", "wv", "wo", "wff1", "wff2")
INIT_STD = 0.02


@dataclass(frozen=True)
class EncoderConfig:
    vocab_size: int
    layers: int = 4
    hidden: int = 64
    heads: int = 4
    ff: int = 128
    max_len: int = 32
    dropout: float = 0.1

    def __post_init__(self):
        if self.hidden % self.heads:
            raise ValueError(f"heads ({self.heads}) must divide hidden ({self.hidden})")
        if self.vocab_size < 5:
            raise ValueError("vocab_size must cover the reserved tokens")

    def layer_param_count(self) -> int:
        """Closed-form parameter count of one transformer layer."""
        d, f = self.hidden, self.ff
        return 4 * (d * d + d) + (d * f + f) + (f * d + d) + 4 * d


class EncoderWeights:
    """Named parameters for the stack. The maskable registry is exactly
    the 6 weight matrices per layer (Q, K, V, O, FF1, FF2); embeddings,
    biases and layernorm parameters are excluded."""

    def __init__(self, config: EncoderConfig, params: dict[str, Parameter]):
        self.config = config
        self.params = params

    # -- structure ------------------------------------------------------

    @staticmethod
    def param_names(config: EncoderConfig) -> list[str]:
        names = ["tok_emb", "pos_emb"]
        for layer in range(config.layers):
            p = f"layer{layer}."
            names += [p + "ln1_gain", p + "ln1_bias",
                      p + "wq", p + "bq", p + "wk", p + "bk",
                      p + "wv", p + "bv", p + "wo", p + "bo",
                      p + "ln2_gain", p + "ln2_bias",
                      p + "wff1", p + "bff1", p + "wff2", p + "bff2"]
        names += ["final_ln_gain", "final_ln_bias"]
        return names

    @staticmethod
    def shape_of(name: str, config: EncoderConfig) -> tuple[int, ...]:
        d, f = config.hidden, config.ff
        if name == "tok_emb":
            return (config.vocab_size, d)
        if name == "pos_emb":
            return (config.max_len, d)
        base = name.split(".")[-1]
        return {
            "ln1_gain": (d,), "ln1_bias": (d,), "ln2_gain": (d,), "ln2_bias": (d,),
            "final_ln_gain": (d,), "final_ln_bias": (d,),
            "wq": (d, d), "wk": (d, d), "wv": (d, d), "wo": (d, d),
            "bq": (d,), "bk": (d,), "bv": (d,), "bo": (d,),
            "wff1": (d, f), "bff1": (f,), "wff2": (f, d), "bff2": (d,),
        }[base]

    def registry(self) -> list[str]:
        return [f"layer{layer}.{kind}"
                for layer in range(self.config.layers)
                for kind in MATRIX_KINDS]

    def registry_shapes(self) -> list[tuple[str, tuple[int, int]]]:
        return [(n, self.params[n].data.shape) for n in self.registry()]

    def parameters(self) -> list[Parameter]:
        return list(self.params.values())

    def copy(self) -> "EncoderWeights":
        return EncoderWeights(self.config, {
            n: Parameter(p.data.copy(), name=n) for n, p in self.params.items()
        })

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None

    def set_trainable(self, trainable: bool) -> None:
        """Freeze or unfreeze the whole stack: frozen parameters receive no
        gradients and the backward sweep skips their subgraphs entirely."""
        for p in self.params.values():
            p.trainable = trainable
            p.requires_grad = trainable


def _init_value(name: str, shape: tuple[int, ...], rng: RngState) -> np.ndarray:
    base = name.split(".")[-1]
    if base.endswith("_gain"):
        return np.ones(shape)
    if base.startswith("b") or base.endswith("_bias"):
        return np.zeros(shape)
    return rng.truncated_normal(shape, std=INIT_STD)


def init_weights(config: EncoderConfig, rng: RngState) -> EncoderWeights:
    """Truncated-normal (std 0.02) matrices and embeddings, zero biases,
    unit layernorm gains. The draw order is the fixed parameter order, so
    one stream yields one reproducible initialization."""
    params = {}
    for name in EncoderWeights.param_names(config):
        params[name] = Parameter(_init_value(name, EncoderWeights.shape_of(name, config), rng),
                                 name=name)
    return EncoderWeights(config, params)


def reset_encoder(weights: EncoderWeights, rng: RngState) -> EncoderWeights:
    """Random baseline: re-initialize every transformer-layer parameter
    (and the final layernorm); token and position embeddings are kept
    bit-identical."""
    out = weights.copy()
    for name in EncoderWeights.param_names(weights.config):
        if name in ("tok_emb", "pos_emb"):
            continue
        out.params[name].data[...] = _init_value(
            name, EncoderWeights.shape_of(name, weights.config), rng)
    return out


def reset_all(weights: EncoderWeights, rng: RngState) -> EncoderWeights:
    """Random baseline: re-initialize everything, embeddings included."""
    out = weights.copy()
    for name in EncoderWeights.param_names(weights.config):
        out.params[name].data[...] = _init_value(
            name, EncoderWeights.shape_of(name, weights.config), rng)
    return out


# ---------------------------------------------------------------------------
# forward pass
# ---------------------------------------------------------------------------

def attention_key_mask(lengths: np.ndarray, seq_len: int) -> np.ndarray:
    """(B, 1, 1, T) additive mask: 0 at real keys, -1e30 at padding."""
    pos = np.arange(seq_len)
    valid = pos[None, :] < lengths[:, None]
    return np.where(valid, 0.0, -1e30)[:, None, None, :]


def encode(ids: np.ndarray, lengths: np.ndarray, weights: EncoderWeights,
           mask: MaskSample | None = None, mask_params: MaskParams | None = None,
           training: bool = False, rng: RngState | None = None) -> Tensor:
    """Hidden states (B, T, d) for a padded id batch.

    With `mask` present every registered matrix is multiplied by its mask
    tile before use; an absent mask is equivalent to an all-ones mask.
    Padded key positions never receive attention; padded rows still flow
    through the stack and must be excluded downstream.
    """
    cfg = weights.config
    B, T = ids.shape
    if T > cfg.max_len:
        raise ValueError(f"sequence length {T} exceeds max_len {cfg.max_len}")
    if mask is not None:
        if mask_params is None:
            raise ValueError("mask_params required when applying a mask")
        mats: dict[str, Tensor] = apply_mask(weights, mask, mask_params)
    else:
        mats = {n: weights.params[n] for n in weights.registry()}
    p = weights.params
    drop = cfg.dropout if training else 0.0
    if drop > 0.0 and rng is None:
        raise ValueError("training-mode encode with dropout needs an RngState")

    nh, dh = cfg.heads, cfg.hidden // cfg.heads
    scale = 1.0 / math.sqrt(dh)
    key_mask = attention_key_mask(lengths, T)

    x = ad.add(ad.embedding(p["tok_emb"], ids),
               ad.embedding(p["pos_emb"], np.arange(T)))
    if drop > 0.0:
        x = ad.dropout(x, 1.0 - drop, rng)

    for layer in range(cfg.layers):
        pre = f"layer{layer}."
        h = ad.layer_norm(x, p[pre + "ln1_gain"], p[pre + "ln1_bias"])
        q = ad.split_heads(ad.linear(h, mats[pre + "wq"], p[pre + "bq"]), nh)
        k = ad.split_heads(ad.linear(h, mats[pre + "wk"], p[pre + "bk"]), nh)
        v = ad.split_heads(ad.linear(h, mats[pre + "wv"], p[pre + "bv"]), nh)
        ctx = ad.merge_heads(ad.attention(q, k, v, scale, additive_mask=key_mask))
        out = ad.linear(ctx, mats[pre + "wo"], p[pre + "bo"])
        if drop > 0.0:
            out = ad.dropout(out, 1.0 - drop, rng)
        x = ad.add(x, out)

        h2 = ad.layer_norm(x, p[pre + "ln2_gain"], p[pre + "ln2_bias"])
        f = ad.relu(ad.linear(h2, mats[pre + "wff1"], p[pre + "bff1"]))
        f = ad.linear(f, mats[pre + "wff2"], p[pre + "bff2"])
        if drop > 0.0:
            f = ad.dropout(f, 1.0 - drop, rng)
        x = ad.add(x, f)

    return ad.layer_norm(x, p["final_ln_gain"], p["final_ln_bias"])


# ---------------------------------------------------------------------------
# masked-language-model pretraining
# ---------------------------------------------------------------------------

def _pad_batch(ids_list: list[np.ndarray]) -> tuple[np.ndarray, np.ndarray]:
    lengths = np.array([len(s) for s in ids_list])
    batch = np.zeros((len(ids_list), int(lengths.max())), dtype=np.int64)
    for i, s in enumerate(ids_list):
        batch[i, : len(s)] = s
    return batch, lengths


def _corrupt(batch: np.ndarray, lengths: np.ndarray, mask_id: int,
             mask_prob: float, rng: RngState) -> tuple[np.ndarray, np.ndarray]:
    """Replace ~mask_prob of the real positions per sentence with the mask
    token (at least one per sentence); returns (corrupted, selected)."""
    B, T = batch.shape
    real = np.arange(T)[None, :] < lengths[:, None]
    pick = (rng.uniform((B, T)) < mask_prob) & real
    none = ~pick.any(axis=1)
    if none.any():
        fallback = (rng.uniform((B,)) * lengths).astype(np.int64)
        pick[none, fallback[none]] = True
    corrupted = batch.copy()
    corrupted[pick] = mask_id
    return corrupted, pick


def mlm_eval_accuracy(weights: EncoderWeights, ids_list: list[np.ndarray],
                      mask_id: int, mask_prob: float, rng: RngState,
                      mlm_bias: Parameter, batch_size: int = 256) -> float:
    """Masked-token top-1 accuracy under a fixed corruption stream."""
    hits = total = 0
    with ad.no_grad():
        for start in range(0, len(ids_list), batch_size):
            batch, lengths = _pad_batch(ids_list[start:start + batch_size])
            corrupted, pick = _corrupt(batch, lengths, mask_id, mask_prob, rng)
            h = encode(corrupted, lengths, weights)
            logits = ad.add(ad.matmul(h, ad.transpose(weights.params["tok_emb"], (1, 0))),
                            mlm_bias).data
            pred = logits.argmax(axis=-1)
            hits += int((pred[pick] == batch[pick]).sum())
            total += int(pick.sum())
    return hits / max(total, 1)


def pretrain_mlm(weights: EncoderWeights, train_ids: list[np.ndarray],
                 dev_ids: list[np.ndarray], mask_id: int, rng: RngState,
                 epochs: int = 8, batch_size: int = 64, lr: float = 1e-3,
                 mask_prob: float = 0.15) -> tuple[EncoderWeights, list[dict]]:
    """Train the encoder in place on masked-token prediction.

    Output logits tie the token embedding matrix; the output bias is a
    scratch parameter discarded afterwards. Returns the weights and a
    per-epoch log (loss, held-out masked accuracy).
    """
    if mask_id < 0 or mask_id >= weights.config.vocab_size:
        raise ValueError(f"mask token id {mask_id} outside the vocabulary")
    mlm_bias = Parameter(np.zeros(weights.config.vocab_size), name="mlm_bias")
    params = weights.parameters() + [mlm_bias]
    state = AdamState()
    shuffle_rng = rng.split("shuffle")
    corrupt_rng = rng.split("corrupt")
    eval_rng_seed = rng.split("eval")
    order_all = np.arange(len(train_ids))
    n_batches = math.ceil(len(train_ids) / batch_size)
    total_steps = epochs * n_batches
    log: list[dict] = []
    step = 0
    for epoch in range(epochs):
        order = order_all[shuffle_rng.permutation(len(train_ids))]
        epoch_loss = 0.0
        for b in range(n_batches):
            chunk = [train_ids[i] for i in order[b * batch_size:(b + 1) * batch_size]]
            batch, lengths = _pad_batch(chunk)
            corrupted, pick = _corrupt(batch, lengths, mask_id, mask_prob, corrupt_rng)
            h = encode(corrupted, lengths, weights, training=True, rng=corrupt_rng)
            logits = ad.add(ad.matmul(h, ad.transpose(weights.params["tok_emb"], (1, 0))),
                            mlm_bias)
            loss = ad.cross_entropy(logits, batch, valid=pick)
            for prm in params:
                prm.grad = None
            ad.backward(loss)
            step += 1
            adam_step(params, state, lr_schedule(step, total_steps, lr))
            epoch_loss += loss.item()
        acc = mlm_eval_accuracy(weights, dev_ids, mask_id, mask_prob,
                                eval_rng_seed.split(f"epoch{epoch}"), mlm_bias)
        log.append({"epoch": epoch, "train_loss": epoch_loss / n_batches,
                    "dev_masked_acc": acc})
    return weights, log
