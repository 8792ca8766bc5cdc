"""Classification heads (linear tagging, biaffine parsing), the rank-
limited MLP probe, and the three probe compositions."""

from __future__ import annotations

import enum

import numpy as np

from . import autodiff as ad
from .autodiff import Parameter, Tensor
from .encoder import EncoderWeights, encode
from .hardconcrete import MaskParams, MaskSample
from .rng import RngState

__all__ = [
    "ProbeMode",
    "LinearTagHead",
    "BiaffineHead",
    "Mlp1Probe",
    "tag_forward",
    "tag_loss",
    "biaffine_forward",
    "biaffine_loss",
    "biaffine_decode",
    "probe_hidden",
    "parameter_count",
]

HEAD_DROPOUT = 0.1


class ProbeMode(enum.Enum):
    SUBNETWORK = "subnetwork"
    MLP1 = "mlp1"
    FINETUNE = "finetune"


class LinearTagHead:
    """Dropout -> linear -> softmax over tags, applied per token."""

    def __init__(self, d: int, n_tags: int, rng: RngState, p_drop: float = HEAD_DROPOUT):
        self.n_tags = n_tags
        self.p_drop = p_drop
        self.w = Parameter(rng.truncated_normal((d, n_tags)), name="tag_head.w")
        self.b = Parameter(np.zeros(n_tags), name="tag_head.b")

    def parameters(self) -> list[Parameter]:
        return [self.w, self.b]

    def logits(self, hidden: Tensor, training: bool, rng: RngState | None) -> Tensor:
        h = hidden
        if training and self.p_drop > 0.0:
            h = ad.dropout(h, 1.0 - self.p_drop, rng)
        return ad.add(ad.matmul(h, self.w), self.b)


def tag_forward(hidden: Tensor, head: LinearTagHead, training: bool = False,
                rng: RngState | None = None) -> Tensor:
    """Per-token tag distribution (rows sum to 1)."""
    return ad.softmax(head.logits(hidden, training, rng))


def tag_loss(hidden: Tensor, head: LinearTagHead, targets: np.ndarray,
             valid: np.ndarray, training: bool = False,
             rng: RngState | None = None) -> Tensor:
    """Mean token cross-entropy over the valid positions."""
    return ad.cross_entropy(head.logits(hidden, training, rng), targets, valid)


class BiaffineHead:
    """Arc and label scorers over token pairs with a synthetic root
    position prepended on the head side. Arc scores for a sentence of n
    tokens form an (n+1) x n matrix (root column included)."""

    def __init__(self, d: int, n_labels: int, rng: RngState,
                 d_arc: int | None = None, d_lab: int | None = None):
        d_arc = d_arc or d // 2
        d_lab = d_lab or d // 2
        self.n_labels = n_labels
        self.d_arc, self.d_lab = d_arc, d_lab

        def tn(shape, name):
            return Parameter(rng.truncated_normal(shape), name=name)

        self.root = tn((d,), "biaffine.root")
        self.w_arc_h = tn((d, d_arc), "biaffine.w_arc_h")
        self.b_arc_h = Parameter(np.zeros(d_arc), name="biaffine.b_arc_h")
        self.w_arc_d = tn((d, d_arc), "biaffine.w_arc_d")
        self.b_arc_d = Parameter(np.zeros(d_arc), name="biaffine.b_arc_d")
        self.u_arc = tn((d_arc + 1, d_arc), "biaffine.u_arc")
        self.w_lab_h = tn((d, d_lab), "biaffine.w_lab_h")
        self.b_lab_h = Parameter(np.zeros(d_lab), name="biaffine.b_lab_h")
        self.w_lab_d = tn((d, d_lab), "biaffine.w_lab_d")
        self.b_lab_d = Parameter(np.zeros(d_lab), name="biaffine.b_lab_d")
        self.u_lab = tn((n_labels, d_lab + 1, d_lab + 1), "biaffine.u_lab")

    def parameters(self) -> list[Parameter]:
        return [self.root, self.w_arc_h, self.b_arc_h, self.w_arc_d, self.b_arc_d,
                self.u_arc, self.w_lab_h, self.b_lab_h, self.w_lab_d, self.b_lab_d,
                self.u_lab]

    # -- scoring --------------------------------------------------------

    def _projections(self, hidden: Tensor):
        with_root = ad.prepend_root(hidden, self.root)
        arc_h = ad.relu(ad.add(ad.matmul(with_root, self.w_arc_h), self.b_arc_h))
        arc_d = ad.relu(ad.add(ad.matmul(hidden, self.w_arc_d), self.b_arc_d))
        lab_h = ad.relu(ad.add(ad.matmul(with_root, self.w_lab_h), self.b_lab_h))
        lab_d = ad.relu(ad.add(ad.matmul(hidden, self.w_lab_d), self.b_lab_d))
        return arc_h, arc_d, lab_h, lab_d

    def arc_scores(self, arc_h: Tensor, arc_d: Tensor) -> Tensor:
        """(B, n+1, n): candidate heads (root first) x dependents."""
        lhs = ad.matmul(ad.append_ones(arc_h), self.u_arc)
        return ad.matmul(lhs, ad.transpose(arc_d, (0, 2, 1)))

    def label_scores(self, lab_h: Tensor, lab_d: Tensor, head_idx: np.ndarray) -> Tensor:
        """(B, n, n_labels) scores of each label for (chosen head, dependent)."""
        sel = ad.append_ones(ad.gather_nodes(lab_h, head_idx))
        dep = ad.append_ones(lab_d)
        B, n, e = dep.data.shape
        u_flat = ad.reshape(self.u_lab, (self.n_labels * e, e))
        t = ad.matmul(sel, ad.transpose(u_flat, (1, 0)))
        t = ad.reshape(t, (B, n, self.n_labels, e))
        return ad.sum_axis(ad.mul(t, ad.reshape(dep, (B, n, 1, e))), 3)


def _head_candidate_mask(lengths: np.ndarray, n: int) -> np.ndarray:
    """(B, 1, n+1) additive mask: padding positions cannot serve as heads."""
    cand = np.arange(n + 1)[None, :]
    ok = (cand == 0) | (cand <= lengths[:, None])
    return np.where(ok, 0.0, -1e30)[:, None, :]


def biaffine_forward(hidden: Tensor, head: BiaffineHead, lengths: np.ndarray,
                     gold_heads: np.ndarray | None = None):
    """Arc scores plus label scores conditioned on gold heads (training)
    or on the argmax heads (evaluation)."""
    arc_h, arc_d, lab_h, lab_d = head._projections(hidden)
    scores = head.arc_scores(arc_h, arc_d)
    n = lab_d.data.shape[1]
    per_dep = ad.transpose(scores, (0, 2, 1))  # (B, n, n+1) logits per dependent
    cand_mask = _head_candidate_mask(lengths, n)
    if gold_heads is not None:
        if gold_heads.max() > n or gold_heads.min() < 0:
            raise IndexError(f"gold head index outside [0, {n}]")
        label = head.label_scores(lab_h, lab_d, gold_heads)
    else:
        pred = (per_dep.data + cand_mask).argmax(axis=-1)
        label = head.label_scores(lab_h, lab_d, pred)
    return per_dep, cand_mask, label


def biaffine_loss(hidden: Tensor, head: BiaffineHead, lengths: np.ndarray,
                  gold_heads: np.ndarray, gold_labels: np.ndarray,
                  valid: np.ndarray) -> Tensor:
    """Mean per-token arc cross-entropy plus mean per-token label
    cross-entropy, labels conditioned on the gold head."""
    per_dep, cand_mask, label = biaffine_forward(hidden, head, lengths, gold_heads)
    arc_logits = ad.add(per_dep, cand_mask)
    arc_ce = ad.cross_entropy(arc_logits, gold_heads, valid)
    lab_ce = ad.cross_entropy(label, gold_labels, valid)
    return ad.add(arc_ce, lab_ce)


def biaffine_decode(hidden: Tensor, head: BiaffineHead,
                    lengths: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Greedy decode: per-dependent argmax head, then argmax label for the
    chosen arc. Returns (pred_heads, pred_labels), each (B, n)."""
    per_dep, cand_mask, label = biaffine_forward(hidden, head, lengths, None)
    pred_heads = (per_dep.data + cand_mask).argmax(axis=-1)
    pred_labels = label.data.argmax(axis=-1)
    return pred_heads, pred_labels


class Mlp1Probe:
    """One-hidden-layer probe ReLU(LayerNorm(U V^T x)) with rank-r factors
    U, V of shape (d, r); the layernorm carries no affine parameters so
    the probe's parameter count is exactly 2*d*r."""

    def __init__(self, d: int, rank: int, rng: RngState):
        if rank < 1 or rank > d:
            raise ValueError(f"rank must be in [1, {d}], got {rank}")
        self.d, self.rank = d, rank
        self.u = Parameter(rng.truncated_normal((d, rank)), name="mlp1.u")
        self.v = Parameter(rng.truncated_normal((d, rank)), name="mlp1.v")

    def parameters(self) -> list[Parameter]:
        return [self.u, self.v]

    def forward(self, x: Tensor) -> Tensor:
        h = ad.matmul(ad.matmul(x, self.v), ad.transpose(self.u, (1, 0)))
        return ad.relu(ad.layer_norm(h))


def probe_hidden(ids: np.ndarray, lengths: np.ndarray, weights: EncoderWeights,
                 mode: ProbeMode, mask: MaskSample | None = None,
                 mask_params: MaskParams | None = None,
                 mlp1: Mlp1Probe | None = None, training: bool = False,
                 rng: RngState | None = None) -> Tensor:
    """Representation fed to the classification head under each probe.

    subnetwork: masked encoder, gradients reach theta (and the weights,
    which the subnetwork optimizer simply does not update). mlp1: frozen
    encoder in evaluation mode, probe transform on top. finetune: plain
    encoder, gradients reach the model weights.
    """
    if mode == ProbeMode.SUBNETWORK:
        if mask is None or mask_params is None or mlp1 is not None:
            raise ValueError("subnetwork mode takes a mask and no mlp1 probe")
        return encode(ids, lengths, weights, mask=mask, mask_params=mask_params,
                      training=training, rng=rng)
    if mode == ProbeMode.MLP1:
        if mlp1 is None or mask is not None:
            raise ValueError("mlp1 mode takes an mlp1 probe and no mask")
        with ad.no_grad():
            h = encode(ids, lengths, weights)
        return mlp1.forward(h.detach())
    if mode == ProbeMode.FINETUNE:
        if mask is not None or mlp1 is not None:
            raise ValueError("finetune mode takes neither mask nor mlp1")
        return encode(ids, lengths, weights, training=training, rng=rng)
    raise ValueError(f"unknown probe mode {mode!r}")


def parameter_count(mode: ProbeMode, group_count: int | None = None,
                    d: int | None = None, rank: int | None = None) -> int:
    """Free probe parameters under each composition; the classification
    head is identical across modes and excluded."""
    if mode == ProbeMode.SUBNETWORK:
        if group_count is None or group_count < 1:
            raise ValueError("subnetwork parameter count needs a positive group count")
        return int(group_count)
    if mode == ProbeMode.MLP1:
        if d is None or rank is None or rank < 1:
            raise ValueError("mlp1 parameter count needs d and a positive rank")
        return 2 * int(d) * int(rank)
    raise ValueError(f"parameter_count undefined for mode {mode!r}")
