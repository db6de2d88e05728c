"""Horizontal-vertical detail attention and the transformer block around it.

A detail branch runs horizontal and vertical StairConv paths, fuses them
with 1x1/3x3 conv stages and residual adds, and three such branches feed the
Q/K/V projections of a spatial self-attention whose map is the row-softmaxed
outer product of two per-position scalars. Attention cost is hw x hw, so a
cap keeps it confined to coarse feature maps.
"""

from __future__ import annotations

import numpy as np

from . import nn
from . import tensor as T
from .stairconv import HORIZONTAL, VERTICAL, StairConv
from .tensor import ConfigError, ParamStore, ShapeError, Tensor


class HvdaBranch:
    """StairConv detail extractor producing one fused c-channel map."""

    def __init__(self, store: ParamStore, prefix: str, rng: np.random.Generator,
                 c: int, k: int = 3):
        self.stair_h = StairConv(store, f"{prefix}.stair_h", rng, HORIZONTAL, c, c, k=k)
        self.stair_v = StairConv(store, f"{prefix}.stair_v", rng, VERTICAL, c, c, k=k)
        self.reduce = nn.Conv2d(store, f"{prefix}.reduce", rng, 2 * c, c, 1, pad="valid",
                                init_gain=2.0)
        self.bn_reduce = nn.BatchNorm(store, f"{prefix}.bn_reduce", c)
        self.deep = nn.Conv2d(store, f"{prefix}.deep", rng, c, c, 3, pad="same",
                              init_gain=2.0)
        self.bn_deep = nn.BatchNorm(store, f"{prefix}.bn_deep", c)

    def __call__(self, x: Tensor, training: bool) -> Tensor:
        x_hd = self.stair_h(x, training)
        x_vd = self.stair_v(x, training)
        reduced = T.relu(self.bn_reduce(self.reduce(T.concat([x_hd, x_vd])), training))
        x_cat = T.add(T.add(reduced, x_hd), x_vd)
        x_c = x_cat
        deepened = T.relu(T.add(self.bn_deep(self.deep(x_c), training), x_c))
        return T.add(T.add(deepened, x_hd), x_vd)


def attention_map(q: Tensor, k: Tensor) -> Tensor:
    """Row-softmaxed outer product of two hw-vectors: row i weights positions."""
    if q.data.ndim != 1 or k.data.ndim != 1 or q.shape != k.shape:
        raise ShapeError(f"attention_map expects equal 1-D vectors, got {q.shape}, {k.shape}")
    hw = q.shape[0]
    scores = T.matmul(T.reshape(q, (hw, 1)), T.reshape(k, (1, hw)))
    return T.softmax_rows(scores)


def attention_from_qkv(q: Tensor, k: Tensor, v: Tensor) -> Tensor:
    """Weight the (c, hw) value matrix by the attention map: out[:, i] = V @ B[i, :]."""
    b = attention_map(q, k)
    return T.matmul(v, T.transpose2d(b))


class HvdaAttention:
    """Spatial self-attention with detail-branch Q/K/V (or plain GSA-style
    projections when `detail=False`, the ablation substitute)."""

    def __init__(self, store: ParamStore, prefix: str, rng: np.random.Generator,
                 c: int, detail: bool = True, k: int = 3, hw_cap: int = 4096):
        self.c = c
        self.hw_cap = hw_cap
        self.detail = detail
        if detail:
            self.branch_q = HvdaBranch(store, f"{prefix}.branch_q", rng, c, k)
            self.branch_k = HvdaBranch(store, f"{prefix}.branch_k", rng, c, k)
            self.branch_v = HvdaBranch(store, f"{prefix}.branch_v", rng, c, k)
        self.proj_q = nn.Conv2d(store, f"{prefix}.proj_q", rng, c, 1, 1, pad="valid")
        self.proj_k = nn.Conv2d(store, f"{prefix}.proj_k", rng, c, 1, 1, pad="valid")
        self.proj_v = nn.Conv2d(store, f"{prefix}.proj_v", rng, c, c, 1, pad="valid")
        self.proj_out = nn.Conv2d(store, f"{prefix}.proj_out", rng, c, c, 1, pad="valid")

    def _qkv_maps(self, x: Tensor, training: bool):
        n, h, w, c = x.shape
        if h * w > self.hw_cap:
            raise ConfigError(
                f"attention map would be {h * w}x{h * w} (cap {self.hw_cap}); "
                "apply this block only at the deep, downsampled stages")
        if self.detail:
            fq = self.branch_q(x, training)
            fk = self.branch_k(x, training)
            fv = self.branch_v(x, training)
        else:
            fq = fk = fv = x
        return self.proj_q(fq), self.proj_k(fk), self.proj_v(fv)

    def attention_maps(self, x: Tensor, training: bool) -> list[Tensor]:
        """Per-sample hw x hw maps, as used by the forward pass."""
        n, h, w, _ = x.shape
        qm, km, _ = self._qkv_maps(x, training)
        maps = []
        for i in range(n):
            q = T.reshape(T.take_batch(qm, i), (h * w,))
            k = T.reshape(T.take_batch(km, i), (h * w,))
            maps.append(attention_map(q, k))
        return maps

    def __call__(self, x: Tensor, training: bool, residual: bool = True) -> Tensor:
        n, h, w, c = x.shape
        hw = h * w
        qm, km, vm = self._qkv_maps(x, training)
        # batched form of attention_from_qkv, one map per sample
        q = T.reshape(qm, (n, hw))
        k = T.reshape(km, (n, hw))
        b = T.softmax_channels(T.outer_batch(q, k))
        v = T.swap_last2(T.reshape(vm, (n, hw, c)))  # (n, c, hw)
        o = T.apply_attention(v, b)
        att = T.reshape(T.swap_last2(o), (n, h, w, c))
        out = self.proj_out(att)
        return T.add(x, out) if residual else out


class DetailsTransformerBlock:
    """Two chained pre-norm submodules: x += attn(LN(x)); x += MLP(LN(x))."""

    def __init__(self, store: ParamStore, prefix: str, rng: np.random.Generator,
                 c: int, detail: bool = True, k: int = 3, hidden_mult: int = 4,
                 hw_cap: int = 4096):
        self.subs = []
        for s in (1, 2):
            ln1 = nn.LayerNorm(store, f"{prefix}.sub{s}.ln1", c)
            attn = HvdaAttention(store, f"{prefix}.sub{s}.attn", rng, c,
                                 detail=detail, k=k, hw_cap=hw_cap)
            ln2 = nn.LayerNorm(store, f"{prefix}.sub{s}.ln2", c)
            mlp = nn.Mlp(store, f"{prefix}.sub{s}.mlp", rng, c, hidden_mult)
            self.subs.append((ln1, attn, ln2, mlp))

    def __call__(self, x: Tensor, training: bool) -> Tensor:
        for ln1, attn, ln2, mlp in self.subs:
            x = T.add(x, attn(ln1(x), training, residual=False))
            x = T.add(x, mlp(ln2(x)))
        return x
