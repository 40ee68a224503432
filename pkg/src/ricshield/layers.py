"""Layer zoo for the two classifiers: linear maps, layer norm, multi-head
self-attention, MLP blocks, 2-D convolution, pooling, and the classification loss.

Token-axis reductions inside attention run in a content-canonical order
(tokens lexicographically sorted before the reduction, un-sorted after), which
makes the block exactly permutation-equivariant at the bit level rather than
merely up to float rounding. That exactness is load-bearing: classifying
grid-shuffled ciphertexts relies on patch order not mattering.
"""

from __future__ import annotations

import math

import numpy as np
from scipy.linalg.blas import dgemm

from . import autodiff as ad
from .autodiff import Tensor


# -- initializers -----------------------------------------------------------

def trunc_normal(shape, std: float, gen: np.random.Generator) -> np.ndarray:
    """Normal(0, std) with draws beyond 2 std resampled."""
    out = gen.normal(0.0, std, size=shape)
    bad = np.abs(out) > 2.0 * std
    while bad.any():
        out[bad] = gen.normal(0.0, std, size=int(bad.sum()))
        bad = np.abs(out) > 2.0 * std
    return out


def glorot_uniform(shape, fan_in: int, fan_out: int, gen: np.random.Generator) -> np.ndarray:
    limit = math.sqrt(6.0 / (fan_in + fan_out))
    return gen.uniform(-limit, limit, size=shape)


# -- token ordering ----------------------------------------------------------

def canonical_order(rows: np.ndarray) -> np.ndarray:
    """Indices that sort token rows by raw byte content (memcmp order).

    Any total order that depends only on row content works; ties can only
    occur between identical rows, where order is immaterial even at the bit
    level. Sorting fixed-width byte strings is far cheaper than a float
    lexsort over hundreds of key columns.
    """
    flat = np.ascontiguousarray(rows)
    keys = flat.view(f"|S{flat.shape[-1] * flat.itemsize}").ravel()
    return np.argsort(keys, kind="stable")


def permute_tokens(x: Tensor, idx: np.ndarray) -> Tensor:
    """Reorder rows of a (B, T, d) tensor per-batch: out[b, i] = x[b, idx[b, i]].

    idx must hold permutations (no duplicates), which lets the backward pass
    scatter by assignment instead of an elementwise add.
    """
    expanded = idx[:, :, None]
    out_data = np.take_along_axis(x.data, expanded, axis=1)

    def backward():
        if x.requires_grad:
            buf = np.zeros_like(x.data)
            np.put_along_axis(buf, expanded, out.grad, axis=1)
            ad.accumulate(x, buf, own=True)

    out = ad.from_op(out_data, (x,), backward)
    return out


def invert_permutations(idx: np.ndarray) -> np.ndarray:
    return np.argsort(idx, axis=-1)


# -- dense layers ------------------------------------------------------------

class Linear:
    """Affine map on the last axis: x @ W + b."""

    def __init__(self, in_dim: int, out_dim: int, weight: np.ndarray, bias: np.ndarray | None = None):
        self.w = Tensor(weight, requires_grad=True)
        self.b = Tensor(np.zeros(out_dim) if bias is None else bias, requires_grad=True)
        if self.w.shape != (in_dim, out_dim):
            raise ValueError(f"weight shape {self.w.shape} != ({in_dim}, {out_dim})")

    def __call__(self, x: Tensor) -> Tensor:
        return ad.add(ad.matmul(x, self.w), self.b)

    def params(self, prefix: str) -> dict[str, Tensor]:
        return {f"{prefix}.w": self.w, f"{prefix}.b": self.b}


class LayerNorm:
    """Per-row standardization over the last axis, then affine (gamma, beta)."""

    EPS = 1e-5

    def __init__(self, dim: int):
        self.gamma = Tensor(np.ones(dim), requires_grad=True)
        self.beta = Tensor(np.zeros(dim), requires_grad=True)

    def __call__(self, x: Tensor) -> Tensor:
        return layer_norm(x, self.gamma, self.beta)

    def params(self, prefix: str) -> dict[str, Tensor]:
        return {f"{prefix}.gamma": self.gamma, f"{prefix}.beta": self.beta}


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = LayerNorm.EPS) -> Tensor:
    centered = ad.add(x, ad.mul(ad.reduce_mean(x, axis=-1, keepdims=True), -1.0))
    variance = ad.reduce_mean(ad.mul(centered, centered), axis=-1, keepdims=True)
    inv_std = ad.power(ad.add(variance, eps), -0.5)
    return ad.add(ad.mul(ad.mul(centered, inv_std), gamma), beta)


# -- attention ----------------------------------------------------------------

class MultiHeadSelfAttention:
    """Pre-norm style MSA: per head softmax(Q K^T / sqrt(head_dim)) V, heads
    concatenated and projected by the output map."""

    def __init__(self, dim: int, heads: int, gen: np.random.Generator, std: float = 0.02):
        if dim % heads != 0:
            raise ValueError(f"dim {dim} not divisible by heads {heads}")
        self.dim = dim
        self.heads = heads
        self.head_dim = dim // heads
        self.wq = Linear(dim, dim, trunc_normal((dim, dim), std, gen))
        self.wk = Linear(dim, dim, trunc_normal((dim, dim), std, gen))
        self.wv = Linear(dim, dim, trunc_normal((dim, dim), std, gen))
        self.wo = Linear(dim, dim, trunc_normal((dim, dim), std, gen))

    def __call__(self, x: Tensor) -> Tensor:
        """x: (B, T, dim) where row 0 of each batch item is the class token."""
        batch, tokens, dim = x.shape
        # canonical order: class token pinned at 0, patch tokens sorted by content
        order = np.empty((batch, tokens), dtype=np.int64)
        order[:, 0] = 0
        for b in range(batch):
            order[b, 1:] = 1 + canonical_order(x.data[b, 1:])
        xs = permute_tokens(x, order)

        if not np.all(np.isfinite(xs.data)):
            raise FloatingPointError("non-finite attention input")
        q = self._split(self.wq(xs), batch, tokens)
        k = self._split(self.wk(xs), batch, tokens)
        v = self._split(self.wv(xs), batch, tokens)
        logits = ad.mul(ad.matmul(q, ad.transpose(k, (0, 1, 3, 2))),
                        1.0 / math.sqrt(self.head_dim))
        if not np.all(np.isfinite(logits.data)):
            raise FloatingPointError("non-finite attention logits")
        weights = ad.softmax(logits, axis=-1)
        mixed = ad.matmul(weights, v)  # (B, H, T, head_dim)
        merged = ad.reshape(ad.transpose(mixed, (0, 2, 1, 3)), (batch, tokens, dim))
        projected = self.wo(merged)
        return permute_tokens(projected, invert_permutations(order))

    def _split(self, x: Tensor, batch: int, tokens: int) -> Tensor:
        headed = ad.reshape(x, (batch, tokens, self.heads, self.head_dim))
        return ad.transpose(headed, (0, 2, 1, 3))

    def params(self, prefix: str) -> dict[str, Tensor]:
        out: dict[str, Tensor] = {}
        for name, lin in (("wq", self.wq), ("wk", self.wk), ("wv", self.wv), ("wo", self.wo)):
            out.update(lin.params(f"{prefix}.{name}"))
        return out


class TransformerLayer:
    """One encoder layer: residual MSA block then residual MLP block, both pre-norm."""

    def __init__(self, dim: int, mlp_hidden: int, heads: int, gen: np.random.Generator,
                 std: float = 0.02):
        self.ln1 = LayerNorm(dim)
        self.attn = MultiHeadSelfAttention(dim, heads, gen, std)
        self.ln2 = LayerNorm(dim)
        self.fc1 = Linear(dim, mlp_hidden, trunc_normal((dim, mlp_hidden), std, gen))
        self.fc2 = Linear(mlp_hidden, dim, trunc_normal((mlp_hidden, dim), std, gen))

    def msa_block(self, x: Tensor) -> Tensor:
        return ad.add(self.attn(self.ln1(x)), x)

    def mlp_block(self, x: Tensor) -> Tensor:
        return ad.add(self.fc2(ad.gelu(self.fc1(self.ln2(x)))), x)

    def __call__(self, x: Tensor) -> Tensor:
        return self.mlp_block(self.msa_block(x))

    def params(self, prefix: str) -> dict[str, Tensor]:
        out = self.ln1.params(f"{prefix}.ln1")
        out.update(self.attn.params(f"{prefix}.attn"))
        out.update(self.ln2.params(f"{prefix}.ln2"))
        out.update(self.fc1.params(f"{prefix}.fc1"))
        out.update(self.fc2.params(f"{prefix}.fc2"))
        return out


# -- convolution / pooling -----------------------------------------------------

def _gemm_acc(c: np.ndarray, a: np.ndarray, b: np.ndarray) -> None:
    """c += a @ b in place for C-contiguous operands (runs as one BLAS call)."""
    dgemm(1.0, b.T, a.T, beta=1.0, c=c.T, overwrite_c=True)


def conv2d(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """Same-padded stride-1 cross-correlation. x: (B,H,W,Cin), w: (kh,kw,Cin,Cout).

    One contiguous input slab per kernel tap, accumulated straight onto the
    bias-filled output with beta-1 GEMMs; the slabs stay alive for the
    backward pass (freed with the tape).
    """
    bsz, h, wid, cin = x.shape
    kh, kw, wcin, cout = w.shape
    if wcin != cin:
        raise ValueError(f"input channels {cin} != filter channels {wcin}")
    ph, pw = kh // 2, kw // 2
    pad_shape = (bsz, h + 2 * ph, wid + 2 * pw, cin)

    padded = np.pad(x.data, ((0, 0), (ph, ph), (pw, pw), (0, 0)))
    slabs = np.empty((kh, kw, bsz * h * wid, cin), dtype=np.float64)
    shifted = slabs.reshape(kh, kw, bsz, h, wid, cin)
    for i in range(kh):
        for j in range(kw):
            shifted[i, j] = padded[:, i:i + h, j:j + wid, :]
    del padded

    out_flat = np.empty((bsz * h * wid, cout), dtype=np.float64)
    out_flat[:] = b.data
    for i in range(kh):
        for j in range(kw):
            _gemm_acc(out_flat, slabs[i, j], w.data[i, j])
    out_data = out_flat.reshape(bsz, h, wid, cout)

    def backward():
        g = out.grad
        gflat = np.ascontiguousarray(g.reshape(-1, cout))
        if b.requires_grad:
            ad.accumulate(b, g.sum(axis=(0, 1, 2)), own=True)
        if w.requires_grad:
            gw = np.empty_like(w.data)
            for i in range(kh):
                for j in range(kw):
                    np.matmul(slabs[i, j].T, gflat, out=gw[i, j])
            ad.accumulate(w, gw, own=True)
        if x.requires_grad:
            gpad = np.zeros(pad_shape)
            gslab = np.empty((bsz * h * wid, cin))
            for i in range(kh):
                for j in range(kw):
                    np.matmul(gflat, w.data[i, j].T, out=gslab)
                    gpad[:, i:i + h, j:j + wid, :] += gslab.reshape(bsz, h, wid, cin)
            ad.accumulate(x, np.ascontiguousarray(gpad[:, ph:ph + h, pw:pw + wid, :]),
                          own=True)

    out = ad.from_op(out_data, (x, w, b), backward)
    return out


def maxpool2(x: Tensor) -> Tensor:
    """2x2 max pooling, stride 2; odd trailing rows/cols are -inf padded.

    The backward pass splits the gradient evenly across tied maxima inside a
    window (the subgradient average), which keeps it a pure broadcast over the
    pooling view instead of an argmax scatter.
    """
    bsz, h, wid, c = x.shape
    oh, ow = -(-h // 2), -(-wid // 2)
    data = x.data
    padded = bool(h % 2 or wid % 2)
    if padded:
        data = np.pad(data, ((0, 0), (0, oh * 2 - h), (0, ow * 2 - wid), (0, 0)),
                      constant_values=-np.inf)
    view = data.reshape(bsz, oh, 2, ow, 2, c)
    out_data = view.max(axis=(2, 4))

    def backward():
        if x.requires_grad:
            peak = out_data.reshape(bsz, oh, 1, ow, 1, c)
            mask = view == peak
            count = mask.sum(axis=(2, 4), keepdims=True)
            g = out.grad.reshape(bsz, oh, 1, ow, 1, c)
            gx = (mask * (g / count)).reshape(data.shape)
            if padded:
                gx = np.ascontiguousarray(gx[:, :h, :wid, :])
            ad.accumulate(x, gx, own=True)

    out = ad.from_op(out_data, (x,), backward)
    return out


def global_avg_pool(x: Tensor) -> Tensor:
    """Channel-wise spatial mean: (B,H,W,C) -> (B,C)."""
    return ad.reduce_mean(x, axis=(1, 2))


# -- loss -----------------------------------------------------------------------

LOSS_PROB_FLOOR = 1e-12


def cross_entropy(probs: Tensor, labels: np.ndarray, diagnostics: dict | None = None) -> Tensor:
    """Mean negative log-probability of the true class.

    Probabilities at or below the floor are clamped before the log; the clamp
    count is surfaced through `diagnostics` rather than silently absorbed.
    """
    labels = np.asarray(labels, dtype=np.int64)
    picked = ad.take(probs, (np.arange(labels.size), labels))
    if diagnostics is not None:
        diagnostics["clamped"] = int((picked.data <= LOSS_PROB_FLOOR).sum())
    return ad.mul(ad.reduce_mean(ad.log(ad.maximum(picked, LOSS_PROB_FLOOR))), -1.0)
