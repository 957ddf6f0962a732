"""Single-stack transformer encoder classifier with hand-derived backprop.

Token + positional embedding, `blocks` pre-norm encoder blocks (2-head self
attention, GELU feed-forward with expansion 4), final LayerNorm, mean-pool
and a linear head. Embeddings, final norm and head form the always-active
segment; each block is one partition layer.
"""

from __future__ import annotations

import math

import numpy as np

from ..const import TRANSFORMER_FFN_EXPANSION, TRANSFORMER_HEADS
from ..core.params import ParameterVector, build_partition
from ..core.rng import GaussianStream
from .base import Batch, LossFunction, ModelError, cross_entropy

_LN_EPS = 1e-5
_GELU_C = math.sqrt(2.0 / math.pi)
_GELU_K = 0.044715


def _gelu(u: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Tanh-approximated GELU and its tanh term (kept for the backward pass)."""
    t = np.tanh(_GELU_C * (u + _GELU_K * u**3))
    return 0.5 * u * (1.0 + t), t


def _gelu_grad(u: np.ndarray, t: np.ndarray) -> np.ndarray:
    return 0.5 * (1.0 + t) + 0.5 * u * (1.0 - t**2) * _GELU_C * (1.0 + 3.0 * _GELU_K * u**2)


def _layer_norm(x: np.ndarray, gain: np.ndarray, bias: np.ndarray) -> tuple[np.ndarray, tuple]:
    mean = x.mean(axis=-1, keepdims=True)
    centered = x - mean
    inv_std = 1.0 / np.sqrt((centered**2).mean(axis=-1, keepdims=True) + _LN_EPS)
    xhat = centered * inv_std
    return xhat * gain + bias, (xhat, inv_std)


def _layer_norm_backward(
    dy: np.ndarray, gain: np.ndarray, cache: tuple
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    xhat, inv_std = cache
    width = xhat.shape[-1]
    dgain = (dy * xhat).reshape(-1, width).sum(axis=0)
    dbias = dy.reshape(-1, width).sum(axis=0)
    dxhat = dy * gain
    dx = inv_std / width * (
        width * dxhat
        - dxhat.sum(axis=-1, keepdims=True)
        - xhat * (dxhat * xhat).sum(axis=-1, keepdims=True)
    )
    return dx, dgain, dbias


class _Layout:
    """Named sub-arrays at fixed offsets inside one flat segment."""

    def __init__(self, entries: list[tuple[str, tuple[int, ...]]]) -> None:
        self.entries = entries
        self.size = sum(math.prod(shape) for _, shape in entries)

    def views(self, flat: np.ndarray) -> dict[str, np.ndarray]:
        out: dict[str, np.ndarray] = {}
        cursor = 0
        for name, shape in self.entries:
            count = math.prod(shape)
            out[name] = flat[cursor : cursor + count].reshape(shape)
            cursor += count
        return out


class TransformerLoss(LossFunction):
    name = "transformer"
    classifier = True

    def __init__(
        self, vocab: int, seq_len: int, dim: int, blocks: int, num_classes: int, seed: int
    ) -> None:
        if min(vocab, seq_len, dim, num_classes) < 1 or blocks < 0:
            raise ModelError(
                f"Invalid sizes (vocab={vocab}, seq_len={seq_len}, dim={dim}, "
                f"blocks={blocks}, num_classes={num_classes})"
            )
        if dim % TRANSFORMER_HEADS:
            raise ModelError(f"dim={dim} is not divisible by {TRANSFORMER_HEADS} heads")
        self.vocab = vocab
        self.seq_len = seq_len
        self.dim = dim
        self.blocks = blocks
        self.num_classes = num_classes
        self.heads = TRANSFORMER_HEADS
        self.head_dim = dim // TRANSFORMER_HEADS
        ffn = TRANSFORMER_FFN_EXPANSION * dim
        self.outer = _Layout(
            [
                ("tok", (vocab, dim)),
                ("pos", (seq_len, dim)),
                ("lnf_g", (dim,)),
                ("lnf_b", (dim,)),
                ("head_w", (dim, num_classes)),
                ("head_b", (num_classes,)),
            ]
        )
        self.block = _Layout(
            [
                ("ln1_g", (dim,)),
                ("ln1_b", (dim,)),
                ("wq", (dim, dim)),
                ("bq", (dim,)),
                ("wk", (dim, dim)),
                ("bk", (dim,)),
                ("wv", (dim, dim)),
                ("bv", (dim,)),
                ("wo", (dim, dim)),
                ("bo", (dim,)),
                ("ln2_g", (dim,)),
                ("ln2_b", (dim,)),
                ("w1", (dim, ffn)),
                ("b1", (ffn,)),
                ("w2", (ffn, dim)),
                ("b2", (dim,)),
            ]
        )
        super().__init__(build_partition([self.block.size] * blocks, self.outer.size), seed)

    def _unpack(self, values: np.ndarray) -> tuple[dict[str, np.ndarray], list[dict[str, np.ndarray]]]:
        outer = self.outer.views(values[: self.outer.size])
        blocks = [
            self.block.views(values[offset : offset + length])
            for offset, length in self.partition.layers
        ]
        return outer, blocks

    def initial_parameters(self, dtype: np.dtype | type = np.float64) -> ParameterVector:
        pv = ParameterVector.zeros(self.partition, dtype=dtype)
        outer, blocks = self._unpack(pv.values)
        stream = GaussianStream(self.seed)

        def normal(target: np.ndarray, scale: float) -> None:
            target[...] = stream.fill(np.empty(target.size)).reshape(target.shape) * scale

        normal(outer["tok"], 0.5)
        normal(outer["pos"], 0.1)
        outer["lnf_g"][:] = 1.0
        normal(outer["head_w"], 1.0 / math.sqrt(self.dim))
        for params in blocks:
            params["ln1_g"][:] = 1.0
            params["ln2_g"][:] = 1.0
            for name in ("wq", "wk", "wv", "wo", "w1"):
                normal(params[name], 1.0 / math.sqrt(self.dim))
            normal(params["w2"], 1.0 / math.sqrt(TRANSFORMER_FFN_EXPANSION * self.dim))
        return pv

    def _split_heads(self, x: np.ndarray) -> np.ndarray:
        batch, seq, _ = x.shape
        return x.reshape(batch, seq, self.heads, self.head_dim).transpose(0, 2, 1, 3)

    def _merge_heads(self, x: np.ndarray) -> np.ndarray:
        batch, _, seq, _ = x.shape
        return x.transpose(0, 2, 1, 3).reshape(batch, seq, self.dim)

    def _check_tokens(self, inputs: np.ndarray) -> np.ndarray:
        tokens = np.asarray(inputs, dtype=np.intp)
        if tokens.ndim != 2 or tokens.shape[1] != self.seq_len:
            raise ModelError(f"Expected token batch of shape (B, {self.seq_len}), got {tokens.shape}")
        if tokens.min() < 0 or tokens.max() >= self.vocab:
            raise ModelError(f"Token ids must lie in [0, {self.vocab})")
        return tokens

    def _run(self, values: np.ndarray, tokens: np.ndarray, keep: bool):
        outer, blocks = self._unpack(values)
        scale = 1.0 / math.sqrt(self.head_dim)
        h = outer["tok"][tokens] + outer["pos"][None, :, :]
        caches = []
        for params in blocks:
            a, ln1 = _layer_norm(h, params["ln1_g"], params["ln1_b"])
            q = self._split_heads(a @ params["wq"] + params["bq"])
            k = self._split_heads(a @ params["wk"] + params["bk"])
            v = self._split_heads(a @ params["wv"] + params["bv"])
            scores = (q @ k.transpose(0, 1, 3, 2)) * scale
            scores -= scores.max(axis=-1, keepdims=True)
            probs = np.exp(scores)
            probs /= probs.sum(axis=-1, keepdims=True)
            ctx = self._merge_heads(probs @ v)
            h1 = h + ctx @ params["wo"] + params["bo"]
            m, ln2 = _layer_norm(h1, params["ln2_g"], params["ln2_b"])
            pre = m @ params["w1"] + params["b1"]
            act, t = _gelu(pre)
            h = h1 + act @ params["w2"] + params["b2"]
            if keep:
                caches.append((a, ln1, q, k, v, probs, ctx, m, ln2, pre, act, t))
        hf, lnf = _layer_norm(h, outer["lnf_g"], outer["lnf_b"])
        pooled = hf.mean(axis=1)
        logits = pooled @ outer["head_w"] + outer["head_b"]
        return logits, (outer, blocks, caches, lnf, pooled)

    def _forward(self, values: np.ndarray, batch: Batch) -> float:
        logits, _ = self._run(values, self._check_tokens(batch.inputs), keep=False)
        loss, _ = cross_entropy(logits, batch.labels)
        return loss

    def _gradient(self, values: np.ndarray, batch: Batch) -> np.ndarray:
        tokens = self._check_tokens(batch.inputs)
        logits, (outer, blocks, caches, lnf, pooled) = self._run(values, tokens, keep=True)
        _, dlogits = cross_entropy(logits, batch.labels)
        grad = np.zeros_like(values)
        g_outer, g_blocks = self._unpack(grad)
        scale = 1.0 / math.sqrt(self.head_dim)
        width = self.dim

        g_outer["head_w"][:] = pooled.T @ dlogits
        g_outer["head_b"][:] = dlogits.sum(axis=0)
        dpooled = dlogits @ outer["head_w"].T
        dhf = np.broadcast_to(dpooled[:, None, :] / self.seq_len, (tokens.shape[0], self.seq_len, width))
        dh, g_outer["lnf_g"][:], g_outer["lnf_b"][:] = _layer_norm_backward(dhf, outer["lnf_g"], lnf)

        for params, grads, cache in zip(reversed(blocks), reversed(g_blocks), reversed(caches)):
            a, ln1, q, k, v, probs, ctx, m, ln2, pre, act, t = cache
            ffn = pre.shape[-1]
            grads["w2"][:] = act.reshape(-1, ffn).T @ dh.reshape(-1, width)
            grads["b2"][:] = dh.reshape(-1, width).sum(axis=0)
            dpre = (dh @ params["w2"].T) * _gelu_grad(pre, t)
            grads["w1"][:] = m.reshape(-1, width).T @ dpre.reshape(-1, ffn)
            grads["b1"][:] = dpre.reshape(-1, ffn).sum(axis=0)
            dm = dpre @ params["w1"].T
            dx, grads["ln2_g"][:], grads["ln2_b"][:] = _layer_norm_backward(dm, params["ln2_g"], ln2)
            dh1 = dh + dx

            grads["wo"][:] = ctx.reshape(-1, width).T @ dh1.reshape(-1, width)
            grads["bo"][:] = dh1.reshape(-1, width).sum(axis=0)
            dctx = self._split_heads(dh1 @ params["wo"].T)
            dprobs = dctx @ v.transpose(0, 1, 3, 2)
            dv = probs.transpose(0, 1, 3, 2) @ dctx
            dscores = probs * (dprobs - (dprobs * probs).sum(axis=-1, keepdims=True)) * scale
            dq = self._merge_heads(dscores @ k)
            dk = self._merge_heads(dscores.transpose(0, 1, 3, 2) @ q)
            dv = self._merge_heads(dv)

            flat_a = a.reshape(-1, width)
            da = np.zeros_like(a)
            for name, dproj in (("q", dq), ("k", dk), ("v", dv)):
                grads["w" + name][:] = flat_a.T @ dproj.reshape(-1, width)
                grads["b" + name][:] = dproj.reshape(-1, width).sum(axis=0)
                da += dproj @ params["w" + name].T
            dx, grads["ln1_g"][:], grads["ln1_b"][:] = _layer_norm_backward(da, params["ln1_g"], ln1)
            dh = dh1 + dx

        np.add.at(g_outer["tok"], tokens, dh)
        g_outer["pos"][:] = dh.sum(axis=0)
        return grad

    def predict(self, theta, batch: Batch) -> np.ndarray:
        values = theta.values if isinstance(theta, ParameterVector) else theta
        logits, _ = self._run(values, self._check_tokens(batch.inputs), keep=False)
        return logits.argmax(axis=1)


def make_tiny_transformer(
    vocab: int, seq_len: int, dim: int, blocks: int, num_classes: int, seed: int = 0
) -> TransformerLoss:
    return TransformerLoss(vocab, seq_len, dim, blocks, num_classes, seed)
