"""The captioning network: video encoder, text encoder over the serialized
auxiliary stream, parameter-free concatenation fusion, and an autoregressive
decoder, with a hand-written backward pass for the whole stack."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import layers
from .datagen import Instance
from .nncore import ParamStore
from .timetok import Vocab, serialize_instance

ATTN_KEYS = ("wq", "bq", "wk", "bk", "wv", "bv", "wo", "bo")


@dataclass(frozen=True)
class ModelConfig:
    vocab_size: int
    d: int = 64
    heads: int = 4
    video_layers: int = 2
    text_layers: int = 2
    decoder_layers: int = 2
    frames: int = 48
    feat_dim: int = 16
    max_caption: int = 96
    max_aux: int = 256

    def __post_init__(self) -> None:
        if self.d % self.heads != 0:
            raise ValueError("d must be divisible by heads")
        if min(self.video_layers, self.text_layers, self.decoder_layers) < 1:
            raise ValueError("all layer counts must be >= 1")


@dataclass
class Batch:
    """Padded training batch; masks are boolean validity flags."""

    videos: np.ndarray     # (B, F, feat_dim)
    aux: np.ndarray        # (B, n) token ids
    aux_valid: np.ndarray  # (B, n)
    cap_in: np.ndarray     # (B, T) decoder inputs (BOS-prefixed)
    cap_tgt: np.ndarray    # (B, T) shifted targets (EOS-suffixed)
    cap_mask: np.ndarray   # (B, T) True at real target positions
    ids: tuple[str, ...] = ()


def make_batch(
    instances: Sequence[Instance], vocab: Vocab, config: ModelConfig, dtype=np.float32
) -> Batch:
    if any(len(inst.caption) == 0 for inst in instances):
        raise ValueError("cannot batch an instance with an empty caption")
    aux_seqs = [serialize_instance(inst, vocab, config.max_aux).ids for inst in instances]
    caps = [vocab.word_ids(inst.caption)[: config.max_caption] for inst in instances]
    b = len(instances)
    n = max(len(s) for s in aux_seqs)
    t = max(len(c) for c in caps) + 1  # room for BOS / EOS
    aux = np.full((b, n), vocab.pad, dtype=np.int64)
    aux_valid = np.zeros((b, n), dtype=bool)
    cap_in = np.full((b, t), vocab.pad, dtype=np.int64)
    cap_tgt = np.full((b, t), vocab.pad, dtype=np.int64)
    cap_mask = np.zeros((b, t), dtype=bool)
    for i, (seq, cap) in enumerate(zip(aux_seqs, caps)):
        aux[i, : len(seq)] = seq
        aux_valid[i, : len(seq)] = True
        cap_in[i, 0] = vocab.bos
        cap_in[i, 1 : len(cap) + 1] = cap
        cap_tgt[i, : len(cap)] = cap
        cap_tgt[i, len(cap)] = vocab.eos
        cap_mask[i, : len(cap) + 1] = True
    videos = np.stack([inst.video for inst in instances]).astype(dtype)
    return Batch(videos, aux, aux_valid, cap_in, cap_tgt, cap_mask,
                 ids=tuple(inst.id for inst in instances))


def _truncated_normal(rng: np.random.Generator, shape, std: float, dtype) -> np.ndarray:
    # resample values past two standard deviations
    x = rng.standard_normal(shape)
    mask = np.abs(x) > 2.0
    while mask.any():
        x[mask] = rng.standard_normal(int(mask.sum()))
        mask = np.abs(x) > 2.0
    return (std * x).astype(dtype)


def init_params(config: ModelConfig, seed: int, dtype=np.float32) -> ParamStore:
    """Truncated-normal (std 0.02) weights; unit layer-norm gains; zero biases."""
    rng = np.random.default_rng(seed)
    params = ParamStore()
    d, v = config.d, config.vocab_size

    def weight(name: str, shape) -> None:
        params.add(name, _truncated_normal(rng, shape, 0.02, dtype))

    def zeros(name: str, shape) -> None:
        params.add(name, np.zeros(shape, dtype=dtype))

    def ones(name: str, shape) -> None:
        params.add(name, np.ones(shape, dtype=dtype))

    def block(prefix: str, cross: bool = False) -> None:
        ones(f"{prefix}.ln1.g", d)
        zeros(f"{prefix}.ln1.b", d)
        for key in ATTN_KEYS:
            (weight if key.startswith("w") else zeros)(
                f"{prefix}.attn.{key}", (d, d) if key.startswith("w") else d
            )
        ln_ffn = "ln3" if cross else "ln2"
        if cross:
            ones(f"{prefix}.ln2.g", d)
            zeros(f"{prefix}.ln2.b", d)
            for key in ATTN_KEYS:
                (weight if key.startswith("w") else zeros)(
                    f"{prefix}.xattn.{key}", (d, d) if key.startswith("w") else d
                )
        ones(f"{prefix}.{ln_ffn}.g", d)
        zeros(f"{prefix}.{ln_ffn}.b", d)
        weight(f"{prefix}.ffn.w1", (d, 4 * d))
        zeros(f"{prefix}.ffn.b1", 4 * d)
        weight(f"{prefix}.ffn.w2", (4 * d, d))
        zeros(f"{prefix}.ffn.b2", d)

    weight("venc.proj.w", (config.feat_dim, d))
    zeros("venc.proj.b", d)
    weight("venc.pos", (config.frames, d))
    for i in range(config.video_layers):
        block(f"venc.{i}")
    ones("venc.lnf.g", d)
    zeros("venc.lnf.b", d)

    weight("tenc.emb", (v, d))
    weight("tenc.pos", (config.max_aux, d))
    for i in range(config.text_layers):
        block(f"tenc.{i}")
    ones("tenc.lnf.g", d)
    zeros("tenc.lnf.b", d)

    weight("dec.emb", (v, d))
    weight("dec.pos", (config.max_caption + 1, d))
    for i in range(config.decoder_layers):
        block(f"dec.{i}", cross=True)
    ones("dec.lnf.g", d)
    zeros("dec.lnf.b", d)
    weight("dec.out.w", (d, v))
    zeros("dec.out.b", v)
    return params


def fuse(video_emb: np.ndarray, text_emb: np.ndarray) -> np.ndarray:
    """Parameter-free fusion: row-wise concatenation, video rows first."""
    if video_emb.shape[-1] != text_emb.shape[-1]:
        raise ValueError("embedding widths differ")
    return np.concatenate([video_emb, text_emb], axis=-2)


class Model:
    """Config + parameters, with forward/backward over padded batches."""

    def __init__(self, config: ModelConfig, params: ParamStore):
        self.config = config
        self.params = params
        self._fwd = None

    @classmethod
    def create(cls, config: ModelConfig, seed: int, dtype=np.float32) -> "Model":
        return cls(config, init_params(config, seed, dtype))

    # -- parameter access -------------------------------------------------

    def _v(self, name: str) -> np.ndarray:
        return self.params[name].value

    def _attn(self, prefix: str) -> dict[str, np.ndarray]:
        return {k: self._v(f"{prefix}.{k}") for k in ATTN_KEYS}

    def _acc(self, name: str, grad: np.ndarray) -> None:
        self.params[name].grad += grad

    def _acc_attn(self, prefix: str, grads: dict[str, np.ndarray]) -> None:
        for k, g in grads.items():
            self._acc(f"{prefix}.{k}", g)

    # -- encoders ----------------------------------------------------------

    def _stack(self, prefix: str, x: np.ndarray, n_layers: int, key_mask):
        caches = []
        for i in range(n_layers):
            p = f"{prefix}.{i}"
            h, c_ln1 = layers.layer_norm(x, self._v(f"{p}.ln1.g"), self._v(f"{p}.ln1.b"))
            a, c_att = layers.attention(h, h, self._attn(f"{p}.attn"),
                                        self.config.heads, key_mask)
            x = x + a
            h2, c_ln2 = layers.layer_norm(x, self._v(f"{p}.ln2.g"), self._v(f"{p}.ln2.b"))
            f, c_ffn = layers.feed_forward(
                h2, self._v(f"{p}.ffn.w1"), self._v(f"{p}.ffn.b1"),
                self._v(f"{p}.ffn.w2"), self._v(f"{p}.ffn.b2"))
            x = x + f
            caches.append((c_ln1, c_att, c_ln2, c_ffn))
        y, c_lnf = layers.layer_norm(x, self._v(f"{prefix}.lnf.g"), self._v(f"{prefix}.lnf.b"))
        return y, (caches, c_lnf)

    def _stack_bwd(self, prefix: str, dout: np.ndarray, cache, n_layers: int) -> np.ndarray:
        caches, c_lnf = cache
        dx, dg, db = layers.layer_norm_bwd(dout, c_lnf)
        self._acc(f"{prefix}.lnf.g", dg)
        self._acc(f"{prefix}.lnf.b", db)
        for i in reversed(range(n_layers)):
            p = f"{prefix}.{i}"
            c_ln1, c_att, c_ln2, c_ffn = caches[i]
            dh2, (dw1, db1, dw2, db2) = layers.feed_forward_bwd(dx, c_ffn)
            self._acc(f"{p}.ffn.w1", dw1)
            self._acc(f"{p}.ffn.b1", db1)
            self._acc(f"{p}.ffn.w2", dw2)
            self._acc(f"{p}.ffn.b2", db2)
            dres, dg2, db2n = layers.layer_norm_bwd(dh2, c_ln2)
            self._acc(f"{p}.ln2.g", dg2)
            self._acc(f"{p}.ln2.b", db2n)
            dx = dx + dres
            dxq, dxkv, agr = layers.attention_bwd(dx, c_att)
            self._acc_attn(f"{p}.attn", agr)
            dres, dg1, db1n = layers.layer_norm_bwd(dxq + dxkv, c_ln1)
            self._acc(f"{p}.ln1.g", dg1)
            self._acc(f"{p}.ln1.b", db1n)
            dx = dx + dres
        return dx

    def encode_video(self, frames: np.ndarray):
        """(B, F, feat_dim) -> (B, F, d) embeddings plus backward cache."""
        if frames.shape[-2:] != (self.config.frames, self.config.feat_dim):
            raise ValueError(
                f"expected frames of shape (..., {self.config.frames}, "
                f"{self.config.feat_dim}), got {frames.shape}")
        x = layers.linear(frames, self._v("venc.proj.w"), self._v("venc.proj.b"))
        x = x + self._v("venc.pos")[None, :, :]
        emb, cache = self._stack("venc", x, self.config.video_layers, None)
        return emb, (frames, cache)

    def _encode_video_bwd(self, demb: np.ndarray, cache) -> None:
        frames, stack_cache = cache
        dx = self._stack_bwd("venc", demb, stack_cache, self.config.video_layers)
        self._acc("venc.pos", dx.sum(axis=0))
        _, dw, db = layers.linear_bwd(dx, frames, self._v("venc.proj.w"))
        self._acc("venc.proj.w", dw)
        self._acc("venc.proj.b", db)

    def encode_text(self, tokens: np.ndarray, valid: np.ndarray):
        """(B, n) token ids -> (B, n, d); padded keys masked from attention."""
        if tokens.max() >= self.config.vocab_size or tokens.min() < 0:
            raise ValueError("token id out of vocabulary")
        if tokens.shape[1] > self.config.max_aux:
            raise ValueError("auxiliary sequence longer than max_aux")
        x = self._v("tenc.emb")[tokens] + self._v("tenc.pos")[None, : tokens.shape[1], :]
        key_mask = layers.key_mask_from_valid(valid)
        emb, cache = self._stack("tenc", x, self.config.text_layers, key_mask)
        return emb, (tokens, cache)

    def _encode_text_bwd(self, demb: np.ndarray, cache) -> None:
        tokens, stack_cache = cache
        dx = self._stack_bwd("tenc", demb, stack_cache, self.config.text_layers)
        np.add.at(self.params["tenc.emb"].grad, tokens, dx)
        np.add.at(
            self.params["tenc.pos"].grad,
            np.arange(tokens.shape[1]),
            dx.sum(axis=0),
        )

    # -- decoder -----------------------------------------------------------

    def _decode(self, cap_in: np.ndarray, memory: np.ndarray, mem_valid: np.ndarray):
        t = cap_in.shape[1]
        x = self._v("dec.emb")[cap_in] + self._v("dec.pos")[None, :t, :]
        cmask = layers.causal_mask(t)
        mem_mask = layers.key_mask_from_valid(mem_valid)
        caches = []
        for i in range(self.config.decoder_layers):
            p = f"dec.{i}"
            h, c_ln1 = layers.layer_norm(x, self._v(f"{p}.ln1.g"), self._v(f"{p}.ln1.b"))
            a, c_self = layers.attention(h, h, self._attn(f"{p}.attn"),
                                         self.config.heads, cmask)
            x = x + a
            h2, c_ln2 = layers.layer_norm(x, self._v(f"{p}.ln2.g"), self._v(f"{p}.ln2.b"))
            xa, c_cross = layers.attention(h2, memory, self._attn(f"{p}.xattn"),
                                           self.config.heads, mem_mask)
            x = x + xa
            h3, c_ln3 = layers.layer_norm(x, self._v(f"{p}.ln3.g"), self._v(f"{p}.ln3.b"))
            f, c_ffn = layers.feed_forward(
                h3, self._v(f"{p}.ffn.w1"), self._v(f"{p}.ffn.b1"),
                self._v(f"{p}.ffn.w2"), self._v(f"{p}.ffn.b2"))
            x = x + f
            caches.append((c_ln1, c_self, c_ln2, c_cross, c_ln3, c_ffn))
        y, c_lnf = layers.layer_norm(x, self._v("dec.lnf.g"), self._v("dec.lnf.b"))
        logits = layers.linear(y, self._v("dec.out.w"), self._v("dec.out.b"))
        return logits, (cap_in, caches, c_lnf, y)

    def _decode_bwd(self, dlogits: np.ndarray, cache) -> np.ndarray:
        cap_in, caches, c_lnf, y = cache
        dy, dwo, dbo = layers.linear_bwd(dlogits, y, self._v("dec.out.w"))
        self._acc("dec.out.w", dwo)
        self._acc("dec.out.b", dbo)
        dx, dg, db = layers.layer_norm_bwd(dy, c_lnf)
        self._acc("dec.lnf.g", dg)
        self._acc("dec.lnf.b", db)
        dmem = 0.0
        for i in reversed(range(self.config.decoder_layers)):
            p = f"dec.{i}"
            c_ln1, c_self, c_ln2, c_cross, c_ln3, c_ffn = caches[i]
            dh3, (dw1, db1, dw2, db2) = layers.feed_forward_bwd(dx, c_ffn)
            self._acc(f"{p}.ffn.w1", dw1)
            self._acc(f"{p}.ffn.b1", db1)
            self._acc(f"{p}.ffn.w2", dw2)
            self._acc(f"{p}.ffn.b2", db2)
            dres, dg3, db3 = layers.layer_norm_bwd(dh3, c_ln3)
            self._acc(f"{p}.ln3.g", dg3)
            self._acc(f"{p}.ln3.b", db3)
            dx = dx + dres
            dxq, dmem_i, xgr = layers.attention_bwd(dx, c_cross)
            self._acc_attn(f"{p}.xattn", xgr)
            dmem = dmem + dmem_i
            dres, dg2, db2n = layers.layer_norm_bwd(dxq, c_ln2)
            self._acc(f"{p}.ln2.g", dg2)
            self._acc(f"{p}.ln2.b", db2n)
            dx = dx + dres
            dxq, dxkv, sgr = layers.attention_bwd(dx, c_self)
            self._acc_attn(f"{p}.attn", sgr)
            dres, dg1, db1n = layers.layer_norm_bwd(dxq + dxkv, c_ln1)
            self._acc(f"{p}.ln1.g", dg1)
            self._acc(f"{p}.ln1.b", db1n)
            dx = dx + dres
        np.add.at(self.params["dec.emb"].grad, cap_in, dx)
        np.add.at(self.params["dec.pos"].grad, np.arange(cap_in.shape[1]), dx.sum(axis=0))
        return dmem

    # -- full forward / backward -------------------------------------------

    def forward_logits(self, batch: Batch) -> np.ndarray:
        v_emb, v_cache = self.encode_video(batch.videos)
        t_emb, t_cache = self.encode_text(batch.aux, batch.aux_valid)
        memory = fuse(v_emb, t_emb)
        mem_valid = np.concatenate(
            [np.ones(batch.videos.shape[:2], dtype=bool), batch.aux_valid], axis=1)
        logits, d_cache = self._decode(batch.cap_in, memory, mem_valid)
        self._fwd = (batch, v_cache, t_cache, d_cache, logits)
        return logits

    def token_losses(self, batch: Batch) -> np.ndarray:
        """Per-position cross-entropy (zero at padded positions)."""
        logits = self.forward_logits(batch)
        logp = layers.log_softmax(logits)
        nll = -np.take_along_axis(logp, batch.cap_tgt[:, :, None], axis=2)[:, :, 0]
        return np.where(batch.cap_mask, nll, 0.0)

    def forward_loss(self, batch: Batch) -> float:
        """Teacher-forced mean per-token cross-entropy over non-pad targets."""
        nll = self.token_losses(batch)
        return float(nll.sum() / batch.cap_mask.sum())

    def backward(self) -> None:
        """Backprop the mean cross-entropy of the last forward_loss call."""
        batch, _, _, _, logits = self._fwd
        probs = np.exp(layers.log_softmax(logits))
        count = batch.cap_mask.sum()
        dlogits = probs.copy()
        rows = np.arange(batch.cap_tgt.shape[0])[:, None]
        cols = np.arange(batch.cap_tgt.shape[1])[None, :]
        dlogits[rows, cols, batch.cap_tgt] -= 1.0
        dlogits *= batch.cap_mask[:, :, None] / count
        self.backward_from_dlogits(dlogits)

    def backward_from_dlogits(self, dlogits: np.ndarray) -> None:
        batch, v_cache, t_cache, d_cache, _ = self._fwd
        dmem = self._decode_bwd(dlogits, d_cache)
        f = batch.videos.shape[1]
        self._encode_video_bwd(dmem[:, :f, :], v_cache)
        self._encode_text_bwd(dmem[:, f:, :], t_cache)
        self._fwd = None

    def loss_and_grads(self, batch: Batch) -> float:
        self.params.zero_grads()
        loss = self.forward_loss(batch)
        self.backward()
        return loss

    # -- single-instance conveniences ---------------------------------------

    def encode_memory(self, instance: Instance, vocab: Vocab):
        """Fused memory (M, d) and its validity mask for one instance."""
        aux = serialize_instance(instance, vocab, self.config.max_aux).ids
        tokens = np.asarray([aux], dtype=np.int64)
        valid = np.ones_like(tokens, dtype=bool)
        v_emb, _ = self.encode_video(instance.video[None].astype(self._v("venc.proj.w").dtype))
        t_emb, _ = self.encode_text(tokens, valid)
        memory = fuse(v_emb, t_emb)[0]
        return memory, np.ones(memory.shape[0], dtype=bool)

    def astype(self, dtype) -> "Model":
        return Model(self.config, self.params.astype(dtype))
