"""Beam search with repetition and length penalties.

The search itself is model-agnostic: it drives a session object exposing a
``step`` method, so toy distributions can be searched with the same code
path as the incremental-cache decoder session of the real network.
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Protocol, Sequence

import numpy as np

from . import layers
from .datagen import Instance
from .model import Model
from .timetok import Vocab


@dataclass(frozen=True)
class DecodeConfig:
    beam: int = 4
    repetition_penalty: float = 1.2
    length_penalty: float = 1.0
    max_steps: int = 97

    def __post_init__(self) -> None:
        if self.beam < 1 or self.repetition_penalty < 1.0 or self.max_steps < 1:
            raise ValueError("invalid decode configuration")


@dataclass
class DecodeResult:
    tokens: list[int]
    score: float
    truncated: bool


class DecoderSession(Protocol):
    def step(self, last_tokens: np.ndarray, reorder: np.ndarray | None) -> np.ndarray:
        """Advance each beam by one position and return logits (beams, V).

        ``reorder`` maps current beams to the previous step's beam indices
        (None on the first step, which always has a single beam).
        """


def apply_repetition_penalty(logits: np.ndarray, seen: Sequence[set[int]], penalty: float) -> np.ndarray:
    """Rescale logits of already-generated tokens: positive logits are
    divided by the penalty, negative ones multiplied."""
    if penalty == 1.0:
        return logits
    out = logits.copy()
    for b, tokens in enumerate(seen):
        for tok in tokens:
            v = out[b, tok]
            out[b, tok] = v / penalty if v > 0 else v * penalty
    return out


def beam_search(
    session: DecoderSession,
    cfg: DecodeConfig,
    bos_id: int,
    eos_id: int,
    banned_ids: Sequence[int] = (),
) -> DecodeResult:
    beams: list[list[int]] = [[]]
    logprobs = np.array([0.0])
    last = np.array([bos_id], dtype=np.int64)
    reorder: np.ndarray | None = None
    finished: list[tuple[float, int, list[int], bool]] = []

    def final_score(logprob: float, length: int) -> float:
        return logprob / max(1, length) ** cfg.length_penalty

    for _ in range(cfg.max_steps):
        logits = session.step(last, reorder)
        logits = apply_repetition_penalty(
            logits, [set(b) for b in beams], cfg.repetition_penalty)
        logp = layers.log_softmax(logits.astype(np.float64))
        for tok in banned_ids:
            logp[:, tok] = -np.inf
        total = logprobs[:, None] + logp
        flat = total.reshape(-1)
        n_vocab = logp.shape[1]
        # rank by score desc, then token id asc, then source beam order
        tokens_key = np.tile(np.arange(n_vocab), len(beams))
        beams_key = np.repeat(np.arange(len(beams)), n_vocab)
        order = np.lexsort((beams_key, tokens_key, -flat))
        new_beams: list[list[int]] = []
        new_logprobs: list[float] = []
        new_last: list[int] = []
        new_reorder: list[int] = []
        # Consider the top 2*beam candidates: EOS continuations retire to the
        # finished pool, the best `beam` non-EOS ones survive.  At most one
        # EOS candidate exists per source beam, so the window always holds
        # enough survivors.  A single beam degenerates to greedy argmax, so
        # it must only ever look at the top candidate.
        window = 1 if cfg.beam == 1 else 2 * cfg.beam
        for idx in order[:window]:
            src = int(idx // n_vocab)
            tok = int(idx % n_vocab)
            lp = float(flat[idx])
            if not math.isfinite(lp):
                break
            seq = beams[src] + [tok]
            if tok == eos_id:
                finished.append((final_score(lp, len(seq)), len(finished), seq[:-1], False))
                continue
            if len(new_beams) < cfg.beam:
                new_beams.append(seq)
                new_logprobs.append(lp)
                new_last.append(tok)
                new_reorder.append(src)
        if not new_beams:
            break
        beams = new_beams
        logprobs = np.array(new_logprobs)
        last = np.array(new_last, dtype=np.int64)
        reorder = np.array(new_reorder, dtype=np.int64)
        # Stop once enough hypotheses have finished AND the best active beam,
        # even if it finished right now at no extra cost, could not beat the
        # best finished score (log-probs only decrease with length).
        if len(finished) >= cfg.beam:
            best_finished = max(f[0] for f in finished)
            optimistic = final_score(float(logprobs.max()), len(beams[0]) + 1)
            if best_finished >= optimistic:
                break

    if finished:
        finished.sort(key=lambda f: (-f[0], f[1]))
        score, _, toks, _ = finished[0]
        return DecodeResult(toks, score, truncated=False)
    # no hypothesis reached EOS within the step budget
    best = int(np.argmax([final_score(lp, len(b)) for lp, b in zip(logprobs, beams)]))
    return DecodeResult(beams[best], final_score(float(logprobs[best]), len(beams[best])),
                        truncated=True)


class ModelSession:
    """Incremental decoder session over one instance's fused memory.

    Keeps per-layer self-attention key/value caches and precomputes the
    cross-attention projections of the memory once.
    """

    def __init__(self, model: Model, memory: np.ndarray, mem_valid: np.ndarray):
        self.model = model
        cfg = model.config
        self.heads = cfg.heads
        self.dh = cfg.d // cfg.heads
        mem = memory[None]
        self.cross: list[tuple[np.ndarray, np.ndarray]] = []
        for i in range(cfg.decoder_layers):
            w = model._attn(f"dec.{i}.xattn")
            k = self._split(layers.linear(mem, w["wk"], w["bk"]))
            v = self._split(layers.linear(mem, w["wv"], w["bv"]))
            self.cross.append((k, v))
        self.mem_mask = np.where(mem_valid[None, None, None, :], 0.0, layers.NEG_INF)
        self.self_kv: list[tuple[np.ndarray, np.ndarray] | None] = [None] * cfg.decoder_layers
        self.pos = 0

    def _split(self, x: np.ndarray) -> np.ndarray:
        b, t, d = x.shape
        return x.reshape(b, t, self.heads, self.dh).transpose(0, 2, 1, 3)

    def step(self, last_tokens: np.ndarray, reorder: np.ndarray | None) -> np.ndarray:
        m = self.model
        cfg = m.config
        if reorder is not None:
            for i, kv in enumerate(self.self_kv):
                self.self_kv[i] = (kv[0][reorder], kv[1][reorder])
        x = m._v("dec.emb")[last_tokens][:, None, :] + m._v("dec.pos")[None, self.pos : self.pos + 1, :]
        scale = 1.0 / math.sqrt(self.dh)
        for i in range(cfg.decoder_layers):
            p = f"dec.{i}"
            h, _ = layers.layer_norm(x, m._v(f"{p}.ln1.g"), m._v(f"{p}.ln1.b"))
            w = m._attn(f"{p}.attn")
            q = self._split(layers.linear(h, w["wq"], w["bq"]))
            k_new = self._split(layers.linear(h, w["wk"], w["bk"]))
            v_new = self._split(layers.linear(h, w["wv"], w["bv"]))
            if self.self_kv[i] is None:
                k, v = k_new, v_new
            else:
                k = np.concatenate([self.self_kv[i][0], k_new], axis=2)
                v = np.concatenate([self.self_kv[i][1], v_new], axis=2)
            self.self_kv[i] = (k, v)
            attn = layers._softmax((q @ k.transpose(0, 1, 3, 2)) * scale)
            ctx = layers._merge_heads(attn @ v)
            x = x + layers.linear(ctx, w["wo"], w["bo"])
            h2, _ = layers.layer_norm(x, m._v(f"{p}.ln2.g"), m._v(f"{p}.ln2.b"))
            wx = m._attn(f"{p}.xattn")
            q = self._split(layers.linear(h2, wx["wq"], wx["bq"]))
            kc, vc = self.cross[i]
            scores = (q @ kc.transpose(0, 1, 3, 2)) * scale
            scores = scores + self.mem_mask.astype(scores.dtype, copy=False)
            attn = layers._softmax(scores)
            ctx = layers._merge_heads(attn @ vc)
            x = x + layers.linear(ctx, wx["wo"], wx["bo"])
            h3, _ = layers.layer_norm(x, m._v(f"{p}.ln3.g"), m._v(f"{p}.ln3.b"))
            f, _ = layers.feed_forward(
                h3, m._v(f"{p}.ffn.w1"), m._v(f"{p}.ffn.b1"),
                m._v(f"{p}.ffn.w2"), m._v(f"{p}.ffn.b2"))
            x = x + f
        y, _ = layers.layer_norm(x, m._v("dec.lnf.g"), m._v("dec.lnf.b"))
        logits = layers.linear(y, m._v("dec.out.w"), m._v("dec.out.b"))
        self.pos += 1
        return logits[:, 0, :]


def beam_decode(
    model: Model, instance: Instance, vocab: Vocab, cfg: DecodeConfig
) -> tuple[list[str], bool]:
    """Decode one instance; returns (token strings, truncated flag)."""
    memory, mem_valid = model.encode_memory(instance, vocab)
    session = ModelSession(model, memory, mem_valid)
    result = beam_search(session, cfg, vocab.bos, vocab.eos,
                         banned_ids=(vocab.pad, vocab.bos))
    return vocab.decode_words(result.tokens), result.truncated


def _n_workers() -> int:
    try:
        return max(1, int(os.environ.get("MRVPC_THREADS", "1")))
    except ValueError:
        return 1


def decode_corpus(
    model: Model, corpus: Sequence[Instance], vocab: Vocab, cfg: DecodeConfig
) -> list[tuple[list[str], bool]]:
    """Decode every instance; parallelism capped by MRVPC_THREADS."""
    workers = _n_workers()
    if workers == 1:
        return [beam_decode(model, inst, vocab, cfg) for inst in corpus]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(lambda inst: beam_decode(model, inst, vocab, cfg), corpus))
