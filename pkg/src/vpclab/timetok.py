"""Vocabulary and serialization of auxiliary modalities into one token stream.

Timestamps are quantized to N percentage-progress tokens; ASR sentences and
event boundaries are concatenated behind dedicated separator tokens, with
explicit null tokens standing in for absent modalities.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .datagen import AsrSentence, Event, Instance

BOS = "<bos>"
EOS = "<eos>"
PAD = "<pad>"
SEP_ASR = "<sep_asr>"
SEP_EVT = "<sep_evt>"
NULL_ASR = "<null_asr>"
NULL_EVT = "<null_evt>"
UNK = "<unk>"

CONTROL_TOKENS = (BOS, EOS, PAD, SEP_ASR, SEP_EVT, NULL_ASR, NULL_EVT, UNK)


def time_to_token(t: float, n_bins: int) -> int:
    """Quantize a [0, 1] fraction to a progress-bin index (floor, top clamp)."""
    if n_bins < 2:
        raise ValueError("n_bins must be >= 2")
    if np.isnan(t):
        raise ValueError("timestamp is NaN")
    if t < 0.0 or t > 1.0:
        warnings.warn(f"timestamp {t} outside [0, 1]; clamping", stacklevel=2)
        t = min(max(t, 0.0), 1.0)
    return min(int(t * n_bins), n_bins - 1)


def token_to_time(index: int, n_bins: int) -> float:
    """Bin center of a progress-bin index."""
    if not 0 <= index < n_bins:
        raise ValueError(f"time-token index {index} out of range for {n_bins} bins")
    return (index + 0.5) / n_bins


class Vocab:
    """Immutable token table: word tokens, then time tokens, then controls."""

    def __init__(self, tokens: Sequence[str], n_bins: int):
        self.tokens = tuple(tokens)
        self.n_bins = n_bins
        self._ids = {tok: i for i, tok in enumerate(self.tokens)}
        if len(self._ids) != len(self.tokens):
            raise ValueError("vocabulary tokens must be unique")
        self.n_words = len(self.tokens) - n_bins - len(CONTROL_TOKENS)
        self.bos = self._ids[BOS]
        self.eos = self._ids[EOS]
        self.pad = self._ids[PAD]
        self.sep_asr = self._ids[SEP_ASR]
        self.sep_evt = self._ids[SEP_EVT]
        self.null_asr = self._ids[NULL_ASR]
        self.null_evt = self._ids[NULL_EVT]
        self.unk = self._ids[UNK]

    def __len__(self) -> int:
        return len(self.tokens)

    def __eq__(self, other: object) -> bool:
        return (
            isinstance(other, Vocab)
            and self.tokens == other.tokens
            and self.n_bins == other.n_bins
        )

    def word_id(self, word: str) -> int:
        return self._ids.get(word, self.unk)

    def id_of(self, token: str) -> int:
        return self._ids[token]

    def time_id(self, bin_index: int) -> int:
        if not 0 <= bin_index < self.n_bins:
            raise ValueError("time bin out of range")
        return self.n_words + bin_index

    def token(self, token_id: int) -> str:
        return self.tokens[token_id]

    def is_word(self, token_id: int) -> bool:
        return 0 <= token_id < self.n_words

    def word_ids(self, words: Sequence[str]) -> list[int]:
        return [self.word_id(w) for w in words]

    def decode_words(self, ids: Sequence[int]) -> list[str]:
        return [self.tokens[i] for i in ids]


def time_token_name(bin_index: int) -> str:
    return f"<time_{bin_index}>"


def build_vocab(corpus: Sequence[Instance], n_bins: int = 100) -> Vocab:
    """Word tokens in first-occurrence order (caption, then ASR sentences),
    followed by time tokens and control tokens."""
    if not corpus:
        raise ValueError("corpus must be non-empty")
    words: dict[str, None] = {}
    for inst in corpus:
        for tok in inst.caption:
            words.setdefault(tok)
        for sent in inst.asr:
            for tok in sent.tokens:
                words.setdefault(tok)
    tokens = list(words)
    tokens += [time_token_name(i) for i in range(n_bins)]
    tokens += list(CONTROL_TOKENS)
    return Vocab(tokens, n_bins)


@dataclass(frozen=True)
class AuxSequence:
    """Serialized auxiliary input: token ids plus the unknown-word count."""

    ids: tuple[int, ...]
    n_unknown: int = 0

    def __len__(self) -> int:
        return len(self.ids)


def serialize_aux(
    asr: Sequence[AsrSentence],
    events: Sequence[Event],
    vocab: Vocab,
    max_len: int = 256,
    asr_absent: bool = False,
    events_absent: bool = False,
) -> AuxSequence:
    """Layout: SEP_ASR, per-sentence [start-time, words...] (or NULL_ASR),
    SEP_EVT, per-event [start-time, end-time] (or NULL_EVT).

    Truncated at ``max_len`` without ever splitting an event time pair.
    """
    n_unknown = 0
    ids: list[int] = [vocab.sep_asr]
    if asr_absent or not asr:
        ids.append(vocab.null_asr)
    else:
        for sent in asr:
            ids.append(vocab.time_id(time_to_token(sent.start, vocab.n_bins)))
            for word in sent.tokens:
                wid = vocab.word_id(word)
                if wid == vocab.unk:
                    n_unknown += 1
                ids.append(wid)
    ids.append(vocab.sep_evt)
    pair_starts: list[int] = []
    if events_absent or not events:
        ids.append(vocab.null_evt)
    else:
        for ev in events:
            pair_starts.append(len(ids))
            ids.append(vocab.time_id(time_to_token(ev.start, vocab.n_bins)))
            ids.append(vocab.time_id(time_to_token(ev.end, vocab.n_bins)))
    if len(ids) > max_len:
        cut = max_len
        if cut - 1 in pair_starts:
            cut -= 1
        ids = ids[:cut]
    return AuxSequence(tuple(ids), n_unknown)


def serialize_instance(instance: Instance, vocab: Vocab, max_len: int = 256) -> AuxSequence:
    return serialize_aux(
        instance.asr,
        instance.events,
        vocab,
        max_len=max_len,
        asr_absent=instance.asr_absent,
        events_absent=instance.events_absent,
    )
