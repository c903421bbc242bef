"""Synthetic multimodal captioning corpora with separable per-modality signal.

Each instance pairs frame features, timed ASR sentences, event boundaries,
and a templated paragraph caption.  Confusable action pairs share a visual
prototype, so their identity is recoverable from ASR tokens but not from
the frames; segmentation is exact in the boundary modality and only
approximate in the frames.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .seeding import derive_rng

MIN_DURATION = 0.05


class GenerationError(ValueError):
    pass


@dataclass(frozen=True)
class WorldSpec:
    n_actions: int = 12
    n_objects: int = 10
    n_confusable_pairs: int = 3
    frames: int = 48
    feat_dim: int = 16
    k_min: int = 2
    k_max: int = 6
    visual_noise: float = 0.1
    asr_fidelity: float = 0.95
    seed: int = 0

    def __post_init__(self) -> None:
        if self.n_confusable_pairs * 2 > self.n_actions:
            raise ValueError("n_confusable_pairs must be <= n_actions / 2")
        if self.k_min < 1 or self.k_max < self.k_min:
            raise ValueError("need 1 <= k_min <= k_max")
        if self.visual_noise < 0:
            raise ValueError("visual_noise must be >= 0")
        if not 0.0 <= self.asr_fidelity <= 1.0:
            raise ValueError("asr_fidelity must be in [0, 1]")


@dataclass(frozen=True)
class Event:
    action_id: int
    object_id: int
    start: float
    end: float

    def __post_init__(self) -> None:
        if not 0.0 <= self.start < self.end <= 1.0:
            raise ValueError(f"bad event bounds ({self.start}, {self.end})")


@dataclass(frozen=True)
class AsrSentence:
    tokens: tuple[str, ...]
    start: float
    end: float


@dataclass(frozen=True)
class Instance:
    id: str
    video: np.ndarray  # (frames, feat_dim), never mutated after creation
    asr: tuple[AsrSentence, ...]
    events: tuple[Event, ...]
    caption: tuple[str, ...]
    asr_absent: bool = False
    events_absent: bool = False

    def with_asr(self, asr: tuple[AsrSentence, ...], absent: bool) -> "Instance":
        return replace(self, asr=asr, asr_absent=absent)

    def with_events(self, events: tuple[Event, ...], absent: bool) -> "Instance":
        return replace(self, events=events, events_absent=absent)


def action_word(action_id: int) -> str:
    return f"act{action_id}"

def object_word(object_id: int) -> str:
    return f"obj{object_id}"


def word_vocabulary(spec: WorldSpec) -> list[str]:
    """Every word token the generator can emit, in a canonical order."""
    words = [action_word(a) for a in range(spec.n_actions)]
    words += [object_word(o) for o in range(spec.n_objects)]
    words += ["the", "."]
    return words


def canonical_action(spec: WorldSpec, action_id: int) -> int:
    """Representative action sharing the visual prototype.

    Actions (2i, 2i+1) for i < n_confusable_pairs collapse onto 2i.
    """
    if action_id < 2 * spec.n_confusable_pairs:
        return action_id - (action_id % 2)
    return action_id


class Prototypes:
    """Deterministic visual prototypes for (action, object) pairs."""

    def __init__(self, spec: WorldSpec):
        rng = derive_rng(spec.seed, "prototypes")
        self.actions = rng.standard_normal((spec.n_actions, spec.feat_dim))
        self.objects = rng.standard_normal((spec.n_objects, spec.feat_dim))
        self.background = rng.standard_normal(spec.feat_dim)
        for a in range(spec.n_actions):
            self.actions[a] = self.actions[canonical_action(spec, a)]

    def frame_vector(self, action_id: int, object_id: int) -> np.ndarray:
        return self.actions[action_id] + 0.5 * self.objects[object_id]


def render_caption(events: Sequence[Event]) -> tuple[str, ...]:
    """Templated paragraph: one four-token sentence per event, in order."""
    tokens: list[str] = []
    for ev in events:
        tokens += [action_word(ev.action_id), "the", object_word(ev.object_id), "."]
    return tuple(tokens)


def _sample_events(spec: WorldSpec, rng: np.random.Generator) -> tuple[Event, ...]:
    k = int(rng.integers(spec.k_min, spec.k_max + 1))
    if k * MIN_DURATION > 1.0:
        raise GenerationError(
            f"{k} events of minimum duration {MIN_DURATION} cannot fit in [0, 1]"
        )
    # Stick-breaking: 2k+1 weighted slots (gap, event, gap, ..., gap) share
    # the slack left after reserving the minimum event durations.
    slack = 1.0 - k * MIN_DURATION
    weights = rng.random(2 * k + 1)
    weights = weights / weights.sum() * slack
    events = []
    t = weights[0]
    for i in range(k):
        dur = MIN_DURATION + weights[2 * i + 1]
        action = int(rng.integers(spec.n_actions))
        obj = int(rng.integers(spec.n_objects))
        events.append(Event(action, obj, float(t), float(min(t + dur, 1.0))))
        t += dur + weights[2 * i + 2]
    return tuple(events)


def _frame_features(
    spec: WorldSpec, protos: Prototypes, events: Sequence[Event], rng: np.random.Generator
) -> np.ndarray:
    video = np.empty((spec.frames, spec.feat_dim))
    for f in range(spec.frames):
        t = (f + 0.5) / spec.frames
        base = protos.background
        for ev in events:
            if ev.start <= t < ev.end:
                base = protos.frame_vector(ev.action_id, ev.object_id)
                break
        video[f] = base
    if spec.visual_noise > 0:
        video += spec.visual_noise * rng.standard_normal(video.shape)
    return video


def _asr_sentences(
    spec: WorldSpec, events: Sequence[Event], rng: np.random.Generator
) -> tuple[AsrSentence, ...]:
    words = word_vocabulary(spec)
    corrupt_rate = 1.0 - spec.asr_fidelity
    sentences = []
    for ev in events:
        tokens = [action_word(ev.action_id), object_word(ev.object_id)]
        if corrupt_rate > 0:
            for i in range(len(tokens)):
                if rng.random() < corrupt_rate:
                    tokens[i] = words[int(rng.integers(len(words)))]
        sentences.append(AsrSentence(tuple(tokens), ev.start, ev.end))
    return tuple(sentences)


def gen_instance(spec: WorldSpec, seed: int, instance_id: str = "i0") -> Instance:
    rng = np.random.default_rng(seed)
    protos = Prototypes(spec)
    events = _sample_events(spec, rng)
    video = _frame_features(spec, protos, events, rng)
    asr = _asr_sentences(spec, events, rng)
    return Instance(
        id=instance_id,
        video=video,
        asr=asr,
        events=events,
        caption=render_caption(events),
    )


def gen_corpus(spec: WorldSpec, n: int, split_seed: int) -> list[Instance]:
    """Deterministic corpus; each instance gets a derived per-instance seed."""
    if n <= 0:
        raise GenerationError("n must be > 0")
    if spec.k_max * MIN_DURATION > 1.0:
        raise GenerationError("k_max events of minimum duration cannot fit in [0, 1]")
    from .seeding import derive_seed

    out = []
    for i in range(n):
        seed = derive_seed(spec.seed, "instance", split_seed, i)
        out.append(gen_instance(spec, seed, instance_id=f"s{split_seed}-{i:05d}"))
    return out


@dataclass
class CorpusStats:
    n_instances: int
    event_histogram: dict[int, int]
    caption_tokens: int
    asr_tokens: int
    mean_event_duration: float
    mean_events: float = field(init=False)

    def __post_init__(self) -> None:
        total = sum(k * v for k, v in self.event_histogram.items())
        self.mean_events = total / self.n_instances


def corpus_stats(corpus: Sequence[Instance]) -> CorpusStats:
    if not corpus:
        raise ValueError("corpus must be non-empty")
    hist: dict[int, int] = {}
    cap_tokens = 0
    asr_tokens = 0
    durations = []
    for inst in corpus:
        hist[len(inst.events)] = hist.get(len(inst.events), 0) + 1
        cap_tokens += len(inst.caption)
        asr_tokens += sum(len(s.tokens) for s in inst.asr)
        durations += [ev.end - ev.start for ev in inst.events]
    return CorpusStats(
        n_instances=len(corpus),
        event_histogram=dict(sorted(hist.items())),
        caption_tokens=cap_tokens,
        asr_tokens=asr_tokens,
        mean_event_duration=float(np.mean(durations)) if durations else 0.0,
    )
