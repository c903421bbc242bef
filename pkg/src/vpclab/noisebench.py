"""Test-time noise operators over the auxiliary modalities and named
evaluation scenarios composing them.  No operator ever touches the video
features or the reference caption."""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Callable, Sequence

import numpy as np

from .datagen import AsrSentence, Event, Instance
from .seeding import derive_rng


class ScenarioError(ValueError):
    pass


def null_asr(instance: Instance, rng=None) -> Instance:
    return instance.with_asr((), absent=True)


def null_events(instance: Instance, rng=None) -> Instance:
    return instance.with_events((), absent=True)


def random_missing(instance: Instance, rng: np.random.Generator, p: float = 0.5) -> Instance:
    out = instance
    if rng.random() <= p:
        out = null_asr(out)
    if rng.random() <= p:
        out = null_events(out)
    return out


def asr_sentence_delete(instance: Instance, rng: np.random.Generator, rate: float = 0.5) -> Instance:
    if instance.asr_absent:
        return instance
    kept = tuple(s for s in instance.asr if rng.random() >= rate)
    if not kept:
        return null_asr(instance)
    return instance.with_asr(kept, absent=False)


def asr_degrade(
    instance: Instance,
    rng: np.random.Generator,
    sub_rate: float = 0.15,
    del_rate: float = 0.10,
    word_pool: Sequence[str] | None = None,
) -> Instance:
    """Low-quality transcription proxy: per-token deletion then random
    substitution from the word pool (defaults to the instance's own words)."""
    if sub_rate + del_rate > 1.0:
        raise ValueError("sub_rate + del_rate must be <= 1 per token")
    if instance.asr_absent:
        return instance
    pool = list(word_pool) if word_pool else sorted(
        {t for s in instance.asr for t in s.tokens})
    sentences = []
    for sent in instance.asr:
        tokens = []
        for tok in sent.tokens:
            u = rng.random()
            if u < del_rate:
                continue
            if u < del_rate + sub_rate and pool:
                tokens.append(pool[int(rng.integers(len(pool)))])
            else:
                tokens.append(tok)
        if tokens:
            sentences.append(AsrSentence(tuple(tokens), sent.start, sent.end))
    if not sentences:
        return null_asr(instance)
    return instance.with_asr(tuple(sentences), absent=False)


def event_delete(instance: Instance, rng: np.random.Generator, rate: float = 0.5) -> Instance:
    if instance.events_absent:
        return instance
    kept = tuple(ev for ev in instance.events if rng.random() >= rate)
    if not kept:
        return null_events(instance)
    return instance.with_events(kept, absent=False)


def boundary_perturb(instance: Instance, rng: np.random.Generator, radius: float = 0.05) -> Instance:
    """Shift every timestamp by Uniform(-radius, +radius), clamp to [0, 1],
    and repair inverted events to midpoint +- 0.005."""
    if radius < 0:
        raise ValueError("radius must be >= 0")
    if instance.events_absent or radius == 0:
        return instance
    events = []
    for ev in instance.events:
        start = min(max(ev.start + rng.uniform(-radius, radius), 0.0), 1.0)
        end = min(max(ev.end + rng.uniform(-radius, radius), 0.0), 1.0)
        if start >= end:
            mid = 0.5 * (start + end)
            start = max(mid - 0.005, 0.0)
            end = min(mid + 0.005, 1.0)
        events.append(Event(ev.action_id, ev.object_id, start, end))
    events.sort(key=lambda e: (e.start, e.end))
    return instance.with_events(tuple(events), absent=False)


def uniform_boundaries(instance: Instance, rng=None, k: int = 4) -> Instance:
    """Replace the boundaries with k equal contiguous segments of [0, 1]."""
    if k < 1:
        raise ValueError("k must be >= 1")
    events = tuple(
        Event(-1, -1, i / k, (i + 1) / k) for i in range(k)
    )
    return instance.with_events(events, absent=False)


OPS: dict[str, Callable] = {
    "null_asr": null_asr,
    "null_events": null_events,
    "random_missing": random_missing,
    "asr_sentence_delete": asr_sentence_delete,
    "asr_degrade": asr_degrade,
    "event_delete": event_delete,
    "boundary_perturb": boundary_perturb,
    "uniform_boundaries": uniform_boundaries,
}


@dataclass(frozen=True)
class Scenario:
    """Named, ordered composition of noise operators with parameters."""

    name: str
    asr_ops: tuple[tuple[str, dict], ...] = ()
    event_ops: tuple[tuple[str, dict], ...] = ()
    seed: int = 0

    def __post_init__(self) -> None:
        for op_name, _ in self.asr_ops + self.event_ops:
            if op_name not in OPS:
                raise ScenarioError(f"unknown noise op {op_name!r}")


BUILTIN_SCENARIOS: dict[str, Scenario] = {
    "complete": Scenario("complete"),
    "video_only": Scenario(
        "video_only",
        asr_ops=(("null_asr", {}),),
        event_ops=(("null_events", {}),),
    ),
    "random_missing": Scenario("random_missing", asr_ops=(("random_missing", {"p": 0.5}),)),
    "asr_low_quality": Scenario(
        "asr_low_quality", asr_ops=(("asr_degrade", {"sub_rate": 0.15, "del_rate": 0.10}),)),
    "asr_sentence_del": Scenario(
        "asr_sentence_del", asr_ops=(("asr_sentence_delete", {"rate": 0.5}),)),
    "event_del": Scenario("event_del", event_ops=(("event_delete", {"rate": 0.5}),)),
    "boundary_perturb": Scenario(
        "boundary_perturb", event_ops=(("boundary_perturb", {"radius": 0.05}),)),
    "uniform_boundaries": Scenario(
        "uniform_boundaries", event_ops=(("uniform_boundaries", {"k": 4}),)),
}


def get_scenario(name: str, seed: int = 0) -> Scenario:
    if name not in BUILTIN_SCENARIOS:
        raise ScenarioError(f"unknown scenario {name!r}")
    return replace(BUILTIN_SCENARIOS[name], seed=seed)


def apply_scenario(corpus: Sequence[Instance], scenario: Scenario) -> list[Instance]:
    """Apply the scenario's ops in declared order with per-instance derived
    seeds; deterministic for a fixed (scenario, corpus)."""
    out = []
    for inst in corpus:
        noisy = inst
        for op_name, kwargs in scenario.asr_ops + scenario.event_ops:
            rng = derive_rng(scenario.seed, "scenario", scenario.name, op_name, inst.id)
            noisy = OPS[op_name](noisy, rng=rng, **kwargs)
        out.append(noisy)
    return out
