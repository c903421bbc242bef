"""Synthetic corpus generator: determinism, layout, and signal separability."""

import numpy as np
import pytest

from vpclab.datagen import (
    MIN_DURATION,
    Event,
    GenerationError,
    Prototypes,
    WorldSpec,
    canonical_action,
    corpus_stats,
    gen_corpus,
    gen_instance,
    render_caption,
    word_vocabulary,
)


class TestWorldSpec:
    def test_defaults_valid(self):
        spec = WorldSpec()
        assert spec.frames == 48 and spec.feat_dim == 16
        assert (spec.k_min, spec.k_max) == (2, 6)

    def test_too_many_confusable_pairs_rejected(self):
        with pytest.raises(ValueError):
            WorldSpec(n_actions=4, n_confusable_pairs=3)

    def test_bad_event_range_rejected(self):
        with pytest.raises(ValueError):
            WorldSpec(k_min=0)
        with pytest.raises(ValueError):
            WorldSpec(k_min=5, k_max=3)

    def test_negative_noise_rejected(self):
        with pytest.raises(ValueError):
            WorldSpec(visual_noise=-0.1)


class TestEvent:
    def test_bounds_enforced(self):
        with pytest.raises(ValueError):
            Event(0, 0, 0.5, 0.5)
        with pytest.raises(ValueError):
            Event(0, 0, -0.1, 0.5)
        with pytest.raises(ValueError):
            Event(0, 0, 0.5, 1.1)


class TestRenderCaption:
    def test_empty_events_empty_caption(self):
        assert render_caption([]) == ()

    def test_single_event_template(self):
        cap = render_caption([Event(3, 7, 0.1, 0.5)])
        assert cap == ("act3", "the", "obj7", ".")

    def test_order_preserved_under_permutation(self):
        e1, e2 = Event(1, 2, 0.0, 0.4), Event(3, 4, 0.5, 0.9)
        a = render_caption([e1, e2])
        b = render_caption([e2, e1])
        assert a[:4] == b[4:] and a[4:] == b[:4]

    def test_length_is_exactly_4k(self):
        events = [Event(i % 3, i % 2, i / 10, i / 10 + 0.05) for i in range(5)]
        assert len(render_caption(events)) == 20


class TestGenInstance:
    def test_deterministic(self):
        spec = WorldSpec(seed=3)
        a = gen_instance(spec, seed=42)
        b = gen_instance(spec, seed=42)
        assert a.caption == b.caption and a.events == b.events and a.asr == b.asr
        np.testing.assert_array_equal(a.video, b.video)

    def test_video_shape(self):
        spec = WorldSpec(frames=24, feat_dim=8)
        inst = gen_instance(spec, seed=0)
        assert inst.video.shape == (24, 8)

    def test_events_ordered_nonoverlapping_with_min_duration(self):
        spec = WorldSpec()
        for seed in range(50):
            inst = gen_instance(spec, seed=seed)
            for ev in inst.events:
                assert 0.0 <= ev.start < ev.end <= 1.0
                assert ev.end - ev.start >= MIN_DURATION - 1e-12
            for a, b in zip(inst.events, inst.events[1:]):
                assert a.end <= b.start + 1e-12

    def test_full_fidelity_asr_names_events(self):
        spec = WorldSpec(asr_fidelity=1.0)
        inst = gen_instance(spec, seed=5)
        assert len(inst.asr) == len(inst.events)
        for sent, ev in zip(inst.asr, inst.events):
            assert sent.tokens == (f"act{ev.action_id}", f"obj{ev.object_id}")
            assert sent.start == ev.start

    def test_caption_has_one_delimiter_per_event(self):
        inst = gen_instance(WorldSpec(), seed=9)
        assert inst.caption.count(".") == len(inst.events)

    def test_asr_timestamps_in_unit_interval(self):
        for seed in range(20):
            inst = gen_instance(WorldSpec(), seed=seed)
            for sent in inst.asr:
                assert 0.0 <= sent.start <= 1.0

    def test_confusable_pair_shares_frames_when_noiseless(self):
        spec = WorldSpec(visual_noise=0.0)
        protos = Prototypes(spec)
        # actions 0 and 1 form a confusable pair: identical prototypes
        np.testing.assert_array_equal(
            protos.frame_vector(0, 3), protos.frame_vector(1, 3))
        assert canonical_action(spec, 1) == 0
        assert canonical_action(spec, 7) == 7  # outside the confusable range


class TestGenCorpus:
    def test_deterministic(self):
        spec = WorldSpec(seed=11)
        a = gen_corpus(spec, 20, split_seed=1)
        b = gen_corpus(spec, 20, split_seed=1)
        assert [i.caption for i in a] == [i.caption for i in b]
        for x, y in zip(a, b):
            np.testing.assert_array_equal(x.video, y.video)

    def test_split_seeds_differ(self):
        spec = WorldSpec(seed=11)
        a = gen_corpus(spec, 20, split_seed=1)
        b = gen_corpus(spec, 20, split_seed=2)
        assert [i.caption for i in a] != [i.caption for i in b]

    def test_ids_unique_and_split_tagged(self):
        corpus = gen_corpus(WorldSpec(), 10, split_seed=4)
        ids = [i.id for i in corpus]
        assert len(set(ids)) == 10
        assert all(i.startswith("s4-") for i in ids)

    def test_invalid_n_rejected(self):
        with pytest.raises(GenerationError):
            gen_corpus(WorldSpec(), 0, split_seed=1)

    def test_impossible_spec_rejected(self):
        with pytest.raises(GenerationError):
            gen_corpus(WorldSpec(k_min=21, k_max=25), 1, split_seed=1)

    def test_mean_event_count_in_ci(self):
        # k ~ Uniform{2..6}: mean 4, sd ~1.414; for n=1000 the sample mean
        # lies in [3.6, 4.4] except with probability well under 1e-10.
        corpus = gen_corpus(WorldSpec(seed=0), 1000, split_seed=1)
        stats = corpus_stats(corpus)
        assert 3.6 <= stats.mean_events <= 4.4

    def test_nearest_prototype_recovers_actions_when_clean(self):
        # No noise, no confusable pairs: every in-event frame sits exactly on
        # its (action, object) prototype, so nearest-prototype classification
        # is perfect.
        spec = WorldSpec(visual_noise=0.0, n_confusable_pairs=0, seed=2)
        protos = Prototypes(spec)
        grid = np.array([
            protos.frame_vector(a, o)
            for a in range(spec.n_actions) for o in range(spec.n_objects)
        ])
        for inst in gen_corpus(spec, 25, split_seed=1):
            for f in range(spec.frames):
                t = (f + 0.5) / spec.frames
                hits = [ev for ev in inst.events if ev.start <= t < ev.end]
                if not hits:
                    continue
                ev = hits[0]
                d = np.linalg.norm(grid - inst.video[f], axis=1)
                best = int(np.argmin(d))
                assert best == ev.action_id * spec.n_objects + ev.object_id

    def test_confusable_actions_not_recoverable_from_video(self):
        # With confusable pairs and no noise, frames from action 0 and 1 with
        # the same object are bitwise identical: video alone cannot tell them
        # apart, while ASR at full fidelity names the true action.
        spec = WorldSpec(visual_noise=0.0, asr_fidelity=1.0, seed=2)
        protos = Prototypes(spec)
        np.testing.assert_array_equal(
            protos.frame_vector(0, 5), protos.frame_vector(1, 5))


class TestCorpusStats:
    def test_single_instance_histogram(self):
        inst = gen_instance(WorldSpec(k_min=3, k_max=3), seed=1)
        stats = corpus_stats([inst])
        assert stats.event_histogram == {3: 1}
        assert stats.mean_events == 3.0

    def test_histogram_mass_sums_to_n(self):
        corpus = gen_corpus(WorldSpec(), 37, split_seed=1)
        stats = corpus_stats(corpus)
        assert sum(stats.event_histogram.values()) == 37

    def test_empty_corpus_rejected(self):
        with pytest.raises(ValueError):
            corpus_stats([])

    def test_token_counts_exact(self):
        corpus = gen_corpus(WorldSpec(), 5, split_seed=1)
        stats = corpus_stats(corpus)
        assert stats.caption_tokens == sum(len(i.caption) for i in corpus)
        assert stats.asr_tokens == sum(
            len(s.tokens) for i in corpus for s in i.asr)


class TestWordVocabulary:
    def test_contents(self):
        words = word_vocabulary(
            WorldSpec(n_actions=3, n_objects=2, n_confusable_pairs=1))
        assert words == ["act0", "act1", "act2", "obj0", "obj1", "the", "."]
