"""Time tokenization, vocabulary construction, and auxiliary serialization."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from vpclab.datagen import AsrSentence, Event, WorldSpec, gen_corpus, gen_instance
from vpclab.timetok import (
    CONTROL_TOKENS,
    Vocab,
    build_vocab,
    serialize_aux,
    serialize_instance,
    time_to_token,
    time_token_name,
    token_to_time,
)


class TestTimeToToken:
    def test_zero(self):
        assert time_to_token(0.0, 100) == 0

    def test_one_clamps_to_top_bin(self):
        assert time_to_token(1.0, 100) == 99

    def test_floor_rule(self):
        assert time_to_token(0.537, 100) == 53

    def test_bin_edges_resolve_downward_consistently(self):
        # floor quantization: the left edge belongs to its own bin
        assert time_to_token(0.53, 100) == 53

    def test_out_of_range_clamps_with_warning(self):
        with pytest.warns(UserWarning):
            assert time_to_token(-0.2, 100) == 0
        with pytest.warns(UserWarning):
            assert time_to_token(1.7, 100) == 99

    def test_nan_rejected(self):
        with pytest.raises(ValueError):
            time_to_token(float("nan"), 100)

    def test_too_few_bins_rejected(self):
        with pytest.raises(ValueError):
            time_to_token(0.5, 1)


class TestTokenToTime:
    def test_bin_centers(self):
        assert token_to_time(0, 100) == pytest.approx(0.005)
        assert token_to_time(99, 100) == pytest.approx(0.995)

    def test_out_of_range_rejected(self):
        with pytest.raises(ValueError):
            token_to_time(100, 100)
        with pytest.raises(ValueError):
            token_to_time(-1, 100)

    def test_round_trip_bound_random_sample(self):
        # acceptance-grade bound: |round-trip(t) - t| <= 1/(2N)
        rng = np.random.default_rng(0)
        for t in rng.random(10_000):
            back = token_to_time(time_to_token(float(t), 100), 100)
            assert abs(back - t) <= 1.0 / 200 + 1e-15

    @given(st.floats(min_value=0.0, max_value=1.0),
           st.integers(min_value=2, max_value=500))
    @settings(max_examples=300)
    def test_round_trip_bound_property(self, t, n_bins):
        back = token_to_time(time_to_token(t, n_bins), n_bins)
        assert abs(back - t) <= 1.0 / (2 * n_bins) + 1e-12


class TestVocab:
    def test_layout_words_then_time_then_controls(self):
        corpus = gen_corpus(WorldSpec(seed=1), 5, split_seed=1)
        vocab = build_vocab(corpus, n_bins=100)
        assert vocab.tokens[vocab.n_words] == time_token_name(0)
        assert vocab.tokens[vocab.n_words + 99] == time_token_name(99)
        assert vocab.tokens[-len(CONTROL_TOKENS):] == CONTROL_TOKENS
        assert len(vocab) == vocab.n_words + 100 + len(CONTROL_TOKENS)

    def test_ids_dense_and_unique(self):
        corpus = gen_corpus(WorldSpec(seed=1), 5, split_seed=1)
        vocab = build_vocab(corpus)
        assert sorted(vocab.id_of(t) for t in vocab.tokens) == list(range(len(vocab)))

    def test_rebuild_identical(self):
        corpus = gen_corpus(WorldSpec(seed=2), 8, split_seed=1)
        assert build_vocab(corpus) == build_vocab(corpus)

    def test_unknown_word_maps_to_unk(self):
        corpus = gen_corpus(WorldSpec(seed=1), 3, split_seed=1)
        vocab = build_vocab(corpus)
        assert vocab.word_id("zzz-not-a-word") == vocab.unk

    def test_duplicate_tokens_rejected(self):
        with pytest.raises(ValueError):
            Vocab(("a", "a") + tuple(time_token_name(i) for i in range(2))
                  + CONTROL_TOKENS, n_bins=2)

    def test_empty_corpus_rejected(self):
        with pytest.raises(ValueError):
            build_vocab([])

    def test_time_id_range_check(self):
        corpus = gen_corpus(WorldSpec(seed=1), 3, split_seed=1)
        vocab = build_vocab(corpus, n_bins=10)
        with pytest.raises(ValueError):
            vocab.time_id(10)


def tiny_vocab() -> Vocab:
    corpus = gen_corpus(WorldSpec(seed=1), 6, split_seed=1)
    return build_vocab(corpus, n_bins=100)


class TestSerializeAux:
    def test_both_absent_is_four_tokens(self):
        vocab = tiny_vocab()
        seq = serialize_aux([], [], vocab, asr_absent=True, events_absent=True)
        assert list(seq.ids) == [
            vocab.sep_asr, vocab.null_asr, vocab.sep_evt, vocab.null_evt]

    def test_empty_inputs_count_as_absent(self):
        vocab = tiny_vocab()
        seq = serialize_aux([], [], vocab)
        assert vocab.null_asr in seq.ids and vocab.null_evt in seq.ids

    def test_event_block_time_pair(self):
        vocab = tiny_vocab()
        ev = Event(0, 0, 0.20, 0.40)
        seq = serialize_aux([], [ev], vocab, asr_absent=True)
        tail = seq.ids[-2:]
        assert tail == (vocab.time_id(20), vocab.time_id(40))

    def test_length_for_k_events_no_asr(self):
        # SEP_ASR + NULL_ASR + SEP_EVT + 2 tokens per event = 2k + 3
        vocab = tiny_vocab()
        for k in (1, 2, 5):
            events = [Event(0, 0, i / 10, i / 10 + 0.05) for i in range(k)]
            seq = serialize_aux([], events, vocab, asr_absent=True)
            assert len(seq) == 2 * k + 2 + 1

    def test_separators_exactly_once(self):
        vocab = tiny_vocab()
        inst = gen_instance(WorldSpec(seed=1), seed=7)
        seq = serialize_instance(inst, vocab)
        ids = list(seq.ids)
        assert ids.count(vocab.sep_asr) == 1
        assert ids.count(vocab.sep_evt) == 1

    def test_null_markers_iff_absent(self):
        vocab = tiny_vocab()
        inst = gen_instance(WorldSpec(seed=1), seed=7)
        seq = serialize_instance(inst, vocab)
        assert vocab.null_asr not in seq.ids
        assert vocab.null_evt not in seq.ids
        seq2 = serialize_instance(
            inst.with_asr((), True).with_events((), True), vocab)
        assert vocab.null_asr in seq2.ids and vocab.null_evt in seq2.ids

    def test_asr_sentences_carry_start_time_then_words(self):
        vocab = tiny_vocab()
        sent = AsrSentence(("act0", "obj1"), start=0.537, end=0.6)
        seq = serialize_aux([sent], [], vocab, events_absent=True)
        assert seq.ids[0] == vocab.sep_asr
        assert seq.ids[1] == vocab.time_id(53)
        assert vocab.token(seq.ids[2]) == "act0"
        assert vocab.token(seq.ids[3]) == "obj1"

    def test_unknown_words_counted_and_replaced(self):
        vocab = tiny_vocab()
        sent = AsrSentence(("act0", "veryunknown"), start=0.1, end=0.2)
        seq = serialize_aux([sent], [], vocab, events_absent=True)
        assert seq.n_unknown == 1
        assert vocab.unk in seq.ids

    def test_truncation_never_splits_time_pair(self):
        vocab = tiny_vocab()
        events = [Event(0, 0, i / 40, i / 40 + 0.02) for i in range(30)]
        for max_len in range(5, 20):
            seq = serialize_aux([], events, vocab, max_len=max_len,
                                asr_absent=True)
            assert len(seq) <= max_len
            # the event block must hold an even number of time tokens
            assert (len(seq) - 3) % 2 == 0

    def test_injective_below_max_len(self):
        vocab = tiny_vocab()
        a = serialize_aux([AsrSentence(("act0",), 0.1, 0.2)], [], vocab,
                          events_absent=True)
        b = serialize_aux([AsrSentence(("act1",), 0.1, 0.2)], [], vocab,
                          events_absent=True)
        assert a.ids != b.ids

    @given(st.integers(min_value=0, max_value=2**32 - 1))
    @settings(max_examples=60, deadline=None)
    def test_serialization_deterministic_and_bounded(self, seed):
        vocab = tiny_vocab()
        inst = gen_instance(WorldSpec(seed=1), seed=seed)
        s1 = serialize_instance(inst, vocab)
        s2 = serialize_instance(inst, vocab)
        assert s1 == s2
        assert len(s1) <= 256
