"""Persistence formats, CSV reports, SVG plots, and the command line."""

import struct

import numpy as np
import pytest

from vpclab import __version__
from vpclab.cli import main
from vpclab.datagen import WorldSpec, gen_corpus
from vpclab.experiments import CSV_COLUMNS, build_id, metric_rows, write_csv
from vpclab.capmetrics import MetricReport
from vpclab.io import (
    Checkpoint,
    ConfigError,
    DataError,
    config_hash,
    load_checkpoint,
    load_config,
    load_corpus,
    parse_config,
    save_checkpoint,
    save_corpus,
)
from vpclab.model import ModelConfig, init_params
from vpclab.svgplot import PlotError, emit_plot
from vpclab.timetok import build_vocab


@pytest.fixture(scope="module")
def small_world():
    spec = WorldSpec(frames=6, feat_dim=4, k_min=1, k_max=2, seed=2)
    corpus = gen_corpus(spec, 6, split_seed=1)
    vocab = build_vocab(corpus, n_bins=10)
    return spec, corpus, vocab


class TestCorpusJsonl:
    def test_round_trip_preserves_content(self, small_world, tmp_path):
        _, corpus, _ = small_world
        p = tmp_path / "c.jsonl"
        save_corpus(p, corpus)
        back = load_corpus(p)
        assert len(back) == len(corpus)
        for a, b in zip(back, corpus):
            assert a.id == b.id
            assert a.caption == b.caption
            np.testing.assert_allclose(a.video, b.video)
            assert [s.tokens for s in a.asr] == [s.tokens for s in b.asr]
            assert [(e.start, e.end) for e in a.events] == [
                (e.start, e.end) for e in b.events]
            assert a.asr_absent == b.asr_absent
            assert a.events_absent == b.events_absent

    def test_regeneration_is_byte_identical(self, small_world, tmp_path):
        spec, corpus, _ = small_world
        p1, p2 = tmp_path / "a.jsonl", tmp_path / "b.jsonl"
        save_corpus(p1, corpus)
        save_corpus(p2, gen_corpus(spec, 6, split_seed=1))
        assert p1.read_bytes() == p2.read_bytes()

    def test_malformed_line_reports_position(self, tmp_path):
        p = tmp_path / "bad.jsonl"
        p.write_text('{"id": "x"}\n')
        with pytest.raises(DataError):
            load_corpus(p)

    def test_empty_file_rejected(self, tmp_path):
        p = tmp_path / "empty.jsonl"
        p.write_text("\n")
        with pytest.raises(DataError):
            load_corpus(p)

    def test_missing_file_rejected(self, tmp_path):
        with pytest.raises(DataError):
            load_corpus(tmp_path / "nope.jsonl")


def tiny_checkpoint(vocab):
    cfg = ModelConfig(vocab_size=len(vocab), d=8, heads=2, video_layers=1,
                      text_layers=1, decoder_layers=1, frames=6, feat_dim=4,
                      max_caption=24, max_aux=32)
    params = init_params(cfg, seed=4)
    return Checkpoint(cfg, vocab, params, {"mode": "vanilla", "seed": 4})


class TestCheckpoints:
    def test_round_trip_values_and_bytes(self, small_world, tmp_path):
        _, _, vocab = small_world
        ck = tiny_checkpoint(vocab)
        p1, p2 = tmp_path / "m.ckpt", tmp_path / "m2.ckpt"
        save_checkpoint(p1, ck)
        back = load_checkpoint(p1)
        assert back.config == ck.config
        assert back.vocab.tokens == ck.vocab.tokens
        assert back.meta == ck.meta
        for p in ck.params:
            np.testing.assert_array_equal(back.params[p.name].value,
                                          p.value.astype(np.float32))
        save_checkpoint(p2, back)
        assert p1.read_bytes() == p2.read_bytes()

    def test_truncated_file_rejected(self, small_world, tmp_path):
        _, _, vocab = small_world
        p = tmp_path / "m.ckpt"
        save_checkpoint(p, tiny_checkpoint(vocab))
        data = p.read_bytes()
        p.write_bytes(data[: len(data) // 2])
        with pytest.raises(DataError):
            load_checkpoint(p)

    def test_version_mismatch_rejected(self, small_world, tmp_path):
        _, _, vocab = small_world
        p = tmp_path / "m.ckpt"
        save_checkpoint(p, tiny_checkpoint(vocab))
        data = bytearray(p.read_bytes())
        data[8:12] = struct.pack("<I", 99)
        p.write_bytes(bytes(data))
        with pytest.raises(DataError):
            load_checkpoint(p)

    def test_wrong_magic_rejected(self, small_world, tmp_path):
        p = tmp_path / "m.ckpt"
        p.write_bytes(b"NOTACKPT" + b"\x00" * 64)
        with pytest.raises(DataError):
            load_checkpoint(p)

    def test_shape_mismatch_rejected(self, small_world, tmp_path):
        _, _, vocab = small_world
        ck = tiny_checkpoint(vocab)
        ck.params["dec.out.b"].value = np.zeros(3, dtype=np.float32)
        p = tmp_path / "m.ckpt"
        save_checkpoint(p, ck)
        with pytest.raises(DataError):
            load_checkpoint(p)

    def test_trailing_bytes_rejected(self, small_world, tmp_path):
        _, _, vocab = small_world
        p = tmp_path / "m.ckpt"
        save_checkpoint(p, tiny_checkpoint(vocab))
        p.write_bytes(p.read_bytes() + b"xx")
        with pytest.raises(DataError):
            load_checkpoint(p)


class TestConfig:
    def test_parse_flat_keys_comments_blanks(self):
        cfg = parse_config(
            "# a comment\n"
            "world.seed = 7\n"
            "\n"
            "train.epochs=30  # inline\n")
        assert cfg == {"world.seed": "7", "train.epochs": "30"}

    def test_missing_equals_rejected(self):
        with pytest.raises(ConfigError):
            parse_config("just words\n")

    def test_empty_key_rejected(self):
        with pytest.raises(ConfigError):
            parse_config("=5\n")

    def test_missing_file_rejected(self, tmp_path):
        with pytest.raises(ConfigError):
            load_config(tmp_path / "nope.cfg")

    def test_hash_is_order_insensitive_and_value_sensitive(self):
        a = parse_config("a=1\nb=2\n")
        b = parse_config("b=2\na=1\n")
        c = parse_config("a=1\nb=3\n")
        assert config_hash(a) == config_hash(b)
        assert config_hash(a) != config_hash(c)
        assert len(config_hash(a)) == 12


class TestCsvReports:
    def test_schema_and_build_column(self, tmp_path):
        rep = MetricReport("complete", "vanilla", cider=1.0, meteor=0.5,
                           r4=0.1, consistency=0.9)
        rows = metric_rows(rep, seed=3, cfg_hash="abc123def456")
        p = tmp_path / "r.csv"
        write_csv(p, rows)
        lines = p.read_text().strip().splitlines()
        assert lines[0] == ",".join(CSV_COLUMNS)
        metrics = set()
        for line in lines[1:]:
            cells = line.split(",")
            assert len(cells) == len(CSV_COLUMNS)
            assert cells[0] == "complete" and cells[1] == "vanilla"
            assert cells[4] == "3" and cells[5] == "abc123def456"
            assert cells[6] == build_id() == f"vpclab-{__version__}"
            metrics.add(cells[2])
            float(cells[3])
        assert {"cider", "meteor", "r4", "consistency"} <= metrics


def curve_csv(path):
    rows = []
    for model in ("vanilla", "mrvpc"):
        for q in (0, 25, 50, 75, 100):
            base = 9.0 if model == "mrvpc" else 7.0
            rows.append({"scenario": f"asr_missing_{q}", "model": model,
                         "metric": "cider", "value": base - q / 25.0,
                         "seed": 1, "config_hash": "h", "build": build_id()})
    write_csv(path, rows)


class TestSvgPlots:
    def test_one_polyline_per_model_and_determinism(self, tmp_path):
        csv_path = tmp_path / "curve.csv"
        curve_csv(csv_path)
        out1, out2 = tmp_path / "a.svg", tmp_path / "b.svg"
        emit_plot(csv_path, out1, metric="cider", title="t",
                  x_label="missing %", y_label="CIDEr")
        emit_plot(csv_path, out2, metric="cider", title="t",
                  x_label="missing %", y_label="CIDEr")
        svg = out1.read_text()
        assert svg.count("<polyline") == 2
        assert out1.read_bytes() == out2.read_bytes()
        assert svg.startswith("<svg") or svg.startswith("<?xml")
        assert "vanilla" in svg and "mrvpc" in svg

    def test_missing_metric_rejected(self, tmp_path):
        csv_path = tmp_path / "curve.csv"
        curve_csv(csv_path)
        with pytest.raises(PlotError):
            emit_plot(csv_path, tmp_path / "x.svg", metric="bleu")

    def test_empty_csv_rejected(self, tmp_path):
        p = tmp_path / "empty.csv"
        p.write_text(",".join(CSV_COLUMNS) + "\n")
        with pytest.raises(PlotError):
            emit_plot(p, tmp_path / "x.svg", metric="cider")

    def test_missing_file_rejected(self, tmp_path):
        with pytest.raises(PlotError):
            emit_plot(tmp_path / "nope.csv", tmp_path / "x.svg")


TINY_CFG = """
world.frames=6
world.feat_dim=4
world.k_min=1
world.k_max=2
world.seed=5
model.d=8
model.heads=2
model.video_layers=1
model.text_layers=1
model.decoder_layers=1
model.max_caption=24
model.max_aux=40
train.epochs=1
train.batch_size=4
decode.beam=2
decode.max_steps=12
data.n_train=6
data.n_test=4
"""


class TestCli:
    def test_generate_train_eval_pipeline(self, tmp_path):
        cfg_path = tmp_path / "lab.cfg"
        data_dir = tmp_path / "data"
        ckpt = tmp_path / "model.ckpt"
        csv_out = tmp_path / "report.csv"
        cfg_path.write_text(
            TINY_CFG
            + f"data.train={data_dir}/train.jsonl\n"
            + f"data.test={data_dir}/test.jsonl\n")
        assert main(["generate", "--config", str(cfg_path),
                     "--out", str(data_dir)]) == 0
        assert (data_dir / "train.jsonl").exists()
        assert (data_dir / "test.jsonl").exists()
        assert main(["train", "--config", str(cfg_path), "--mode", "vanilla",
                     "--out", str(ckpt)]) == 0
        assert ckpt.exists()
        assert main(["eval", "--config", str(cfg_path),
                     "--checkpoint", str(ckpt), "--scenario", "complete",
                     "--out", str(csv_out)]) == 0
        header = csv_out.read_text().splitlines()[0]
        assert header == ",".join(CSV_COLUMNS)

    def test_config_error_exit_code(self, tmp_path):
        bad = tmp_path / "bad.cfg"
        bad.write_text("no equals sign here\n")
        assert main(["generate", "--config", str(bad),
                     "--out", str(tmp_path / "d")]) == 2

    def test_missing_checkpoint_exit_code(self, tmp_path):
        cfg_path = tmp_path / "lab.cfg"
        cfg_path.write_text(TINY_CFG + f"data.test={tmp_path}/nope.jsonl\n")
        assert main(["eval", "--config", str(cfg_path),
                     "--checkpoint", str(tmp_path / "nope.ckpt"),
                     "--out", str(tmp_path / "r.csv")]) == 3

    def test_plot_data_error_exit_code(self, tmp_path):
        p = tmp_path / "empty.csv"
        p.write_text(",".join(CSV_COLUMNS) + "\n")
        assert main(["plot", str(p), "--out", str(tmp_path / "x.svg")]) == 3

    def test_unknown_scenario_exit_code(self, tmp_path):
        cfg_path = tmp_path / "lab.cfg"
        data_dir = tmp_path / "data"
        ckpt = tmp_path / "model.ckpt"
        cfg_path.write_text(
            TINY_CFG
            + f"data.train={data_dir}/train.jsonl\n"
            + f"data.test={data_dir}/test.jsonl\n")
        assert main(["generate", "--config", str(cfg_path),
                     "--out", str(data_dir)]) == 0
        assert main(["train", "--config", str(cfg_path), "--mode", "vanilla",
                     "--out", str(ckpt)]) == 0
        assert main(["eval", "--config", str(cfg_path),
                     "--checkpoint", str(ckpt), "--scenario", "nonesuch",
                     "--out", str(tmp_path / "r.csv")]) == 2
