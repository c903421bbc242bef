"""Experiment orchestration: per-scenario evaluation, the modality ablation
grid, the ASR-missing curve, the drop-rate sweep, and the end-to-end
pipeline, all emitting provenance-stamped CSV rows."""

from __future__ import annotations

import csv
import io as _io
import os
import tempfile
from dataclasses import replace
from pathlib import Path
from typing import Sequence

import numpy as np

from . import __version__
from .capmetrics import MetricReport, consistency_f1, score_corpus
from .datagen import Instance
from .decode import DecodeConfig, decode_corpus
from .model import Model, ModelConfig
from .noisebench import Scenario, apply_scenario, get_scenario, null_asr
from .timetok import Vocab
from .training import TrainPlan, train_pipeline
from .seeding import derive_rng

CSV_COLUMNS = ("scenario", "model", "metric", "value", "seed", "config_hash", "build")

# Ablation-grid scenarios (available test modalities); V+E drops ASR,
# V+A drops the boundaries.
GRID_SCENARIOS = {
    "V+E+A": Scenario("complete"),
    "V+E": Scenario("v_plus_e", asr_ops=(("null_asr", {}),)),
    "V+A": Scenario("v_plus_a", event_ops=(("null_events", {}),)),
    "V": Scenario(
        "video_only", asr_ops=(("null_asr", {}),), event_ops=(("null_events", {}),)),
}


def build_id() -> str:
    return f"vpclab-{__version__}"


def write_csv(path: str | Path, rows: Sequence[dict]) -> None:
    buf = _io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=CSV_COLUMNS, lineterminator="\n")
    writer.writeheader()
    for row in rows:
        writer.writerow(row)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name + ".tmp")
    with os.fdopen(fd, "w", encoding="utf-8") as fh:
        fh.write(buf.getvalue())
    os.replace(tmp, path)


def metric_rows(report: MetricReport, seed: int, cfg_hash: str) -> list[dict]:
    rows = []
    metrics = {"cider": report.cider, "meteor": report.meteor, "r4": report.r4}
    if report.consistency is not None:
        metrics["consistency"] = report.consistency
    for metric, value in metrics.items():
        rows.append({
            "scenario": report.scenario,
            "model": report.model_id,
            "metric": metric,
            "value": f"{value:.6f}",
            "seed": seed,
            "config_hash": cfg_hash,
            "build": build_id(),
        })
    return rows


def evaluate_scenario(
    model: Model,
    vocab: Vocab,
    test_corpus: Sequence[Instance],
    scenario: Scenario | str,
    decode_cfg: DecodeConfig,
    model_id: str = "model",
    scenario_label: str | None = None,
) -> tuple[MetricReport, list[list[str]]]:
    """Apply the scenario, decode every instance, score the corpus.

    Returns the report and the raw predictions (token lists).
    """
    if isinstance(scenario, str):
        scenario = get_scenario(scenario)
    noisy = apply_scenario(test_corpus, scenario)
    preds = [tokens for tokens, _ in decode_corpus(model, noisy, vocab, decode_cfg)]
    refs = [list(inst.caption) for inst in test_corpus]
    label = scenario_label or scenario.name
    return score_corpus(label, model_id, preds, refs), preds


def run_ablation(
    models: dict[str, Model],
    vocab: Vocab,
    test_corpus: Sequence[Instance],
    decode_cfg: DecodeConfig,
    seed: int,
    cfg_hash: str,
) -> list[dict]:
    """Models (rows) x available-modality scenarios (columns)."""
    rows = []
    for model_id, model in models.items():
        for label, scenario in GRID_SCENARIOS.items():
            report, _ = evaluate_scenario(
                model, vocab, test_corpus, scenario, decode_cfg,
                model_id=model_id, scenario_label=label)
            rows.extend(metric_rows(report, seed, cfg_hash))
    return rows


def apply_asr_missing(
    corpus: Sequence[Instance], percent: float, seed: int
) -> list[Instance]:
    """Null the ASR modality for a seeded ``percent``% subset."""
    n_drop = int(round(len(corpus) * percent / 100.0))
    rng = derive_rng(seed, "asr-missing", percent)
    chosen = set(rng.permutation(len(corpus))[:n_drop].tolist())
    return [null_asr(inst) if i in chosen else inst for i, inst in enumerate(corpus)]


def run_missing_curve(
    model: Model,
    vocab: Vocab,
    test_corpus: Sequence[Instance],
    decode_cfg: DecodeConfig,
    seed: int,
    cfg_hash: str,
    percentages: Sequence[float] = (0, 25, 50, 75, 100),
    model_id: str = "model",
) -> list[dict]:
    rows = []
    refs = [list(inst.caption) for inst in test_corpus]
    for q in percentages:
        noisy = apply_asr_missing(test_corpus, q, seed)
        preds = [tokens for tokens, _ in decode_corpus(model, noisy, vocab, decode_cfg)]
        report = score_corpus(f"asr_missing_{int(q)}", model_id, preds, refs)
        rows.extend(metric_rows(report, seed, cfg_hash))
    return rows


def run_drop_sweep(
    config: ModelConfig,
    train_corpus: Sequence[Instance],
    test_corpus: Sequence[Instance],
    vocab: Vocab,
    base_plan: TrainPlan,
    decode_cfg: DecodeConfig,
    seed: int,
    cfg_hash: str,
    rates: Sequence[float] = (0.1, 0.3, 0.5, 0.7, 0.9),
) -> list[dict]:
    """Train one DropAM-only model per (p, p) grid point and report the
    four-scenario grid plus its average."""
    rows = []
    for rate in rates:
        plan = replace(base_plan, mode="dropam", p_asr=rate, p_events=rate, seed=seed)
        result = train_pipeline(config, train_corpus, vocab, plan)
        model_id = f"dropam_p{rate:g}"
        grid: dict[str, MetricReport] = {}
        for label, scenario in GRID_SCENARIOS.items():
            report, _ = evaluate_scenario(
                result.model, vocab, test_corpus, scenario, decode_cfg,
                model_id=model_id, scenario_label=label)
            grid[label] = report
            rows.extend(metric_rows(report, seed, cfg_hash))
        for metric in ("cider", "meteor"):
            avg = float(np.mean([getattr(r, metric) for r in grid.values()]))
            rows.append({
                "scenario": "Avg.", "model": model_id, "metric": metric,
                "value": f"{avg:.6f}", "seed": seed, "config_hash": cfg_hash,
                "build": build_id(),
            })
    return rows


def consistency_between(
    model: Model,
    vocab: Vocab,
    test_corpus: Sequence[Instance],
    decode_cfg: DecodeConfig,
    scenario_a: str = "complete",
    scenario_b: str = "video_only",
) -> float:
    """Mean bag-of-tokens F1 between predictions under two scenarios."""
    _, preds_a = evaluate_scenario(model, vocab, test_corpus, scenario_a, decode_cfg)
    _, preds_b = evaluate_scenario(model, vocab, test_corpus, scenario_b, decode_cfg)
    return float(np.mean([consistency_f1(a, b) for a, b in zip(preds_a, preds_b)]))
