"""Command-line entry point.

Subcommands: generate | train | distill | eval | sweep | curve | gradcheck
| plot.  Exit codes: 0 success, 2 configuration error, 3 data error,
4 numeric failure.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from .datagen import GenerationError, WorldSpec, gen_corpus
from .decode import DecodeConfig
from .experiments import (
    CSV_COLUMNS,
    evaluate_scenario,
    metric_rows,
    run_ablation,
    run_drop_sweep,
    run_missing_curve,
    write_csv,
)
from .io import (
    Checkpoint,
    ConfigError,
    DataError,
    config_hash,
    decode_config_from,
    load_checkpoint,
    load_config,
    load_corpus,
    model_config_from,
    save_checkpoint,
    save_corpus,
    train_plan_from,
    world_spec_from,
)
from .model import Model, ModelConfig, init_params, make_batch
from .nncore import grad_check
from .noisebench import BUILTIN_SCENARIOS, get_scenario
from .seeding import derive_rng
from .timetok import build_vocab
from .training import MODES, NumericError, TrainPlan, build_distill_set, make_augmented, train_pipeline

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_NUMERIC = 4


def _load_cfg(args) -> dict[str, str]:
    return load_config(args.config) if args.config else {}


def _seed(args, cfg: dict[str, str], default: int = 0) -> int:
    if args.seed is not None:
        return args.seed
    return int(cfg.get("train.seed", cfg.get("world.seed", default)))


def _train_corpus(cfg: dict[str, str], args):
    path = getattr(args, "data", None) or cfg.get("data.train")
    if not path:
        raise ConfigError("no training corpus: set data.train in the config")
    return load_corpus(path)


def _test_corpus(cfg: dict[str, str]):
    path = cfg.get("data.test")
    if not path:
        raise ConfigError("no test corpus: set data.test in the config")
    return load_corpus(path)


def _float_list(text: str) -> list[float]:
    try:
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError as exc:
        raise ConfigError(f"bad numeric list {text!r}") from exc


def cmd_generate(args) -> int:
    cfg = _load_cfg(args)
    spec = world_spec_from(cfg)
    if args.seed is not None:
        spec = WorldSpec(**{**spec.__dict__, "seed": args.seed})
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    n_train = int(cfg.get("data.n_train", 200))
    n_test = int(cfg.get("data.n_test", 100))
    save_corpus(out / "train.jsonl", gen_corpus(spec, n_train, split_seed=1))
    save_corpus(out / "test.jsonl", gen_corpus(spec, n_test, split_seed=2))
    print(f"wrote {n_train}+{n_test} instances to {out}")
    return EXIT_OK


def _checkpoint_from(result_model: Model, vocab, meta: dict) -> Checkpoint:
    return Checkpoint(result_model.config, vocab, result_model.params, meta)


def cmd_train(args) -> int:
    cfg = _load_cfg(args)
    seed = _seed(args, cfg)
    mode = args.mode or cfg.get("train.mode", "vanilla")
    if mode not in MODES:
        raise ConfigError(f"unknown mode {mode!r}; expected one of {MODES}")
    corpus = _train_corpus(cfg, args)
    vocab = build_vocab(corpus, n_bins=int(cfg.get("vocab.n_bins", 100)))
    mcfg = model_config_from(cfg, len(vocab))
    plan = train_plan_from(cfg, mode=mode, seed=seed)
    teacher = None
    if args.teacher:
        tck = load_checkpoint(args.teacher)
        if tck.vocab != vocab:
            raise DataError("teacher checkpoint vocab does not match corpus vocab")
        teacher = tck.model()
    result = train_pipeline(mcfg, corpus, vocab, plan, teacher=teacher)
    meta = {"mode": mode, "epochs": plan.epochs, "seed": seed,
            "config_hash": config_hash(cfg)}
    save_checkpoint(args.out, _checkpoint_from(result.model, vocab, meta))
    if result.teacher is not None and not args.teacher:
        save_checkpoint(str(args.out) + ".teacher",
                        _checkpoint_from(result.teacher, vocab,
                                         {**meta, "mode": "vanilla"}))
    print(f"trained {mode} for {plan.epochs} epochs; "
          f"final loss {result.logs[-1].mean_loss:.4f}; saved {args.out}")
    return EXIT_OK


def cmd_distill(args) -> int:
    cfg = _load_cfg(args)
    if not args.checkpoint:
        raise ConfigError("distill requires --checkpoint (the teacher)")
    ck = load_checkpoint(args.checkpoint)
    corpus = _train_corpus(cfg, args)
    vocab = build_vocab(corpus, n_bins=int(cfg.get("vocab.n_bins", 100)))
    if ck.vocab != vocab:
        raise DataError("checkpoint vocab does not match corpus vocab")
    distill = build_distill_set(ck.model(), corpus, vocab, decode_config_from(cfg))
    augmented = make_augmented(corpus, distill.instances)
    save_corpus(args.out, augmented)
    print(f"wrote augmented corpus ({len(augmented)} instances) to {args.out}")
    return EXIT_OK


def cmd_eval(args) -> int:
    cfg = _load_cfg(args)
    if not args.checkpoint:
        raise ConfigError("eval requires --checkpoint")
    ck = load_checkpoint(args.checkpoint)
    test = _test_corpus(cfg)
    if cfg.get("data.train"):
        corpus_vocab = build_vocab(load_corpus(cfg["data.train"]),
                                   n_bins=int(cfg.get("vocab.n_bins", 100)))
        if ck.vocab != corpus_vocab:
            raise DataError("checkpoint vocab does not match corpus vocab")
    names = [args.scenario] if args.scenario else list(BUILTIN_SCENARIOS)
    seed = _seed(args, cfg)
    dcfg = decode_config_from(cfg)
    model = ck.model()
    model_id = ck.meta.get("mode", "model")
    rows = []
    for name in names:
        report, _ = evaluate_scenario(model, ck.vocab, test, name, dcfg,
                                      model_id=model_id)
        rows.extend(metric_rows(report, seed, config_hash(cfg)))
    write_csv(args.out, rows)
    print(f"wrote {len(rows)} rows ({len(names)} scenarios) to {args.out}")
    return EXIT_OK


def cmd_sweep(args) -> int:
    cfg = _load_cfg(args)
    seed = _seed(args, cfg)
    train = _train_corpus(cfg, args)
    test = _test_corpus(cfg)
    vocab = build_vocab(train, n_bins=int(cfg.get("vocab.n_bins", 100)))
    mcfg = model_config_from(cfg, len(vocab))
    plan = train_plan_from(cfg, mode="dropam", seed=seed)
    rates = _float_list(args.drop_grid) if args.drop_grid else (0.1, 0.3, 0.5, 0.7, 0.9)
    rows = run_drop_sweep(mcfg, train, test, vocab, plan, decode_config_from(cfg),
                          seed, config_hash(cfg), rates=rates)
    write_csv(args.out, rows)
    print(f"wrote drop sweep ({len(rows)} rows) to {args.out}")
    return EXIT_OK


def cmd_curve(args) -> int:
    cfg = _load_cfg(args)
    if not args.checkpoint:
        raise ConfigError("curve requires --checkpoint")
    ck = load_checkpoint(args.checkpoint)
    test = _test_corpus(cfg)
    seed = _seed(args, cfg)
    grid = _float_list(args.percent_grid) if args.percent_grid else (0, 25, 50, 75, 100)
    rows = run_missing_curve(ck.model(), ck.vocab, test, decode_config_from(cfg),
                             seed, config_hash(cfg), percentages=grid,
                             model_id=ck.meta.get("mode", "model"))
    write_csv(args.out, rows)
    print(f"wrote missing curve ({len(rows)} rows) to {args.out}")
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    seed = args.seed if args.seed is not None else 0
    spec = WorldSpec(frames=6, feat_dim=4, k_min=1, k_max=2, seed=seed)
    corpus = gen_corpus(spec, 2, split_seed=1)
    vocab = build_vocab(corpus, n_bins=10)
    mcfg = ModelConfig(vocab_size=len(vocab), d=8, heads=2, video_layers=1,
                       text_layers=1, decoder_layers=1, frames=6, feat_dim=4,
                       max_caption=24, max_aux=32)
    model = Model(mcfg, init_params(mcfg, seed=seed, dtype=np.float64))
    batch = make_batch(corpus, vocab, mcfg, dtype=np.float64)

    def loss_fn():
        return model.loss_and_grads(batch)

    worst = grad_check(loss_fn, model.params, rng=derive_rng(seed, "gradcheck"))
    ok = worst < 1e-4
    print(f"gradcheck max relative error {worst:.3e} "
          f"({'PASS' if ok else 'FAIL'}, tolerance 1e-4)")
    return EXIT_OK if ok else EXIT_NUMERIC


def cmd_plot(args) -> int:
    from .svgplot import PlotError, emit_plot

    try:
        emit_plot(args.csv, args.out, metric=args.metric,
                  title=args.title, x_label=args.x_label)
    except PlotError as exc:
        raise DataError(str(exc)) from exc
    print(f"wrote {args.out}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="vpclab",
        description="Missing-resistant multimodal captioning laboratory")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, out_required=True):
        p.add_argument("--config", help="flat key=value config file")
        p.add_argument("--out", required=out_required, help="output path")
        p.add_argument("--seed", type=int, default=None, help="master seed")

    p = sub.add_parser("generate", help="write synthetic train/test JSONL corpora")
    common(p)
    p.set_defaults(fn=cmd_generate)

    p = sub.add_parser("train", help="train a model and save a checkpoint")
    common(p)
    p.add_argument("--mode", choices=MODES, default=None)
    p.add_argument("--data", help="training corpus JSONL (overrides data.train)")
    p.add_argument("--teacher", help="existing teacher checkpoint")
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("distill", help="teacher-decode an augmented corpus")
    common(p)
    p.add_argument("--checkpoint", required=True, help="teacher checkpoint")
    p.add_argument("--data", help="training corpus JSONL (overrides data.train)")
    p.set_defaults(fn=cmd_distill)

    p = sub.add_parser("eval", help="score a checkpoint under noise scenarios")
    common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--scenario", choices=sorted(BUILTIN_SCENARIOS), default=None,
                   help="single scenario (default: all built-ins)")
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("sweep", help="train/evaluate over a drop-rate grid")
    common(p)
    p.add_argument("--drop-grid", help="comma-separated rates, e.g. 0.1,0.5,0.9")
    p.set_defaults(fn=cmd_sweep)

    p = sub.add_parser("curve", help="metric vs. percentage of missing ASR")
    common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--percent-grid", help="comma-separated percentages")
    p.set_defaults(fn=cmd_curve)

    p = sub.add_parser("gradcheck", help="finite-difference gradient audit")
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(fn=cmd_gradcheck)

    p = sub.add_parser("plot", help="render a metric CSV as an SVG line chart")
    p.add_argument("csv", help="input CSV in the report schema")
    p.add_argument("--out", required=True)
    p.add_argument("--metric", default="cider")
    p.add_argument("--title", default=None)
    p.add_argument("--x-label", default="scenario")
    p.set_defaults(fn=cmd_plot)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code not in (0, None) else 0
    try:
        return args.fn(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, GenerationError, FileNotFoundError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (NumericError, FloatingPointError) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
