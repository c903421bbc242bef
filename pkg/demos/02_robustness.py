"""Robustness story: a vanilla model trained on complete inputs collapses
when the auxiliary modalities go missing at test time; a model trained with
modality dropping plus sequence distillation degrades gracefully.

Run:  python3 demos/02_robustness.py   (a few minutes on one core)
"""

from vpclab.datagen import WorldSpec, gen_corpus
from vpclab.decode import DecodeConfig
from vpclab.experiments import consistency_between, evaluate_scenario
from vpclab.model import ModelConfig
from vpclab.timetok import build_vocab
from vpclab.training import TrainPlan, train_pipeline

spec = WorldSpec(frames=24, feat_dim=8, k_min=1, k_max=3, seed=7)
train_set = gen_corpus(spec, 400, split_seed=1)
test_set = gen_corpus(spec, 60, split_seed=2)
vocab = build_vocab(train_set)
config = ModelConfig(vocab_size=len(vocab), d=48, heads=4, frames=spec.frames,
                     feat_dim=spec.feat_dim, max_caption=48, max_aux=96)
decode_cfg = DecodeConfig(beam=4, max_steps=49)

print("training the vanilla (modality-complete) model ...")
vanilla = train_pipeline(
    config, train_set, vocab,
    TrainPlan(epochs=18, batch_size=16, base_lr=5e-4, mode="vanilla", seed=0))

print("training the robust model (drop + sequence distillation) ...")
robust = train_pipeline(
    config, train_set, vocab,
    TrainPlan(epochs=18, batch_size=16, base_lr=5e-4, mode="mrvpc", seed=0,
              distill_decode=decode_cfg),
    teacher=vanilla.model)

print(f"\n{'model':10s} {'scenario':12s} {'CIDEr':>7s} {'METEOR':>7s}")
for name, result in (("vanilla", vanilla), ("robust", robust)):
    for scenario in ("complete", "video_only", "random_missing"):
        report, _ = evaluate_scenario(result.model, vocab, test_set,
                                      scenario, decode_cfg, model_id=name)
        print(f"{name:10s} {scenario:12s} {report.cider:7.2f} {report.meteor:7.3f}")

print("\nprediction consistency (complete vs video-only decodes):")
for name, result in (("vanilla", vanilla), ("robust", robust)):
    c = consistency_between(result.model, vocab, test_set, decode_cfg)
    print(f"  {name:10s} token-F1 {c:.3f}")
