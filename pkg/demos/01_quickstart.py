"""Quickstart: generate a small synthetic corpus, train a captioner for a
few minutes, and compare its decoded captions against the references.

Run:  python3 demos/01_quickstart.py
"""

import numpy as np

from vpclab.datagen import WorldSpec, gen_corpus
from vpclab.decode import DecodeConfig, beam_decode
from vpclab.model import ModelConfig
from vpclab.timetok import build_vocab
from vpclab.training import TrainPlan, train_pipeline

# A small world: short videos, few events, modest vocabulary.
spec = WorldSpec(frames=24, feat_dim=8, k_min=1, k_max=3, seed=7)
train_set = gen_corpus(spec, 300, split_seed=1)
test_set = gen_corpus(spec, 20, split_seed=2)
vocab = build_vocab(train_set)
print(f"corpus: {len(train_set)} train / {len(test_set)} test, "
      f"vocab {len(vocab)} tokens")

config = ModelConfig(vocab_size=len(vocab), d=48, heads=4, frames=spec.frames,
                     feat_dim=spec.feat_dim, max_caption=48, max_aux=96)
plan = TrainPlan(epochs=15, batch_size=16, base_lr=5e-4, mode="vanilla", seed=0)
print("training vanilla model ...")
result = train_pipeline(config, train_set, vocab, plan)
for log in result.logs[:: max(1, len(result.logs) // 5)]:
    print(f"  epoch {log.epoch:2d}  loss {log.mean_loss:.3f}")

decode_cfg = DecodeConfig(beam=4, max_steps=49)
print("\nsample decodes (prediction vs reference):")
for inst in test_set[:5]:
    words, _ = beam_decode(result.model, inst, vocab, decode_cfg)
    print(f"  pred: {' '.join(words)}")
    print(f"  ref : {' '.join(inst.caption)}\n")
