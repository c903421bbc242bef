"""Missing-ASR curve: score one model while an increasing fraction of test
instances lose their transcript, then render the curve as an SVG.

Run:  python3 demos/03_missing_curve.py   (writes demos/missing_curve.svg)
"""

from pathlib import Path

from vpclab.datagen import WorldSpec, gen_corpus
from vpclab.decode import DecodeConfig
from vpclab.experiments import run_missing_curve, write_csv
from vpclab.model import ModelConfig
from vpclab.svgplot import emit_plot
from vpclab.timetok import build_vocab
from vpclab.training import TrainPlan, train_pipeline

spec = WorldSpec(frames=24, feat_dim=8, k_min=1, k_max=3, seed=7)
train_set = gen_corpus(spec, 300, split_seed=1)
test_set = gen_corpus(spec, 40, split_seed=2)
vocab = build_vocab(train_set)
config = ModelConfig(vocab_size=len(vocab), d=48, heads=4, frames=spec.frames,
                     feat_dim=spec.feat_dim, max_caption=48, max_aux=96)
decode_cfg = DecodeConfig(beam=4, max_steps=49)

rows = []
for mode, label in (("vanilla", "vanilla"), ("dropam", "dropam")):
    print(f"training {label} ...")
    result = train_pipeline(
        config, train_set, vocab,
        TrainPlan(epochs=15, batch_size=16, base_lr=5e-4, mode=mode, seed=0))
    rows += run_missing_curve(result.model, vocab, test_set, decode_cfg,
                              seed=0, cfg_hash="demo", model_id=label)

out_dir = Path(__file__).parent
csv_path = out_dir / "missing_curve.csv"
svg_path = out_dir / "missing_curve.svg"
write_csv(csv_path, rows)
emit_plot(csv_path, svg_path, metric="cider",
          title="CIDEr vs % of test transcripts removed",
          x_label="% ASR missing", y_label="CIDEr")
print(f"wrote {csv_path} and {svg_path}")
