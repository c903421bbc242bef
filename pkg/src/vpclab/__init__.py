"""vpclab: a desk-scale laboratory for missing-resistant multimodal video
paragraph captioning.

Synthetic multimodal corpora, a numpy transformer captioner with
hand-verified gradients, modality-dropout and sequence-distillation
training, a noise-scenario benchmark, and reference caption metrics.
"""

__version__ = "0.1.0"

from .datagen import Event, Instance, WorldSpec, gen_corpus  # noqa: F401
from .decode import DecodeConfig, beam_decode, beam_search  # noqa: F401
from .model import Model, ModelConfig, init_params, make_batch  # noqa: F401
from .nncore import ParamStore, adam_step, cosine_lr, grad_check  # noqa: F401
from .noisebench import BUILTIN_SCENARIOS, Scenario, apply_scenario  # noqa: F401
from .capmetrics import cider_corpus, meteor_lite, r4, score_corpus  # noqa: F401
from .timetok import Vocab, build_vocab, time_to_token, token_to_time  # noqa: F401
from .training import TrainPlan, drop_am, train, train_pipeline  # noqa: F401
