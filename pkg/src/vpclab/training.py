"""Training strategies: vanilla teacher-forced training, random auxiliary
modality dropping, sequence-level distillation from a modality-complete
teacher, and the word-level distillation baseline."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np

from . import layers
from .datagen import Instance
from .decode import DecodeConfig, decode_corpus
from .model import Batch, Model, ModelConfig, make_batch
from .nncore import AdamState, ScheduleSpec, adam_step, clip_global_norm, cosine_lr
from .seeding import derive_rng
from .timetok import Vocab

MODES = ("vanilla", "dropam", "mrvpc", "wordkd")


class NumericError(RuntimeError):
    """Raised when training hits a non-finite loss."""


@dataclass
class TrainPlan:
    epochs: int = 30
    batch_size: int = 16
    base_lr: float = 2e-4
    warmup_frac: float = 0.05
    weight_decay: float = 5e-2
    grad_clip: float = 1.0
    p_asr: float = 0.5
    p_events: float = 0.5
    mode: str = "vanilla"
    distill_decode: DecodeConfig = field(default_factory=DecodeConfig)
    temperature: float = 2.0
    kd_mix: float = 0.5
    coupled_drop: bool = False
    seed: int = 0

    def __post_init__(self) -> None:
        if self.mode not in MODES:
            raise ValueError(f"unknown mode {self.mode!r}")
        if not (0.0 <= self.p_asr <= 1.0 and 0.0 <= self.p_events <= 1.0):
            raise ValueError("drop rates must lie in [0, 1]")
        if not 0.0 <= self.kd_mix <= 1.0:
            raise ValueError("kd_mix must lie in [0, 1]")
        if self.temperature <= 0:
            raise ValueError("temperature must be > 0")


def drop_am(
    instance: Instance,
    p_asr: float,
    p_events: float,
    rng: np.random.Generator,
    coupled: bool = False,
) -> Instance:
    """Randomly mark the auxiliary modalities absent (fresh draws per call).

    With ``coupled`` both modalities share one uniform draw; the default is
    two independent draws.
    """
    if not (0.0 <= p_asr <= 1.0 and 0.0 <= p_events <= 1.0):
        raise ValueError("drop rates must lie in [0, 1]")
    p1 = rng.random()
    p2 = p1 if coupled else rng.random()
    out = instance
    if p1 <= p_asr:
        out = out.with_asr((), absent=True)
    if p2 <= p_events:
        out = out.with_events((), absent=True)
    return out


@dataclass
class EpochLog:
    epoch: int
    mean_loss: float
    lr: float


def train(
    model: Model,
    corpus: Sequence[Instance],
    vocab: Vocab,
    plan: TrainPlan,
    apply_drop: bool | None = None,
    drop_rng_factory: Callable[[int], np.random.Generator] | None = None,
) -> list[EpochLog]:
    """Epoch loop with seeded shuffling, AdamW, cosine schedule, and global
    gradient clipping.  Mutates ``model.params`` in place.

    ``apply_drop`` defaults from the plan mode; vanilla mode never draws
    from the drop RNG.  ``drop_rng_factory`` (epoch -> Generator) exists so
    tests can inject counting RNGs.
    """
    corpus = [inst for inst in corpus if len(inst.caption) > 0]
    if not corpus:
        raise ValueError("corpus has no trainable instances")
    if apply_drop is None:
        apply_drop = plan.mode in ("dropam", "mrvpc", "wordkd")
    steps_per_epoch = math.ceil(len(corpus) / plan.batch_size)
    total_steps = max(1, plan.epochs * steps_per_epoch)
    spec = ScheduleSpec(plan.base_lr, total_steps,
                        min(int(plan.warmup_frac * total_steps), total_steps - 1))
    state = AdamState()
    logs: list[EpochLog] = []
    step = 0
    order = np.arange(len(corpus))
    for epoch in range(plan.epochs):
        shuffle_rng = derive_rng(plan.seed, "shuffle", epoch)
        shuffle_rng.shuffle(order)
        if apply_drop:
            if drop_rng_factory is not None:
                drop_rng = drop_rng_factory(epoch)
            else:
                drop_rng = derive_rng(plan.seed, "dropam", epoch)
        losses = []
        for start in range(0, len(corpus), plan.batch_size):
            batch_insts = [corpus[i] for i in order[start : start + plan.batch_size]]
            if apply_drop:
                batch_insts = [
                    drop_am(inst, plan.p_asr, plan.p_events, drop_rng, plan.coupled_drop)
                    for inst in batch_insts
                ]
            batch = make_batch(batch_insts, vocab, model.config,
                               dtype=model._v("venc.proj.w").dtype)
            loss = model.loss_and_grads(batch)
            if not math.isfinite(loss):
                raise NumericError(
                    f"non-finite loss at step {step} (epoch {epoch}, "
                    f"batch ids {batch.ids})")
            clip_global_norm(model.params, plan.grad_clip)
            lr = cosine_lr(step, spec)
            adam_step(model.params, state, lr, weight_decay=plan.weight_decay)
            losses.append(loss)
            step += 1
        logs.append(EpochLog(epoch, float(np.mean(losses)), cosine_lr(step, spec)))
    return logs


@dataclass
class DistillSet:
    """Teacher-decoded captions over the training inputs."""

    instances: list[Instance]
    provenance: list[str]

    def trainable(self) -> list[Instance]:
        return [inst for inst in self.instances if len(inst.caption) > 0]


def build_distill_set(
    teacher: Model,
    corpus: Sequence[Instance],
    vocab: Vocab,
    decode_cfg: DecodeConfig,
) -> DistillSet:
    """Decode every training instance on its modality-complete inputs and
    replace the caption with the teacher prediction."""
    decoded = decode_corpus(teacher, corpus, vocab, decode_cfg)
    instances = []
    provenance = []
    for inst, (tokens, truncated) in zip(corpus, decoded):
        instances.append(replace(inst, caption=tuple(tokens)))
        if not tokens:
            provenance.append("empty")
        else:
            provenance.append("truncated" if truncated else "teacher")
    return DistillSet(instances, provenance)


def make_augmented(d_tr: Sequence[Instance], d_kd: Sequence[Instance]) -> list[Instance]:
    """Multiset union of the ground-truth and distilled sets, interleaved
    deterministically (shuffling happens later, inside the epoch loop)."""
    if len(d_tr) != len(d_kd):
        raise ValueError("distill set size must equal the training set size")
    out: list[Instance] = []
    for a, b in zip(d_tr, d_kd):
        out.append(a)
        out.append(replace(b, id=b.id + "#kd"))
    return out


def word_kd_loss(
    student_logits: np.ndarray,
    teacher_logits: np.ndarray,
    temperature: float,
    mix: float,
    targets: np.ndarray,
    mask: np.ndarray,
) -> tuple[float, np.ndarray]:
    """mix * CE(student, target) + (1-mix) * T^2 * KL(teacher || student)
    with both distributions softened by the temperature; averaged over
    non-pad positions.  Returns (loss, dlogits for the student)."""
    if student_logits.shape != teacher_logits.shape:
        raise ValueError("student and teacher logits must align")
    count = mask.sum()
    logp_s = layers.log_softmax(student_logits)
    p_s = np.exp(logp_s)
    nll = -np.take_along_axis(logp_s, targets[:, :, None], axis=2)[:, :, 0]
    ce = float((nll * mask).sum() / count)
    t = temperature
    logp_st = layers.log_softmax(student_logits / t)
    logp_tt = layers.log_softmax(teacher_logits / t)
    p_st = np.exp(logp_st)
    p_tt = np.exp(logp_tt)
    kl = float(((p_tt * (logp_tt - logp_st)).sum(axis=-1) * mask).sum() / count)
    loss = mix * ce + (1.0 - mix) * t * t * kl
    dce = p_s.copy()
    rows = np.arange(targets.shape[0])[:, None]
    cols = np.arange(targets.shape[1])[None, :]
    dce[rows, cols, targets] -= 1.0
    dkd = t * (p_st - p_tt)
    dlogits = (mix * dce + (1.0 - mix) * dkd) * mask[:, :, None] / count
    return loss, dlogits


def _train_wordkd(
    student: Model, teacher: Model, corpus: Sequence[Instance], vocab: Vocab, plan: TrainPlan
) -> list[EpochLog]:
    """DropAM-style student updates against frozen modality-complete teacher
    logits at every caption position."""
    steps_per_epoch = math.ceil(len(corpus) / plan.batch_size)
    total_steps = max(1, plan.epochs * steps_per_epoch)
    spec = ScheduleSpec(plan.base_lr, total_steps,
                        min(int(plan.warmup_frac * total_steps), total_steps - 1))
    state = AdamState()
    logs = []
    step = 0
    order = np.arange(len(corpus))
    dtype = student._v("venc.proj.w").dtype
    for epoch in range(plan.epochs):
        derive_rng(plan.seed, "shuffle", epoch).shuffle(order)
        drop_rng = derive_rng(plan.seed, "dropam", epoch)
        losses = []
        for start in range(0, len(corpus), plan.batch_size):
            insts = [corpus[i] for i in order[start : start + plan.batch_size]]
            dropped = [drop_am(i, plan.p_asr, plan.p_events, drop_rng, plan.coupled_drop)
                       for i in insts]
            t_batch = make_batch(insts, vocab, teacher.config, dtype=dtype)
            s_batch = make_batch(dropped, vocab, student.config, dtype=dtype)
            teacher_logits = teacher.forward_logits(t_batch)
            student.params.zero_grads()
            student_logits = student.forward_logits(s_batch)
            loss, dlogits = word_kd_loss(
                student_logits, teacher_logits, plan.temperature, plan.kd_mix,
                s_batch.cap_tgt, s_batch.cap_mask)
            if not math.isfinite(loss):
                raise NumericError(f"non-finite loss at step {step}")
            student.backward_from_dlogits(dlogits)
            clip_global_norm(student.params, plan.grad_clip)
            adam_step(student.params, state, cosine_lr(step, spec),
                      weight_decay=plan.weight_decay)
            losses.append(loss)
            step += 1
        logs.append(EpochLog(epoch, float(np.mean(losses)), cosine_lr(step, spec)))
    return logs


@dataclass
class PipelineResult:
    model: Model
    logs: list[EpochLog]
    teacher: Model | None = None
    distill: DistillSet | None = None


def train_pipeline(
    config: ModelConfig,
    corpus: Sequence[Instance],
    vocab: Vocab,
    plan: TrainPlan,
    dtype=np.float32,
    teacher: Model | None = None,
) -> PipelineResult:
    """Run one training mode end to end.

    vanilla / dropam train a single model; mrvpc and wordkd first train a
    modality-complete teacher (unless one is supplied), then the student.
    Model init and every stochastic stream derive from plan.seed.
    """
    if plan.mode in ("vanilla", "dropam"):
        model = Model.create(config, derive_rng(plan.seed, "init").integers(2**63), dtype)
        logs = train(model, corpus, vocab, plan)
        return PipelineResult(model, logs)

    if teacher is None:
        teacher_plan = replace_plan(plan, mode="vanilla")
        teacher = train_pipeline(config, corpus, vocab, teacher_plan, dtype).model
    student = Model.create(config, derive_rng(plan.seed, "init-student").integers(2**63), dtype)
    if plan.mode == "wordkd":
        logs = _train_wordkd(student, teacher, list(corpus), vocab, plan)
        return PipelineResult(student, logs, teacher=teacher)
    distill = build_distill_set(teacher, corpus, vocab, plan.distill_decode)
    augmented = make_augmented(list(corpus), distill.instances)
    augmented = [inst for inst in augmented if len(inst.caption) > 0]
    logs = train(student, augmented, vocab, plan, apply_drop=True)
    return PipelineResult(student, logs, teacher=teacher, distill=distill)


def replace_plan(plan: TrainPlan, **changes) -> TrainPlan:
    from dataclasses import replace as dc_replace

    return dc_replace(plan, **changes)
