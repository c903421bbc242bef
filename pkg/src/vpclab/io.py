"""Persistence: JSONL corpora, binary checkpoints, flat config files.

All writes are atomic (temp file + rename).
"""

from __future__ import annotations

import hashlib
import json
import os
import struct
import tempfile
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .datagen import AsrSentence, Event, Instance, WorldSpec
from .decode import DecodeConfig
from .model import Model, ModelConfig
from .nncore import ParamStore
from .timetok import Vocab
from .training import TrainPlan

CHECKPOINT_MAGIC = b"VPCLCKPT"
CHECKPOINT_VERSION = 1


class ConfigError(ValueError):
    pass


class DataError(ValueError):
    pass


def _atomic_write(path: str | Path, data: bytes) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name + ".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


# -- JSONL corpora -----------------------------------------------------------

def instance_to_json(inst: Instance) -> dict:
    return {
        "id": inst.id,
        "video": [[float(x) for x in row] for row in inst.video],
        "asr": [
            {"t": s.start, "start": s.start, "end": s.end, "text": " ".join(s.tokens)}
            for s in inst.asr
        ],
        "events": [{"start": ev.start, "end": ev.end} for ev in inst.events],
        "caption": " ".join(inst.caption),
        "absent": {"asr": inst.asr_absent, "events": inst.events_absent},
    }


def instance_from_json(obj: dict) -> Instance:
    events = tuple(
        Event(-1, -1, ev["start"], ev["end"]) for ev in obj.get("events", ())
    )
    asr = tuple(
        AsrSentence(tuple(s["text"].split()), s["start"], s["end"])
        for s in obj.get("asr", ())
    )
    caption = tuple(obj["caption"].split()) if obj.get("caption") else ()
    absent = obj.get("absent", {})
    return Instance(
        id=obj["id"],
        video=np.asarray(obj["video"], dtype=np.float64),
        asr=asr,
        events=events,
        caption=caption,
        asr_absent=bool(absent.get("asr", False)),
        events_absent=bool(absent.get("events", False)),
    )


def save_corpus(path: str | Path, corpus: Sequence[Instance]) -> None:
    lines = [json.dumps(instance_to_json(i), separators=(",", ":")) for i in corpus]
    _atomic_write(path, ("\n".join(lines) + "\n").encode("utf-8"))


def load_corpus(path: str | Path) -> list[Instance]:
    try:
        text = Path(path).read_text("utf-8")
    except OSError as exc:
        raise DataError(f"cannot read corpus {path}: {exc}") from exc
    out = []
    for ln, line in enumerate(text.splitlines(), 1):
        if not line.strip():
            continue
        try:
            out.append(instance_from_json(json.loads(line)))
        except (KeyError, ValueError) as exc:
            raise DataError(f"{path}:{ln}: malformed instance: {exc}") from exc
    if not out:
        raise DataError(f"{path}: empty corpus")
    return out


# -- checkpoints -------------------------------------------------------------

@dataclass
class Checkpoint:
    config: ModelConfig
    vocab: Vocab
    params: ParamStore
    meta: dict

    def model(self) -> Model:
        return Model(self.config, self.params)


def save_checkpoint(path: str | Path, checkpoint: Checkpoint) -> None:
    header = {
        "config": asdict(checkpoint.config),
        "vocab": {"tokens": list(checkpoint.vocab.tokens),
                  "n_bins": checkpoint.vocab.n_bins},
        "meta": checkpoint.meta,
    }
    blob = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    parts = [CHECKPOINT_MAGIC, struct.pack("<I", CHECKPOINT_VERSION),
             struct.pack("<I", len(blob)), blob,
             struct.pack("<I", len(checkpoint.params))]
    for p in checkpoint.params:
        name = p.name.encode("utf-8")
        arr = np.ascontiguousarray(p.value, dtype="<f4")
        parts.append(struct.pack("<H", len(name)))
        parts.append(name)
        parts.append(struct.pack("<B", arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(arr.tobytes())
    _atomic_write(path, b"".join(parts))


class _Reader:
    def __init__(self, data: bytes, path: str):
        self.data = data
        self.off = 0
        self.path = path

    def take(self, n: int) -> bytes:
        if self.off + n > len(self.data):
            raise DataError(f"{self.path}: truncated checkpoint")
        chunk = self.data[self.off : self.off + n]
        self.off += n
        return chunk

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def load_checkpoint(path: str | Path) -> Checkpoint:
    try:
        data = Path(path).read_bytes()
    except OSError as exc:
        raise DataError(f"cannot read checkpoint {path}: {exc}") from exc
    r = _Reader(data, str(path))
    if r.take(len(CHECKPOINT_MAGIC)) != CHECKPOINT_MAGIC:
        raise DataError(f"{path}: not a checkpoint file")
    (version,) = r.unpack("<I")
    if version != CHECKPOINT_VERSION:
        raise DataError(f"{path}: unsupported checkpoint version {version}")
    (hlen,) = r.unpack("<I")
    header = json.loads(r.take(hlen).decode("utf-8"))
    config = ModelConfig(**header["config"])
    vocab = Vocab(header["vocab"]["tokens"], header["vocab"]["n_bins"])
    from .model import init_params

    expected = {p.name: p.shape for p in init_params(config, seed=0, dtype=np.float32)}
    params = ParamStore()
    (count,) = r.unpack("<I")
    for _ in range(count):
        (nlen,) = r.unpack("<H")
        name = r.take(nlen).decode("utf-8")
        (ndim,) = r.unpack("<B")
        shape = r.unpack(f"<{ndim}I")
        n_vals = int(np.prod(shape)) if shape else 1
        arr = np.frombuffer(r.take(4 * n_vals), dtype="<f4").reshape(shape).copy()
        if name not in expected:
            raise DataError(f"{path}: unexpected parameter {name!r}")
        if tuple(expected[name]) != tuple(shape):
            raise DataError(
                f"{path}: parameter {name!r} has shape {shape}, "
                f"config requires {expected[name]}")
        params.add(name, arr)
    if r.off != len(data):
        raise DataError(f"{path}: trailing bytes after checkpoint payload")
    if set(params.names()) != set(expected):
        raise DataError(f"{path}: checkpoint is missing parameters")
    return Checkpoint(config, vocab, params, header["meta"])


# -- flat config files -------------------------------------------------------

def parse_config(text: str) -> dict[str, str]:
    """Flat ``section.key=value`` lines; '#' starts a comment."""
    out: dict[str, str] = {}
    for ln, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {ln}: expected key=value, got {raw!r}")
        key, value = line.split("=", 1)
        key = key.strip()
        if not key:
            raise ConfigError(f"line {ln}: empty key")
        out[key] = value.strip()
    return out


def load_config(path: str | Path) -> dict[str, str]:
    try:
        return parse_config(Path(path).read_text("utf-8"))
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc


def config_hash(cfg: dict[str, str]) -> str:
    canonical = "\n".join(f"{k}={cfg[k]}" for k in sorted(cfg))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()[:12]


def _get(cfg: dict[str, str], key: str, cast, default):
    if key not in cfg:
        return default
    try:
        if cast is bool:
            return cfg[key].lower() in ("1", "true", "yes")
        return cast(cfg[key])
    except ValueError as exc:
        raise ConfigError(f"bad value for {key}: {cfg[key]!r}") from exc


def world_spec_from(cfg: dict[str, str]) -> WorldSpec:
    return WorldSpec(
        n_actions=_get(cfg, "world.n_actions", int, 12),
        n_objects=_get(cfg, "world.n_objects", int, 10),
        n_confusable_pairs=_get(cfg, "world.n_confusable_pairs", int, 3),
        frames=_get(cfg, "world.frames", int, 48),
        feat_dim=_get(cfg, "world.feat_dim", int, 16),
        k_min=_get(cfg, "world.k_min", int, 2),
        k_max=_get(cfg, "world.k_max", int, 6),
        visual_noise=_get(cfg, "world.visual_noise", float, 0.1),
        asr_fidelity=_get(cfg, "world.asr_fidelity", float, 0.95),
        seed=_get(cfg, "world.seed", int, 0),
    )


def model_config_from(cfg: dict[str, str], vocab_size: int) -> ModelConfig:
    return ModelConfig(
        vocab_size=vocab_size,
        d=_get(cfg, "model.d", int, 64),
        heads=_get(cfg, "model.heads", int, 4),
        video_layers=_get(cfg, "model.video_layers", int, 2),
        text_layers=_get(cfg, "model.text_layers", int, 2),
        decoder_layers=_get(cfg, "model.decoder_layers", int, 2),
        frames=_get(cfg, "world.frames", int, 48),
        feat_dim=_get(cfg, "world.feat_dim", int, 16),
        max_caption=_get(cfg, "model.max_caption", int, 96),
        max_aux=_get(cfg, "model.max_aux", int, 256),
    )


def decode_config_from(cfg: dict[str, str]) -> DecodeConfig:
    return DecodeConfig(
        beam=_get(cfg, "decode.beam", int, 4),
        repetition_penalty=_get(cfg, "decode.repetition_penalty", float, 1.2),
        length_penalty=_get(cfg, "decode.length_penalty", float, 1.0),
        max_steps=_get(cfg, "decode.max_steps", int, 97),
    )


def train_plan_from(cfg: dict[str, str], mode: str, seed: int) -> TrainPlan:
    return TrainPlan(
        epochs=_get(cfg, "train.epochs", int, 30),
        batch_size=_get(cfg, "train.batch_size", int, 16),
        base_lr=_get(cfg, "train.base_lr", float, 2e-4),
        warmup_frac=_get(cfg, "train.warmup_frac", float, 0.05),
        weight_decay=_get(cfg, "train.weight_decay", float, 5e-2),
        grad_clip=_get(cfg, "train.grad_clip", float, 1.0),
        p_asr=_get(cfg, "train.p_asr", float, 0.5),
        p_events=_get(cfg, "train.p_events", float, 0.5),
        mode=mode,
        distill_decode=decode_config_from(cfg),
        temperature=_get(cfg, "train.temperature", float, 2.0),
        kd_mix=_get(cfg, "train.kd_mix", float, 0.5),
        coupled_drop=_get(cfg, "train.coupled_drop", bool, False),
        seed=seed,
    )
