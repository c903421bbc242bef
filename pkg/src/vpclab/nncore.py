"""Minimal dense numeric core: parameter storage, AdamW, schedules, grad checks.

Everything operates on plain ``numpy`` arrays.  Training builds may use
float32; gradient checking always runs in float64.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Iterator

import numpy as np


class Param:
    """A named tensor with a matching gradient buffer."""

    __slots__ = ("name", "value", "grad")

    def __init__(self, name: str, value: np.ndarray):
        self.name = name
        self.value = value
        self.grad = np.zeros_like(value)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.value.shape


class ParamStore:
    """Ordered collection of uniquely named parameters."""

    def __init__(self) -> None:
        self._params: dict[str, Param] = {}

    def add(self, name: str, value: np.ndarray) -> Param:
        if name in self._params:
            raise ValueError(f"duplicate parameter name: {name}")
        p = Param(name, value)
        self._params[name] = p
        return p

    def __getitem__(self, name: str) -> Param:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __iter__(self) -> Iterator[Param]:
        return iter(self._params.values())

    def __len__(self) -> int:
        return len(self._params)

    def names(self) -> list[str]:
        return list(self._params)

    def zero_grads(self) -> None:
        for p in self._params.values():
            p.grad[...] = 0.0

    def astype(self, dtype) -> "ParamStore":
        out = ParamStore()
        for p in self._params.values():
            out.add(p.name, p.value.astype(dtype))
        return out

    def copy(self) -> "ParamStore":
        out = ParamStore()
        for p in self._params.values():
            out.add(p.name, p.value.copy())
        return out

    def n_values(self) -> int:
        return sum(p.value.size for p in self._params.values())


@dataclass
class AdamState:
    """First/second moment buffers plus the shared step counter."""

    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    t: int = 0


def adam_step(
    params: ParamStore,
    state: AdamState,
    lr: float,
    betas: tuple[float, float] = (0.9, 0.999),
    eps: float = 1e-8,
    weight_decay: float = 0.0,
) -> None:
    """One AdamW step over every parameter in the store.

    Weight decay is decoupled: applied directly to the parameter, not
    mixed into the gradient moments.
    """
    if lr < 0:
        raise ValueError("lr must be >= 0")
    b1, b2 = betas
    state.t += 1
    t = state.t
    bc1 = 1.0 - b1**t
    bc2 = 1.0 - b2**t
    for p in params:
        if p.name not in state.m:
            state.m[p.name] = np.zeros_like(p.value)
            state.v[p.name] = np.zeros_like(p.value)
        m = state.m[p.name]
        v = state.v[p.name]
        g = p.grad
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * np.square(g)
        if weight_decay != 0.0:
            p.value -= lr * weight_decay * p.value
        p.value -= lr * (m / bc1) / (np.sqrt(v / bc2) + eps)


@dataclass
class ScheduleSpec:
    base_lr: float = 2e-4
    total_steps: int = 1
    warmup_steps: int = 0

    def __post_init__(self) -> None:
        if self.total_steps <= 0:
            raise ValueError("total_steps must be > 0")
        if not 0 <= self.warmup_steps < self.total_steps:
            raise ValueError("need 0 <= warmup_steps < total_steps")


def cosine_lr(step: int, spec: ScheduleSpec) -> float:
    """Linear warmup from 0, then cosine decay to 0 at total_steps."""
    if step < 0:
        raise ValueError("step must be >= 0")
    step = min(step, spec.total_steps)
    if step < spec.warmup_steps:
        return spec.base_lr * step / spec.warmup_steps
    progress = (step - spec.warmup_steps) / (spec.total_steps - spec.warmup_steps)
    return spec.base_lr * 0.5 * (1.0 + math.cos(math.pi * progress))


def clip_global_norm(params: ParamStore, max_norm: float = 1.0) -> float:
    """Scale all gradients so their global L2 norm is at most ``max_norm``.

    Returns the scale factor that was applied (1.0 when no clipping).
    """
    total = 0.0
    for p in params:
        total += float(np.sum(np.square(p.grad, dtype=np.float64)))
    norm = math.sqrt(total)
    if norm <= max_norm or norm == 0.0:
        return 1.0
    scale = max_norm / norm
    for p in params:
        p.grad *= scale
    return scale


def softmax_cross_entropy(logits: np.ndarray, target: int) -> tuple[float, np.ndarray]:
    """Stabilized cross-entropy of a single logit vector against one index."""
    logits = np.asarray(logits)
    k = logits.shape[0]
    if not 0 <= target < k:
        raise ValueError(f"target {target} out of range for {k} classes")
    if not np.all(np.isfinite(logits)):
        raise ValueError("logits must be finite")
    shifted = logits - logits.max()
    exp = np.exp(shifted)
    z = exp.sum()
    loss = float(math.log(z) - shifted[target])
    dlogits = exp / z
    dlogits[target] -= 1.0
    return loss, dlogits


def grad_check(
    model_loss: Callable[[], float],
    params: ParamStore,
    eps: float = 1e-5,
    samples_per_tensor: int = 3,
    rng: np.random.Generator | None = None,
) -> float:
    """Compare analytic gradients against central finite differences.

    ``model_loss`` must recompute the loss from the current parameter
    values and populate ``p.grad`` for every parameter.  Returns the
    maximum relative error over the sampled coordinates.

    Per tensor the check probes the ``samples_per_tensor`` coordinates with
    the largest analytic gradient plus the same number of random ones.
    A central difference cannot resolve the derivative below roughly one
    ulp of the loss divided by 2*eps, so that measurement resolution is
    subtracted from |analytic - numeric| before forming the relative
    error; disagreement below the resolution of the probe is not evidence
    of a backward-pass defect.
    """
    if eps <= 0:
        raise ValueError("eps must be > 0")
    if rng is None:
        rng = np.random.default_rng(0)
    loss0 = model_loss()
    if model_loss() != loss0:
        raise RuntimeError("model_loss is not deterministic under fixed inputs")
    # finite-difference resolution, with headroom for a few ulps of
    # accumulated round-off per loss evaluation
    resolution = 64.0 * np.spacing(max(abs(loss0), 1.0)) / (2.0 * eps)
    analytic = {p.name: p.grad.copy() for p in params}
    max_rel = 0.0
    for p in params:
        flat = p.value.reshape(-1)
        aflat = analytic[p.name].reshape(-1)
        n = flat.shape[0]
        k = min(samples_per_tensor, n)
        top = np.argsort(-np.abs(aflat), kind="stable")[:k]
        rand = rng.choice(n, size=k, replace=False)
        for i in dict.fromkeys(np.concatenate([top, rand]).tolist()):
            orig = flat[i]
            flat[i] = orig + eps
            up = model_loss()
            flat[i] = orig - eps
            down = model_loss()
            flat[i] = orig
            numeric = (up - down) / (2.0 * eps)
            a = aflat[i]
            gap = max(0.0, abs(a - numeric) - resolution)
            rel = gap / max(abs(a), abs(numeric), 1e-8)
            max_rel = max(max_rel, rel)
    model_loss()  # restore grads for the unperturbed point
    return max_rel
