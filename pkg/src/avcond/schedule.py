"""Interleaved step plan, curriculum stages, and learning-rate curve.

Step kinds follow a deterministic Bresenham interleaving so that a stage of
n steps at a rational ratio p/q with q | n contains exactly n*p/q joint
steps, starting with a joint step whenever the ratio is nonzero. The cosine
learning-rate curve spans the whole multi-stage run as one decay.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, replace
from enum import Enum
from fractions import Fraction
from pathlib import Path
from typing import IO, Iterable, Mapping, Sequence

import torch

from .errors import CurriculumOrderError, InvalidRatio, OutOfRange, UnknownGroup


class Stage(Enum):
    SINGLE_SUBJECT = "single_subject"
    MULTI_SUBJECT = "multi_subject"
    CROSS_PAIR = "cross_pair"


class DataRegime(Enum):
    IN_PAIR = "in_pair"
    CROSS_PAIR = "cross_pair"


class StepKind(Enum):
    JAVG = "JAVG"
    TTS_ONLY = "TTS_ONLY"


@dataclass(frozen=True)
class StageConfig:
    name: Stage
    steps: int
    javg_ratio: float
    javg_batch: int
    tts_batch: int
    data_regime: DataRegime

    def __post_init__(self):
        if self.steps < 1:
            raise ValueError(f"stage {self.name.value} needs >= 1 step")
        if not 0.0 <= self.javg_ratio <= 1.0:
            raise InvalidRatio(f"javg_ratio {self.javg_ratio} outside [0, 1]")
        if self.javg_batch < 1 or self.tts_batch < 1:
            raise ValueError("batch sizes must be positive")

    def scaled(self, divisor: int) -> "StageConfig":
        """Divide the step count (and batch sizes) for desk-scale runs."""
        if divisor < 1:
            raise ValueError("scale divisor must be >= 1")
        return replace(
            self,
            steps=max(1, self.steps // divisor),
            javg_batch=max(1, self.javg_batch // divisor),
            tts_batch=max(1, self.tts_batch // divisor),
        )


@dataclass(frozen=True)
class OptimConfig:
    """AdamW settings and the cosine learning-rate endpoints."""

    beta1: float = 0.9
    beta2: float = 0.95
    weight_decay: float = 0.01
    lr_init: float = 1e-4
    lr_final: float = 1e-5
    schedule: str = "cosine"

    def __post_init__(self):
        if not (0.0 < self.beta1 < 1.0 and 0.0 < self.beta2 < 1.0):
            raise ValueError("betas must lie in (0, 1)")
        if not self.lr_final < self.lr_init:
            raise ValueError("lr_final must be below lr_init")


def default_stages() -> tuple[StageConfig, StageConfig, StageConfig]:
    """The reference three-stage curriculum at full scale."""
    return (
        StageConfig(Stage.SINGLE_SUBJECT, 20_000, 0.5, 64, 1024, DataRegime.IN_PAIR),
        StageConfig(Stage.MULTI_SUBJECT, 10_000, 1.0, 64, 64, DataRegime.IN_PAIR),
        StageConfig(Stage.CROSS_PAIR, 10_000, 1.0, 64, 64, DataRegime.CROSS_PAIR),
    )


def _as_fraction(r: float | Fraction) -> Fraction:
    if isinstance(r, Fraction):
        return r
    return Fraction(float(r)).limit_denominator(10**9)


def step_kind(step_index: int, r: float | Fraction) -> StepKind:
    """Deterministic interleaving: joint step i iff ceil((i+1)r) > ceil(ir).

    Joint steps open each run (r=1/2 gives J,T,J,T,...), and any stage of n
    steps with denominator dividing n realizes exactly n*r joint steps.
    """
    if step_index < 0:
        raise OutOfRange(f"step index must be >= 0, got {step_index}")
    frac = _as_fraction(r)
    if not 0 <= frac <= 1:
        raise InvalidRatio(f"ratio {r} outside [0, 1]")
    before = math.ceil(step_index * frac)
    after = math.ceil((step_index + 1) * frac)
    return StepKind.JAVG if after > before else StepKind.TTS_ONLY


def lr_at(step: int, total: int, optim: OptimConfig) -> float:
    """Cosine decay from lr_init at step 0 to lr_final at step total-1."""
    if total < 2:
        raise OutOfRange(f"total steps must be >= 2, got {total}")
    if not 0 <= step < total:
        raise OutOfRange(f"step {step} outside [0, {total})")
    weight = 0.5 * (1.0 + math.cos(math.pi * step / (total - 1)))
    if weight == 1.0:
        return optim.lr_init
    if weight == 0.0:
        return optim.lr_final
    return optim.lr_final + weight * (optim.lr_init - optim.lr_final)


@dataclass(frozen=True)
class PlanStep:
    step: int
    stage: Stage
    kind: StepKind
    lr: float


@dataclass(frozen=True)
class StepPlan:
    entries: tuple[PlanStep, ...]
    stages: tuple[StageConfig, ...]
    optim: OptimConfig

    def __len__(self) -> int:
        return len(self.entries)

    def javg_count(self, stage: Stage | None = None) -> int:
        return sum(
            1
            for e in self.entries
            if e.kind is StepKind.JAVG and (stage is None or e.stage is stage)
        )

    def write_csv(self, target: str | Path | IO[str]) -> None:
        """Columns: step,stage,kind,lr."""
        if hasattr(target, "write"):
            self._write_csv(target)
        else:
            with open(target, "w", newline="") as fh:
                self._write_csv(fh)

    def _write_csv(self, fh: IO[str]) -> None:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["step", "stage", "kind", "lr"])
        for e in self.entries:
            writer.writerow([e.step, e.stage.value, e.kind.value, repr(e.lr)])


def build_plan(stages: Sequence[StageConfig], optim: OptimConfig) -> StepPlan:
    """Expand stage configs into the full deterministic step plan."""
    if not stages:
        raise ValueError("at least one stage is required")
    seen_cross = False
    for cfg in stages:
        if cfg.data_regime is DataRegime.CROSS_PAIR:
            seen_cross = True
        elif seen_cross:
            raise CurriculumOrderError(
                f"in-pair stage {cfg.name.value} placed after a cross-pair stage"
            )
    total = sum(cfg.steps for cfg in stages)
    if total < 2:
        raise ValueError(f"plan needs >= 2 total steps, got {total}")
    entries: list[PlanStep] = []
    global_step = 0
    for cfg in stages:
        ratio = _as_fraction(cfg.javg_ratio)
        for i in range(cfg.steps):
            entries.append(
                PlanStep(
                    step=global_step,
                    stage=cfg.name,
                    kind=step_kind(i, ratio),
                    lr=lr_at(global_step, total, optim),
                )
            )
            global_step += 1
    return StepPlan(tuple(entries), tuple(stages), optim)


# Parameter-group prefixes the gradient gate understands. Cross-modal
# coupling and the video tower are inert during TTS-only steps.
KNOWN_GROUPS = ("speech_gate", "coupling", "fusion", "video", "audio")
TTS_ONLY_GATED = ("coupling", "video")


def group_of(name: str) -> str:
    for prefix in KNOWN_GROUPS:
        if name.startswith(prefix):
            return prefix
    raise UnknownGroup(f"gradient key '{name}' matches no known parameter group")


def gate_gradients(grads: Mapping[str, object], kind: StepKind) -> dict[str, object]:
    """Zero cross-modal coupling and video-tower gradients on TTS-only steps."""
    gated: dict[str, object] = {}
    for name, value in grads.items():
        group = group_of(name)
        if kind is StepKind.TTS_ONLY and group in TTS_ONLY_GATED:
            if isinstance(value, torch.Tensor):
                gated[name] = torch.zeros_like(value)
            else:
                gated[name] = 0.0
        else:
            gated[name] = value
    return gated


def load_plan_config(path: str | Path) -> tuple[list[StageConfig], OptimConfig]:
    """Read stages and optimizer settings from a JSON config file.

    Schema: {"stages": [{"name", "steps", "javg_ratio", "javg_batch",
    "tts_batch", "data_regime"}, ...], "optim": {OptimConfig fields}}.
    """
    with open(path) as fh:
        raw = json.load(fh)
    stages = [
        StageConfig(
            name=Stage(entry["name"]),
            steps=int(entry["steps"]),
            javg_ratio=float(entry["javg_ratio"]),
            javg_batch=int(entry["javg_batch"]),
            tts_batch=int(entry["tts_batch"]),
            data_regime=DataRegime(entry["data_regime"]),
        )
        for entry in raw["stages"]
    ]
    optim = OptimConfig(**raw.get("optim", {}))
    return stages, optim
