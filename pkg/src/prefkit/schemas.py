"""Pydantic request/config models for the CLI and HTTP service.

Every model rejects unknown keys so a typo like "bata" fails loudly
instead of silently training with defaults. SLiC's regularizer weight
is spelled "lambda" in JSON and `lam` in code.
"""

from pydantic import BaseModel, ConfigDict, Field

_STRICT = ConfigDict(extra="forbid")


class TierSpec(BaseModel):
    model_config = _STRICT
    name: str
    rank: int
    corruption_rate: float


class GenConfig(BaseModel):
    model_config = _STRICT
    n: int = Field(ge=1)
    length: int = Field(default=12, ge=1)
    seed: int = 0
    threads: int = Field(default=1, ge=1)
    tiers: list[TierSpec] | None = None  # None: shipped default tiers


class PairsConfig(BaseModel):
    model_config = _STRICT
    corpus: str
    pair_kind: str
    tiers: list[TierSpec] | None = None


class ModelSpec(BaseModel):
    model_config = _STRICT
    vocab_size: int = 14
    context_len: int = 32
    n_layers: int = 2
    d_model: int = 32
    n_heads: int = 4
    seed: int = 0


class OptimSpec(BaseModel):
    model_config = _STRICT
    lr: float = 3e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.0
    warmup_frac: float = 0.1
    decay: bool = False


class DpoSpec(BaseModel):
    model_config = _STRICT
    beta: float = 0.1


class SlicSpec(BaseModel):
    model_config = ConfigDict(extra="forbid", populate_by_name=True)
    delta: float = 1.0
    lam: float = Field(default=1.0, alias="lambda")


class ScheduleSpec(BaseModel):
    model_config = _STRICT
    kind: str
    total_steps: int | None = None
    constant_alpha: float | None = None
    curriculum_id: int | None = None


class FixedSpec(BaseModel):
    model_config = _STRICT
    pair_kind: str | None = None
    tier: str | None = None


class DataSpec(BaseModel):
    model_config = _STRICT
    corpus: str | None = None       # SFT examples (JSONL)
    pairs_easy: str | None = None   # EASY preference pairs (JSONL)
    pairs_hard: str | None = None   # HARD preference pairs (JSONL)
    tiers: list[TierSpec] | None = None


class TrainStageConfig(BaseModel):
    model_config = _STRICT
    name: str = "stage0"
    method: str
    init: str
    epochs: int = Field(ge=1)
    batch_size: int = Field(ge=1)
    seed: int = 0
    model: ModelSpec | None = None
    objective: DpoSpec | SlicSpec | None = None
    schedule: ScheduleSpec | None = None
    fixed: FixedSpec | None = None
    optimizer: OptimSpec = OptimSpec()
    data: DataSpec


class PipelineConfig(BaseModel):
    model_config = _STRICT
    stages: list[TrainStageConfig] = Field(min_length=1)


class DecodeSpec(BaseModel):
    model_config = _STRICT
    mode: str = "greedy"
    temperature: float = 1.0
    seed: int = 0


class CandidateSpec(BaseModel):
    model_config = _STRICT
    name: str
    checkpoint: str


class EvalConfig(BaseModel):
    model_config = _STRICT
    baseline: str
    candidates: list[CandidateSpec] = Field(min_length=1)
    corpus: str
    split: str = "eval"  # eval | train | all (hash-based prompt split)
    decode: DecodeSpec = DecodeSpec()
    threads: int = Field(default=1, ge=1)


class ReportRequest(BaseModel):
    model_config = _STRICT
    paths: list[str] = Field(min_length=1, max_length=2)
    alpha: float = 0.05
