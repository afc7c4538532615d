"""Training orchestration for SFT, SLiC and DPO runs.

A run is: build model (fresh or from checkpoint), snapshot the frozen
reference for contrastive methods, then epochs x steps_per_epoch of
sample batch -> mean loss -> backward -> AdamW step at the scheduled
rate. Everything is seeded; a run is a pure function of
(config, data, seed). Checkpoints carry optimizer, rng and sampler
state so split runs resume bit-exactly.
"""

import json
import logging
import math
import os
from dataclasses import dataclass, field

import numpy as np

from . import corpus as corpus_mod
from . import curriculum as curr
from .checkpoint import load_checkpoint, save_checkpoint
from .errors import ConfigError, ContractViolation, NumericAbort
from .model import Model, ModelConfig, generate, snapshot
from .objectives import DpoConfig, SlicConfig, dpo_loss, sft_loss, slic_loss
from .optim import AdamW, LrSchedule, lr_at

log = logging.getLogger("prefkit.trainer")

SFT, SLIC, DPO = "SFT", "SLIC", "DPO"


@dataclass(frozen=True)
class OptimConfig:
    lr: float = 3e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.0
    warmup_frac: float = 0.1
    decay: bool = False


@dataclass(frozen=True)
class FixedSource:
    """Degenerate schedule: always the same pair kind (or SFT tier)."""
    pair_kind: str | None = None
    tier: str | None = None

    def __post_init__(self):
        if (self.pair_kind is None) == (self.tier is None):
            raise ConfigError("FixedSource needs exactly one of pair_kind/tier")
        if self.pair_kind is not None and self.pair_kind not in (corpus_mod.EASY, corpus_mod.HARD):
            raise ConfigError(f"unknown pair_kind {self.pair_kind!r}")


@dataclass(frozen=True)
class RunConfig:
    method: str
    init: str  # "RANDOM" or a checkpoint path
    epochs: int
    batch_size: int
    seed: int
    model: ModelConfig | None = None
    objective: object | None = None  # SlicConfig | DpoConfig | None
    schedule: curr.CurriculumSchedule | None = None
    fixed: FixedSource | None = None
    optimizer: OptimConfig = field(default_factory=OptimConfig)


@dataclass
class TrainData:
    examples: list | None = None  # SFT: TieredExamples
    tiers: list | None = None     # SFT: Tier list
    pairs_by_kind: dict | None = None  # SLiC/DPO: {EASY: [...], HARD: [...]}


class TrainLog:
    """Per-step records with a fixed column order; serializes to CSV."""

    def __init__(self):
        self.records = []

    def add(self, record: dict):
        if self.records and list(record) != list(self.records[0]):
            raise ContractViolation("TrainLog columns changed mid-run")
        self.records.append(record)

    def to_csv(self, path: str):
        cols = list(self.records[0]) if self.records else ["step", "lr", "loss"]
        with open(path, "w") as f:
            f.write(",".join(cols) + "\n")
            for r in self.records:
                f.write(",".join(repr(r[c]) if isinstance(r[c], float) else str(r[c])
                                for c in cols) + "\n")


@dataclass
class TrainResult:
    model: Model
    log: TrainLog
    checkpoints: list
    final_checkpoint: str | None


def _validate(cfg: RunConfig, data: TrainData):
    if cfg.method not in (SFT, SLIC, DPO):
        raise ConfigError(f"unknown method {cfg.method!r}")
    if cfg.epochs < 1 or cfg.batch_size < 1:
        raise ConfigError("epochs and batch_size must be >= 1")
    if (cfg.schedule is None) == (cfg.fixed is None):
        raise ConfigError("need exactly one of schedule/fixed")
    if cfg.init == "RANDOM" and cfg.model is None:
        raise ConfigError("init RANDOM requires a model config")
    if cfg.method == SFT:
        if data.examples is None or data.tiers is None:
            raise ConfigError("SFT needs examples and tiers")
        if cfg.schedule is not None and cfg.schedule.curriculum_id not in (1, 2):
            raise ConfigError("SFT curricula are ids 1 and 2")
        if cfg.fixed is not None and cfg.fixed.tier is None:
            raise ConfigError("fixed SFT source must name a tier")
    else:
        if data.pairs_by_kind is None:
            raise ConfigError(f"{cfg.method} needs preference pairs")
        if cfg.init == "RANDOM":
            raise ConfigError(f"{cfg.method} requires a reference checkpoint as init")
        if cfg.schedule is not None and cfg.schedule.curriculum_id not in (None, 3, 4):
            raise ConfigError(f"{cfg.method} curricula are ids 3 and 4")
        if cfg.fixed is not None and cfg.fixed.pair_kind is None:
            raise ConfigError("fixed pair source must name a pair_kind")
        want = DpoConfig if cfg.method == DPO else SlicConfig
        if cfg.objective is not None and not isinstance(cfg.objective, want):
            raise ConfigError(f"{cfg.method} objective config must be {want.__name__}")


def _steps_per_epoch(cfg: RunConfig, data: TrainData) -> int:
    if cfg.method == SFT:
        n = len(data.examples)
    elif cfg.fixed is not None:
        n = len(data.pairs_by_kind.get(cfg.fixed.pair_kind) or [])
    else:
        n = max(len(v) for v in data.pairs_by_kind.values())
    if n == 0:
        raise ConfigError("no training items")
    return math.ceil(n / cfg.batch_size)


def _pair_schedule(cfg: RunConfig, steps_per_epoch: int) -> curr.CurriculumSchedule:
    if cfg.fixed is not None:
        alpha = 1.0 if cfg.fixed.pair_kind == corpus_mod.HARD else 0.0
        return curr.CurriculumSchedule(curr.CONSTANT, steps_per_epoch, alpha)
    return cfg.schedule.resolved(steps_per_epoch)


def _slic_reference_outputs(ref, pools) -> dict:
    """One greedy y_ref per unique prompt, generated once at stage start."""
    cache = {}
    for kind in (corpus_mod.EASY, corpus_mod.HARD):
        for pair in pools.get(kind) or []:
            if pair.prompt in cache:
                continue
            prompt_ids = corpus_mod.encode_prompt(pair.prompt)
            max_new = ref.config.context_len - len(prompt_ids)
            out = generate(ref, prompt_ids, max_new, mode="greedy")
            cache[pair.prompt] = out
    return cache


def _dump_abort(out_dir, step, batch, cfg: RunConfig):
    if out_dir is None:
        return None
    path = os.path.join(out_dir, "abort_dump.json")
    payload = {
        "step": step,
        "method": cfg.method,
        "batch": [getattr(item, "__dict__", None) or list(item) for item in batch],
    }
    with open(path, "w") as f:
        json.dump(payload, f, indent=2, default=str, sort_keys=True)
    return path


def train(cfg: RunConfig, data: TrainData, out_dir: str | None = None,
          resume_from: str | None = None) -> TrainResult:
    """Run one training stage; returns the trained model plus its log.

    out_dir, when given, receives log.csv and ckpt_epoch<N> directories.
    resume_from continues a previous run of the same config from its
    saved optimizer/rng/sampler state, bit-exactly.
    """
    _validate(cfg, data)
    if cfg.init == "RANDOM":
        model = Model.init_random(cfg.model)
    else:
        model, _ = load_checkpoint(cfg.init)

    ref = None
    y_ref_cache = None
    if cfg.method in (SLIC, DPO):
        ref = snapshot(model)
        if cfg.method == SLIC:
            y_ref_cache = _slic_reference_outputs(ref, data.pairs_by_kind)

    spe = _steps_per_epoch(cfg, data)
    total_steps = cfg.epochs * spe
    oc = cfg.optimizer
    lr_schedule = LrSchedule(oc.lr, round(oc.warmup_frac * total_steps), total_steps, oc.decay)
    optimizer = AdamW(oc.beta1, oc.beta2, oc.eps, oc.weight_decay)

    if cfg.method == SFT:
        sampler = curr.SftSampler(
            data.examples, data.tiers, cfg.seed,
            fixed_tier=cfg.fixed.tier if cfg.fixed else None,
            schedule=cfg.schedule.resolved(spe) if cfg.schedule else None)
        top_tier = sorted(data.tiers, key=lambda t: t.rank)[0].name
    else:
        sampler = curr.PairSampler(data.pairs_by_kind, _pair_schedule(cfg, spe), cfg.seed)
        dpo_cfg = cfg.objective or DpoConfig()
        slic_cfg = cfg.objective or SlicConfig()

    start_step = 0
    if resume_from is not None:
        model, resume = load_checkpoint(resume_from)
        if resume is None:
            raise ConfigError(f"{resume_from} has no resume state")
        optimizer.load_state_dict(resume["optimizer"])
        sampler.load_state_dict(resume["sampler"])
        start_step = resume["global_step"]
        if cfg.method in (SLIC, DPO):
            # the reference is pinned to the original init, not the resume point
            ref_model, _ = load_checkpoint(cfg.init)
            ref = snapshot(ref_model)
            if cfg.method == SLIC:
                y_ref_cache = _slic_reference_outputs(ref, data.pairs_by_kind)
        if start_step % spe != 0:
            raise ConfigError("resume checkpoint is not at an epoch boundary")

    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
    train_log = TrainLog()
    checkpoints = []

    for epoch in range(start_step // spe, cfg.epochs):
        for s in range(spe):
            t = epoch * spe + s
            batch = sampler.make_batch(t, cfg.batch_size)
            model.zero_grad()
            outs = []
            if cfg.method == SFT:
                for prompt, response, _tier in batch:
                    outs.append(sft_loss(model,
                                         corpus_mod.encode_prompt(prompt),
                                         corpus_mod.encode_response(response)))
                mix = sum(1 for _, _, name in batch if name == top_tier) / len(batch)
                mix_col = "top_fraction"
            else:
                for pair in batch:
                    if cfg.method == DPO:
                        outs.append(dpo_loss(model, ref, pair, dpo_cfg))
                    else:
                        outs.append(slic_loss(model, pair, y_ref_cache[pair.prompt], slic_cfg))
                mix = sum(1 for p in batch if p.pair_kind == corpus_mod.HARD) / len(batch)
                mix_col = "hard_fraction"
            total = outs[0].loss
            for o in outs[1:]:
                total = total + o.loss
            loss = (1.0 / len(outs)) * total
            if not np.isfinite(loss.data):
                dump = _dump_abort(out_dir, t, batch, cfg)
                raise NumericAbort(f"non-finite loss at step {t}" +
                                   (f" (batch dumped to {dump})" if dump else ""))
            loss.backward()
            lr = lr_at(lr_schedule, t)
            optimizer.step(model.params, lr)

            record = {"step": t, "lr": lr, "loss": float(loss.data), mix_col: mix}
            diag_keys = list(outs[0].diagnostics)
            for k in diag_keys:
                record[k] = sum(o.diagnostics[k] for o in outs) / len(outs)
            train_log.add(record)
            for event in sampler.events:
                log.info("step %d: %s", t, event)
            sampler.events.clear()

        if out_dir is not None:
            ckpt = os.path.join(out_dir, f"ckpt_epoch{epoch + 1}")
            save_checkpoint(ckpt, model, resume={
                "optimizer": optimizer.state_dict(),
                "rng": curr._rng_state(sampler.rng),
                "sampler": sampler.state_dict(),
                "global_step": (epoch + 1) * spe,
            })
            checkpoints.append(ckpt)

    if out_dir is not None:
        train_log.to_csv(os.path.join(out_dir, "log.csv"))
    final = checkpoints[-1] if checkpoints else None
    return TrainResult(model, train_log, checkpoints, final)


@dataclass(frozen=True)
class Stage:
    name: str
    cfg: RunConfig
    data: TrainData


def run_pipeline(stages, out_dir: str) -> list:
    """Run stages in order; "stage:<name>" inits resolve to earlier outputs.

    Contrastive stages snapshot their init checkpoint as the frozen
    reference before training (init == reference, the standard
    SFT-then-DPO recipe).
    """
    names = [s.name for s in stages]
    if len(set(names)) != len(names):
        raise ConfigError("duplicate stage name")
    results = []
    by_name = {}
    for stage in stages:
        cfg = stage.cfg
        if cfg.init.startswith("stage:"):
            dep = cfg.init[len("stage:"):]
            if dep not in by_name:
                raise ConfigError(f"stage {stage.name!r} references unknown stage {dep!r}")
            ckpt = by_name[dep].final_checkpoint
            if ckpt is None:
                raise ConfigError(f"stage {dep!r} produced no checkpoint")
            cfg = RunConfig(cfg.method, ckpt, cfg.epochs, cfg.batch_size, cfg.seed,
                            cfg.model, cfg.objective, cfg.schedule, cfg.fixed, cfg.optimizer)
        result = train(cfg, stage.data, out_dir=os.path.join(out_dir, stage.name))
        results.append(result)
        by_name[stage.name] = result
    return results
