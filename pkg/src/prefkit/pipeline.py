"""Filesystem-level operations shared by the CLI and the HTTP service.

Each op_* takes a validated schema object, writes its artifacts under an
output directory, and returns a JSON-safe summary dict. Every op also
writes manifest.json recording the invocation; manifests carry the only
timestamps, so all other artifacts are byte-identical across reruns.
"""

import csv
import hashlib
import json
import os
from datetime import datetime, timezone

from . import __version__
from . import schemas
from .checkpoint import load_checkpoint
from .corpus import (DEFAULT_TIERS, EASY, HARD, TaskConfig, Tier, build_pairs,
                     gen_corpus, is_eval_prompt, read_corpus, read_pairs,
                     write_corpus, write_pairs)
from .curriculum import CurriculumSchedule
from .errors import ConfigError, DataError
from .evaluation import (DecodeConfig, Judgment, aggregate, compare_paired_reports,
                         compare_report, head_to_head, write_judgments_csv)
from .model import ModelConfig
from .objectives import DpoConfig, SlicConfig
from .plots import csv_twin, line_chart
from .trainer import (FixedSource, OptimConfig, RunConfig, Stage, TrainData,
                      run_pipeline, train)

JUDGMENTS_COLUMNS = ["prompt", "response_a", "response_b",
                     "score_a", "score_b", "outcome"]


def effective_threads(requested: int) -> int:
    """Worker count after applying the PREFKIT_THREADS environment cap."""
    cap = os.environ.get("PREFKIT_THREADS")
    if cap is None:
        return requested
    try:
        cap = int(cap)
    except ValueError:
        raise ConfigError(f"PREFKIT_THREADS must be an integer, got {cap!r}")
    if cap < 1:
        raise ConfigError("PREFKIT_THREADS must be >= 1")
    return min(requested, cap)


def config_hash(config: dict) -> str:
    """sha256 of the canonical JSON encoding of a config dict."""
    blob = json.dumps(config, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()


def _write_manifest(out_dir: str, op: str, config: dict, seed,
                    artifacts, argv=None):
    manifest = {
        "tool": "prefkit",
        "tool_version": __version__,
        "op": op,
        "argv": list(argv) if argv else [],
        "seed": seed,
        "config_hash": config_hash(config),
        "artifacts": sorted(artifacts),
        "timestamp": datetime.now(timezone.utc).isoformat(),
    }
    with open(os.path.join(out_dir, "manifest.json"), "w") as f:
        json.dump(manifest, f, indent=2, sort_keys=True)
        f.write("\n")


def _to_tiers(specs) -> list:
    if specs is None:
        return list(DEFAULT_TIERS)
    return [Tier(s.name, s.rank, s.corruption_rate) for s in specs]


def _read_corpus(path: str) -> list:
    try:
        return read_corpus(path)
    except FileNotFoundError:
        raise DataError(f"corpus file not found: {path}")


def _read_pairs(path: str) -> list:
    try:
        return read_pairs(path)
    except FileNotFoundError:
        raise DataError(f"pairs file not found: {path}")


def op_gen(cfg: schemas.GenConfig, out_dir: str, argv=None) -> dict:
    """Generate a tiered corpus; writes corpus.jsonl plus a manifest."""
    os.makedirs(out_dir, exist_ok=True)
    tiers = _to_tiers(cfg.tiers)
    threads = effective_threads(cfg.threads)
    examples = gen_corpus(cfg.n, tiers, TaskConfig(cfg.length), cfg.seed, threads)
    corpus_path = os.path.join(out_dir, "corpus.jsonl")
    write_corpus(corpus_path, examples)
    n_eval = sum(1 for ex in examples if is_eval_prompt(ex.prompt))
    _write_manifest(out_dir, "gen", cfg.model_dump(), cfg.seed,
                    ["corpus.jsonl"], argv)
    return {"corpus": corpus_path, "n": len(examples), "eval_prompts": n_eval,
            "tiers": [t.name for t in tiers]}


def op_pairs(cfg: schemas.PairsConfig, out_dir: str, argv=None) -> dict:
    """Build preference pairs of one kind from a corpus file."""
    os.makedirs(out_dir, exist_ok=True)
    examples = _read_corpus(cfg.corpus)
    tiers = _to_tiers(cfg.tiers)
    pairs, dropped = build_pairs(examples, tiers, cfg.pair_kind)
    pairs_path = os.path.join(out_dir, f"pairs_{cfg.pair_kind.lower()}.jsonl")
    write_pairs(pairs_path, pairs)
    _write_manifest(out_dir, "pairs", cfg.model_dump(by_alias=True), None,
                    [os.path.basename(pairs_path)], argv)
    return {"pairs": pairs_path, "pair_kind": cfg.pair_kind,
            "kept": len(pairs), "dropped": dropped}


def _to_run_config(stage: schemas.TrainStageConfig) -> RunConfig:
    model = None
    if stage.model is not None:
        m = stage.model
        model = ModelConfig(m.vocab_size, m.context_len, m.n_layers,
                            m.d_model, m.n_heads, m.seed)
    objective = None
    if isinstance(stage.objective, schemas.DpoSpec):
        objective = DpoConfig(stage.objective.beta)
    elif isinstance(stage.objective, schemas.SlicSpec):
        objective = SlicConfig(stage.objective.delta, stage.objective.lam)
    schedule = None
    if stage.schedule is not None:
        s = stage.schedule
        schedule = CurriculumSchedule(s.kind, s.total_steps, s.constant_alpha,
                                      s.curriculum_id)
    fixed = None
    if stage.fixed is not None:
        fixed = FixedSource(stage.fixed.pair_kind, stage.fixed.tier)
    o = stage.optimizer
    optimizer = OptimConfig(o.lr, o.beta1, o.beta2, o.eps, o.weight_decay,
                            o.warmup_frac, o.decay)
    return RunConfig(stage.method, stage.init, stage.epochs, stage.batch_size,
                     stage.seed, model, objective, schedule, fixed, optimizer)


def _train_side(items) -> list:
    # eval prompts are held out of training, so train/eval never overlap
    return [it for it in items if not is_eval_prompt(it.prompt)]


def _to_train_data(data: schemas.DataSpec) -> TrainData:
    examples = None
    if data.corpus is not None:
        examples = _train_side(_read_corpus(data.corpus))
    pairs_by_kind = None
    if data.pairs_easy is not None or data.pairs_hard is not None:
        pairs_by_kind = {}
        if data.pairs_easy is not None:
            pairs_by_kind[EASY] = _train_side(_read_pairs(data.pairs_easy))
        if data.pairs_hard is not None:
            pairs_by_kind[HARD] = _train_side(_read_pairs(data.pairs_hard))
    tiers = None
    if examples is not None or data.tiers is not None:
        tiers = _to_tiers(data.tiers)
    return TrainData(examples, tiers, pairs_by_kind)


def _stage_artifacts(stage_dir: str, result) -> list:
    """Write loss (and mix, when logged) charts beside log.csv; list files."""
    records = result.log.records
    names = ["log.csv"]
    if records:
        xs = [float(r["step"]) for r in records]
        series = [("loss", [r["loss"] for r in records])]
        line_chart(os.path.join(stage_dir, "loss_vs_step.svg"), xs, series,
                   "loss vs step", "step", "loss")
        csv_twin(os.path.join(stage_dir, "loss_vs_step.csv"), "step", xs, series)
        names += ["loss_vs_step.svg", "loss_vs_step.csv"]
        mix_cols = [c for c in ("hard_fraction", "top_fraction") if c in records[0]]
        if mix_cols:
            mix = [(c, [r[c] for r in records]) for c in mix_cols]
            line_chart(os.path.join(stage_dir, "mix_vs_step.svg"), xs, mix,
                       "data mix vs step", "step", "fraction")
            csv_twin(os.path.join(stage_dir, "mix_vs_step.csv"), "step", xs, mix)
            names += ["mix_vs_step.svg", "mix_vs_step.csv"]
    names += [os.path.basename(c) for c in result.checkpoints]
    return names


def _stage_summary(name: str, stage_dir: str, result) -> dict:
    records = result.log.records
    return {"name": name, "out_dir": stage_dir, "steps": len(records),
            "final_loss": records[-1]["loss"] if records else None,
            "final_checkpoint": result.final_checkpoint}


def op_train(cfg, out_dir: str, argv=None, seed_override: int | None = None,
             resume_from: str | None = None) -> dict:
    """Train one stage (TrainStageConfig) or a stage list (PipelineConfig).

    Data files are filtered to the train side of the hash split before
    training. A single stage writes into out_dir directly; a pipeline
    nests each stage under out_dir/<stage name>. seed_override replaces
    the config seed (stage k of a pipeline gets seed_override + k).
    """
    os.makedirs(out_dir, exist_ok=True)
    if isinstance(cfg, schemas.PipelineConfig):
        if resume_from is not None:
            raise ConfigError("resume applies to single-stage runs only")
        stages = []
        for k, sc in enumerate(cfg.stages):
            if seed_override is not None:
                sc = sc.model_copy(update={"seed": seed_override + k})
            stages.append(Stage(sc.name, _to_run_config(sc), _to_train_data(sc.data)))
        results = run_pipeline(stages, out_dir)
        summaries = []
        artifacts = []
        for stage, result in zip(stages, results):
            stage_dir = os.path.join(out_dir, stage.name)
            names = _stage_artifacts(stage_dir, result)
            artifacts += [os.path.join(stage.name, n) for n in names]
            summaries.append(_stage_summary(stage.name, stage_dir, result))
        seed = seed_override if seed_override is not None else cfg.stages[0].seed
        _write_manifest(out_dir, "train", cfg.model_dump(by_alias=True), seed,
                        artifacts, argv)
        return {"stages": summaries}

    if seed_override is not None:
        cfg = cfg.model_copy(update={"seed": seed_override})
    result = train(_to_run_config(cfg), _to_train_data(cfg.data), out_dir,
                   resume_from=resume_from)
    artifacts = _stage_artifacts(out_dir, result)
    _write_manifest(out_dir, "train", cfg.model_dump(by_alias=True), cfg.seed,
                    artifacts, argv)
    return {"stages": [_stage_summary(cfg.name, out_dir, result)]}


def _split_examples(examples, split: str) -> list:
    if split == "eval":
        kept = [ex for ex in examples if is_eval_prompt(ex.prompt)]
    elif split == "train":
        kept = [ex for ex in examples if not is_eval_prompt(ex.prompt)]
    elif split == "all":
        kept = list(examples)
    else:
        raise ConfigError(f"unknown split {split!r}, expected eval, train or all")
    if not kept:
        raise DataError(f"no prompts in split {split!r}")
    return kept


def _load_model(path: str):
    try:
        model, _ = load_checkpoint(path)
    except FileNotFoundError:
        raise DataError(f"checkpoint not found: {path}")
    return model


def op_eval(cfg: schemas.EvalConfig, out_dir: str, argv=None,
            seed_override: int | None = None) -> dict:
    """Score each candidate head-to-head against the baseline.

    Writes report.json / judgments.csv per candidate (prefixed with the
    candidate name when there are several) and, for several candidates,
    a win-rate-vs-candidate chart.
    """
    os.makedirs(out_dir, exist_ok=True)
    threads = effective_threads(cfg.threads)
    seed = seed_override if seed_override is not None else cfg.decode.seed
    decode = DecodeConfig(cfg.decode.mode, cfg.decode.temperature, seed)
    eval_set = _split_examples(_read_corpus(cfg.corpus), cfg.split)
    names = [c.name for c in cfg.candidates]
    if len(set(names)) != len(names):
        raise ConfigError("duplicate candidate name")
    baseline = _load_model(cfg.baseline)

    solo = len(cfg.candidates) == 1
    artifacts = []
    reports = {}
    for cand in cfg.candidates:
        model = _load_model(cand.checkpoint)
        report = head_to_head(model, baseline, eval_set, decode, threads)
        prefix = "" if solo else f"{cand.name}."
        report_path = os.path.join(out_dir, prefix + "report.json")
        body = {"candidate": cand.name, "checkpoint": cand.checkpoint,
                "baseline": cfg.baseline, "split": cfg.split}
        body.update(report.to_dict())
        with open(report_path, "w") as f:
            json.dump(body, f, indent=2, sort_keys=True)
            f.write("\n")
        write_judgments_csv(os.path.join(out_dir, prefix + "judgments.csv"),
                            report.judgments)
        artifacts += [prefix + "report.json", prefix + "judgments.csv"]
        reports[cand.name] = body

    if not solo:
        xs = [float(i + 1) for i in range(len(names))]
        series = [("win_pct", [reports[n]["win_pct"] for n in names]),
                  ("tie_pct", [reports[n]["tie_pct"] for n in names])]
        line_chart(os.path.join(out_dir, "win_vs_candidate.svg"), xs, series,
                   "win rate vs candidate", "candidate", "percent")
        csv_twin(os.path.join(out_dir, "win_vs_candidate.csv"), "candidate",
                 xs, series)
        artifacts += ["win_vs_candidate.svg", "win_vs_candidate.csv"]

    _write_manifest(out_dir, "eval", cfg.model_dump(), seed, artifacts, argv)
    return {"n_prompts": len(eval_set), "reports": reports}


def read_judgments_csv(path: str) -> list:
    """Inverse of write_judgments_csv; returns Judgment objects."""
    try:
        f = open(path, newline="")
    except FileNotFoundError:
        raise DataError(f"judgments file not found: {path}")
    with f:
        rows = list(csv.reader(f))
    if not rows or rows[0] != JUDGMENTS_COLUMNS:
        raise DataError(f"{path} is not a judgments file")
    out = []
    for row in rows[1:]:
        if len(row) != len(JUDGMENTS_COLUMNS):
            raise DataError(f"{path}: malformed row {row!r}")
        try:
            sa, sb = float(row[3]), float(row[4])
        except ValueError:
            raise DataError(f"{path}: non-numeric score in row {row!r}")
        out.append(Judgment(row[0], row[1], row[2], sa, sb, row[5]))
    if not out:
        raise DataError(f"{path} holds no judgments")
    return out


def _judgments_path(path: str) -> str:
    if os.path.isdir(path):
        return os.path.join(path, "judgments.csv")
    base = os.path.basename(path)
    if not base.endswith("report.json"):
        raise ConfigError(f"expected a report.json path or a directory, got {path!r}")
    stem = base[: -len("report.json")]
    return os.path.join(os.path.dirname(path), stem + "judgments.csv")


def op_report(req: schemas.ReportRequest, argv=None) -> dict:
    """Significance verdict from one report (sign test) or two (paired)."""
    reports = [aggregate(read_judgments_csv(_judgments_path(p))) for p in req.paths]
    if len(reports) == 1:
        verdict = compare_report(reports[0], req.alpha)
        mode = "single"
    else:
        verdict = compare_paired_reports(reports[0], reports[1], req.alpha)
        mode = "paired"
    return {"mode": mode, "paths": list(req.paths), "alpha": req.alpha,
            "verdict": verdict.to_dict(),
            "reports": [r.to_dict() for r in reports]}
