"""Acceptance gate: one test per numbered criterion, at its stated tolerance.

Criteria 1-5 are exact property suites, 8-9 are reproducibility drills,
and 6-7 train real models end to end, so they dominate the runtime.
Each test prints a `criterion N:` verdict line with measured numbers.
The run reports for 6 and 7 are also written to out/acceptance/.
"""

import json
import math
import os
import time
from pathlib import Path

import numpy as np
import pytest

from prefkit.corpus import (
    DEFAULT_TIERS,
    EASY,
    HARD,
    PreferencePair,
    TaskConfig,
    VOCAB_SIZE,
    build_pairs,
    gen_corpus,
    split_examples,
    tier_winrate,
)
from prefkit.curriculum import ANTI, LINEAR, CurriculumSchedule, alpha_at, draw_pair_kind
from prefkit.evaluation import WIN_A, WIN_B, DecodeConfig, head_to_head, judge
from prefkit.model import Model, ModelConfig, snapshot
from prefkit.objectives import DpoConfig, SlicConfig, dpo_loss, sft_loss, slic_loss, slic_terms
from prefkit.pipeline import effective_threads, op_eval, op_gen, op_pairs, op_train
from prefkit.schemas import (
    CandidateSpec,
    DataSpec,
    EvalConfig,
    GenConfig,
    ModelSpec,
    OptimSpec,
    PairsConfig,
    PipelineConfig,
    ScheduleSpec,
    TrainStageConfig,
)
from prefkit.checkpoint import load_checkpoint, save_checkpoint
from prefkit.trainer import DPO, SFT, FixedSource, OptimConfig, RunConfig, TrainData, train

from oracles import binom_two_sided_p

THREADS = effective_threads(4)
SEEDS = (1, 2, 3, 4, 5)
REPORT_DIR = Path(__file__).resolve().parent.parent / "out" / "acceptance"

# verdicts from earlier criteria, for criterion 7's documented-negative gate
RESULTS = {}

# wall-clock seconds of shared fixtures, charged to criterion 6's budget
TIMES = {}

TINY = ModelConfig(vocab_size=VOCAB_SIZE, context_len=24, n_layers=1, d_model=8, n_heads=2)


def _digits(rng, lo, hi):
    return "".join(str(d) for d in rng.integers(0, 10, size=int(rng.integers(lo, hi + 1))))


def _random_pair(rng):
    prompt = _digits(rng, 2, 6)
    chosen = _digits(rng, 1, 5)
    rejected = _digits(rng, 1, 5)
    while rejected == chosen:
        rejected = _digits(rng, 1, 5)
    return PreferencePair(prompt=prompt, chosen=chosen, rejected=rejected, pair_kind=EASY)


def test_criterion_1_gradient_soundness():
    """All three losses pass central FD checks (h=1e-4, rel err < 1e-5) on >=50 instances."""
    from oracles import fd_gradcheck

    t0 = time.monotonic()
    rng = np.random.default_rng(0)
    checked = 0
    worst = 0.0
    for i in range(17):
        model = Model.init_random(ModelConfig(**{**TINY.__dict__, "seed": 1000 + i}))
        ref = snapshot(Model.init_random(ModelConfig(**{**TINY.__dict__, "seed": 2000 + i})))
        chosen = _digits(rng, 1, 3)
        rejected = _digits(rng, 1, 3)
        while rejected == chosen:
            rejected = _digits(rng, 1, 3)
        pair = PreferencePair(prompt=_digits(rng, 2, 3), chosen=chosen,
                              rejected=rejected, pair_kind=EASY)
        prompt_ids = list(rng.integers(0, 10, size=3))
        resp_ids = list(rng.integers(0, 10, size=2))
        y_ref = list(rng.integers(0, 10, size=2))
        cases = [
            lambda: sft_loss(model, prompt_ids, resp_ids).loss,
            lambda: slic_loss(model, pair, y_ref, SlicConfig(delta=1.0, lam=1.0)).loss,
            lambda: dpo_loss(model, ref, pair, DpoConfig(beta=0.1)).loss,
        ]
        for make_loss in cases:
            worst = max(worst, fd_gradcheck(make_loss, model.params, h=1e-4,
                                            rel_tol=1e-5, rng=rng, coords_per_tensor=3))
            checked += 1
    elapsed = time.monotonic() - t0
    print(f"criterion 1: PASS - {checked} instances, worst rel err {worst:.3g}, {elapsed:.1f}s")
    assert checked >= 50
    assert elapsed < 30.0, f"criterion 1 runtime {elapsed:.1f}s exceeds 30s"
    RESULTS["c1"] = True


def test_criterion_2_dpo_identity_at_init():
    """With model == reference, batch-mean DPO loss is ln 2 within 1e-6."""
    t0 = time.monotonic()
    rng = np.random.default_rng(7)
    for seed in (0, 1):
        model = Model.init_random(ModelConfig(**{**TINY.__dict__, "seed": seed}))
        ref = snapshot(model)
        losses = [dpo_loss(model, ref, _random_pair(rng), DpoConfig(beta=0.1)).loss.item()
                  for _ in range(32)]
        batch_mean = sum(losses) / len(losses)
        assert abs(batch_mean - math.log(2.0)) <= 1e-6, (
            f"criterion 2: batch-mean {batch_mean!r} vs ln2 {math.log(2.0)!r}")
    elapsed = time.monotonic() - t0
    print(f"criterion 2: PASS - |mean - ln2| <= 1e-6 on 2x32 pairs, {elapsed:.2f}s")
    assert elapsed < 1.0, f"criterion 2 runtime {elapsed:.2f}s exceeds 1s"
    RESULTS["c2"] = True


def test_criterion_3_slic_closed_forms():
    """Hand-derived hinge examples reproduce to 1e-12 at delta = lambda = 1."""
    loss_a, hinge_a = slic_terms(1.0, 1.0, -1.0, -5.0, -2.0)
    assert hinge_a.item() == 0.0
    assert abs(loss_a.item() - 2.0) < 1e-12
    loss_b, hinge_b = slic_terms(1.0, 1.0, -3.0, -3.0, -2.0)
    assert hinge_b.item() == 1.0
    assert abs(loss_b.item() - 3.0) < 1e-12
    print("criterion 3: PASS - inactive-hinge loss 2.0 and equal-pair loss 3.0 to 1e-12")
    RESULTS["c3"] = True


def test_criterion_4_curriculum_exactness():
    """LINEAR alphas are exact, ANTI mirrors pointwise, MC mixing is 0.5 +/- 0.01."""
    t0 = time.monotonic()
    lin = CurriculumSchedule(LINEAR, total_steps=101)
    anti = CurriculumSchedule(ANTI, total_steps=101)
    assert alpha_at(lin, 0) == 0.0
    assert alpha_at(lin, 101) == 1.0
    assert alpha_at(lin, 50) == 50 / 101
    for t in range(102):
        assert alpha_at(anti, t) == 1.0 - alpha_at(lin, t)
    rng = np.random.default_rng(0)
    draws = 100_000
    hard = sum(draw_pair_kind(lin, (i * 102) // draws, rng) == HARD for i in range(draws))
    frac = hard / draws
    assert abs(frac - 0.5) <= 0.01, f"criterion 4: HARD fraction {frac:.4f} not 0.5 +/- 0.01"
    elapsed = time.monotonic() - t0
    print(f"criterion 4: PASS - exact alphas, HARD fraction {frac:.4f}, {elapsed:.1f}s")
    assert elapsed < 10.0, f"criterion 4 runtime {elapsed:.1f}s exceeds 10s"
    RESULTS["c4"] = True


def test_criterion_5_tier_calibration():
    """Default tiers give win(S,W) largest with all three rates in (0.80, 0.99)."""
    t0 = time.monotonic()
    corpus = gen_corpus(5000, list(DEFAULT_TIERS), TaskConfig(), seed=0, threads=THREADS)
    sw, _ = tier_winrate(corpus, "strong", "weak", judge)
    mw, _ = tier_winrate(corpus, "middle", "weak", judge)
    sm, _ = tier_winrate(corpus, "strong", "middle", judge)
    elapsed = time.monotonic() - t0
    detail = f"win(S,W)={sw:.4f} win(M,W)={mw:.4f} win(S,M)={sm:.4f}, {elapsed:.1f}s"
    print(f"criterion 5: PASS - {detail}")
    assert sw > mw and sw > sm, f"criterion 5 ordering failed: {detail}"
    for name, rate in (("win(S,W)", sw), ("win(M,W)", mw), ("win(S,M)", sm)):
        assert 0.80 < rate < 0.99, f"criterion 5: {name}={rate:.4f} outside (0.80, 0.99)"
    assert elapsed < 30.0, f"criterion 5 runtime {elapsed:.1f}s exceeds 30s"
    RESULTS["c5"] = True


# ---------------------------------------------------------------------------
# shared end-to-end fixtures for criteria 6 and 7


@pytest.fixture(scope="module")
def corpus6k():
    return gen_corpus(6000, list(DEFAULT_TIERS), TaskConfig(), seed=0, threads=THREADS)


@pytest.fixture(scope="module")
def split6k(corpus6k):
    return split_examples(corpus6k)


@pytest.fixture(scope="module")
def pairs6k(split6k):
    train_side, _ = split6k
    easy, _ = build_pairs(train_side, list(DEFAULT_TIERS), EASY)
    hard, _ = build_pairs(train_side, list(DEFAULT_TIERS), HARD)
    return {EASY: easy, HARD: hard}


def _warm_cfg(seed):
    return RunConfig(SFT, "RANDOM", epochs=2, batch_size=32, seed=seed,
                     model=ModelConfig(seed=seed), fixed=FixedSource(tier="middle"),
                     optimizer=OptimConfig(lr=1e-3, warmup_frac=0.1))


def _dpo_cfg(init, seed, schedule=None, fixed=None):
    # calibrated via sweep: large batch + short warmup is the regime where
    # DPO improves on its own warm start instead of displacing likelihood
    return RunConfig(DPO, init, epochs=1, batch_size=256, seed=seed,
                     objective=DpoConfig(beta=0.1), schedule=schedule, fixed=fixed,
                     optimizer=OptimConfig(lr=3e-4, warmup_frac=0.25))


@pytest.fixture(scope="module")
def warm_runs(split6k, tmp_path_factory):
    """Per-seed SFT warm starts on the middle tier (the shared baseline)."""
    train_side, _ = split6k
    data = TrainData(examples=train_side, tiers=list(DEFAULT_TIERS))
    t0 = time.monotonic()
    runs = {}
    for seed in SEEDS:
        out = tmp_path_factory.mktemp(f"warm_s{seed}")
        runs[seed] = train(_warm_cfg(seed), data, out_dir=str(out))
    TIMES["warm"] = time.monotonic() - t0
    return runs


@pytest.fixture(scope="module")
def dpo_fixed_runs(warm_runs, pairs6k):
    """Per-seed DPO on fixed EASY pairs from each warm start."""
    data = TrainData(pairs_by_kind=pairs6k)
    t0 = time.monotonic()
    runs = {}
    for seed in SEEDS:
        cfg = _dpo_cfg(warm_runs[seed].final_checkpoint, seed,
                       fixed=FixedSource(pair_kind=EASY))
        runs[seed] = train(cfg, data)
    TIMES["dpo_fixed"] = time.monotonic() - t0
    return runs


def _write_report(name, payload):
    REPORT_DIR.mkdir(parents=True, exist_ok=True)
    path = REPORT_DIR / name
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")
    return path


def test_criterion_6_dpo_beats_continued_sft(split6k, warm_runs, dpo_fixed_runs):
    """SFT(middle) -> DPO(EASY) vs continued SFT on the top tier, head to head."""
    train_side, evs = split6k
    assert len(evs) >= 500, f"criterion 6: only {len(evs)} held-out prompts"
    decode = DecodeConfig()
    sft_data = TrainData(examples=train_side, tiers=list(DEFAULT_TIERS))

    t0 = time.monotonic()
    win_pcts, wins = [], 0
    losses = ties = 0
    per_seed = {}
    for seed in SEEDS:
        # matched budget: the continued-SFT branch gets the same batch size
        # and step count as the DPO branch
        top_cfg = RunConfig(SFT, warm_runs[seed].final_checkpoint, epochs=1,
                            batch_size=256, seed=seed, fixed=FixedSource(tier="strong"),
                            optimizer=OptimConfig(lr=1e-3, warmup_frac=0.25))
        top = train(top_cfg, sft_data)
        rep = head_to_head(dpo_fixed_runs[seed].model, top.model, evs, decode,
                           threads=THREADS)
        win_pcts.append(rep.win_pct)
        w = sum(1 for j in rep.judgments if j.outcome == WIN_A)
        l = sum(1 for j in rep.judgments if j.outcome == WIN_B)
        wins += w
        losses += l
        ties += rep.n - w - l
        per_seed[seed] = {"win_pct": rep.win_pct, "tie_pct": rep.tie_pct,
                          "loss_pct": rep.loss_pct, "score_ratio_pct": rep.score_ratio_pct}
    elapsed = TIMES["warm"] + TIMES["dpo_fixed"] + (time.monotonic() - t0)

    mean_win = sum(win_pcts) / len(win_pcts)
    p = binom_two_sided_p(wins, wins + losses) if wins + losses else 1.0
    detail = (f"mean win% {mean_win:.1f} (need > 50), pooled sign test "
              f"wins/ties/losses {wins}/{ties}/{losses} p={p:.3g} (need wins > losses, "
              f"p < 0.05), n={len(evs)} prompts x {len(SEEDS)} seeds, {elapsed:.0f}s")
    _write_report("dpo_vs_continued_sft.json", {
        "seeds": list(SEEDS), "n_eval_prompts": len(evs), "per_seed": per_seed,
        "mean_win_pct": mean_win, "pooled": {"wins": wins, "ties": ties,
                                             "losses": losses, "p_two_sided": p},
        "elapsed_seconds": elapsed,
    })
    RESULTS["c6_detail"] = detail
    assert elapsed < 900.0, f"criterion 6 runtime {elapsed:.0f}s exceeds 15 min"
    verdict = mean_win > 50.0 and wins > losses and p < 0.05
    RESULTS["c6"] = verdict
    print(f"criterion 6: {'PASS' if verdict else 'FAIL'} - {detail}")
    assert verdict, f"criterion 6: {detail}"


def test_criterion_7_curriculum_benefit(split6k, pairs6k, warm_runs, dpo_fixed_runs):
    """Curriculum DPO vs fixed-EASY and anti-curriculum DPO, win% vs the SFT baseline."""
    _, evs = split6k
    decode = DecodeConfig()
    data = TrainData(pairs_by_kind=pairs6k)

    means = {"fixed_easy": [], "curriculum": [], "anti": []}
    h2h_wins = h2h_losses = h2h_ties = 0
    per_seed = {}
    for seed in SEEDS:
        warm = warm_runs[seed]
        c3 = train(_dpo_cfg(warm.final_checkpoint, seed,
                            schedule=CurriculumSchedule(LINEAR, curriculum_id=3)), data)
        c4 = train(_dpo_cfg(warm.final_checkpoint, seed,
                            schedule=CurriculumSchedule(ANTI, curriculum_id=4)), data)
        row = {}
        for tag, model in (("fixed_easy", dpo_fixed_runs[seed].model),
                           ("curriculum", c3.model), ("anti", c4.model)):
            rep = head_to_head(model, warm.model, evs, decode, threads=THREADS)
            means[tag].append(rep.win_pct)
            row[tag] = {"win_pct": rep.win_pct, "tie_pct": rep.tie_pct,
                        "loss_pct": rep.loss_pct}
        h = head_to_head(c3.model, c4.model, evs, decode, threads=THREADS)
        w = sum(1 for j in h.judgments if j.outcome == WIN_A)
        l = sum(1 for j in h.judgments if j.outcome == WIN_B)
        h2h_wins += w
        h2h_losses += l
        h2h_ties += h.n - w - l
        row["curriculum_vs_anti"] = {"wins": w, "losses": l, "ties": h.n - w - l}
        per_seed[seed] = row

    mean_fix = sum(means["fixed_easy"]) / len(SEEDS)
    mean_c3 = sum(means["curriculum"]) / len(SEEDS)
    mean_c4 = sum(means["anti"]) / len(SEEDS)
    p = binom_two_sided_p(h2h_wins, h2h_wins + h2h_losses) if h2h_wins + h2h_losses else 1.0
    gap = mean_c3 - mean_fix
    detail = (f"mean win% vs SFT: curriculum {mean_c3:.1f}, fixed-EASY {mean_fix:.1f} "
              f"(gap {gap:+.1f}, need >= 0), anti {mean_c4:.1f}; curriculum-vs-anti "
              f"wins/ties/losses {h2h_wins}/{h2h_ties}/{h2h_losses} p={p:.3g} "
              f"(need wins > losses, p < 0.1)")
    report_path = _write_report("curriculum_benefit.json", {
        "seeds": list(SEEDS), "n_eval_prompts": len(evs), "per_seed": per_seed,
        "mean_win_pct_vs_sft": {"fixed_easy": mean_fix, "curriculum": mean_c3,
                                "anti": mean_c4},
        "gap_curriculum_minus_fixed": gap,
        "curriculum_vs_anti_pooled": {"wins": h2h_wins, "ties": h2h_ties,
                                      "losses": h2h_losses, "p_two_sided": p},
    })
    primary = mean_c3 >= mean_fix and h2h_wins > h2h_losses and p < 0.1
    if primary:
        print(f"criterion 7: PASS - {detail}")
        RESULTS["c7"] = True
        return
    # no separation: the documented negative result stands in, but only
    # with criteria 1-6 green in this same run
    earlier = [f"c{i}" for i in range(1, 7)]
    missing = [k for k in earlier if not RESULTS.get(k)]
    print(f"criterion 7: negative result documented at {report_path} - {detail}")
    assert not missing, (
        f"criterion 7: no separation ({detail}); documented-negative path needs "
        f"criteria 1-6 to pass, but {', '.join(missing)} did not "
        f"({RESULTS.get('c6_detail', 'no detail')})")
    RESULTS["c7"] = True


# ---------------------------------------------------------------------------


def _tree_bytes(root):
    """{relpath: bytes} for every file under root."""
    out = {}
    for base, _, names in os.walk(root):
        for name in names:
            full = os.path.join(base, name)
            out[os.path.relpath(full, root)] = Path(full).read_bytes()
    return out


def _run_once(root):
    """One full gen/pairs/train/eval pipeline, run from `root` with relative
    paths so both reruns see the identical config byte for byte."""
    os.makedirs(root, exist_ok=True)
    cwd = os.getcwd()
    os.chdir(root)
    try:
        gen = op_gen(GenConfig(n=400, seed=0, threads=2), "data")
        for kind in (EASY, HARD):
            op_pairs(PairsConfig(corpus=gen["corpus"], pair_kind=kind), "data")
        model = ModelSpec(context_len=32, n_layers=1, d_model=16, n_heads=2)
        stages = PipelineConfig(stages=[
            TrainStageConfig(name="sft", method=SFT, init="RANDOM", epochs=1,
                             batch_size=16, seed=0, model=model, fixed={"tier": "middle"},
                             optimizer=OptimSpec(lr=1e-3),
                             data=DataSpec(corpus=gen["corpus"])),
            TrainStageConfig(name="dpo", method=DPO, init="stage:sft", epochs=1,
                             batch_size=16, seed=0, objective={"beta": 0.1},
                             schedule=ScheduleSpec(kind=LINEAR, curriculum_id=3),
                             optimizer=OptimSpec(lr=3e-4, decay=True),
                             data=DataSpec(pairs_easy="data/pairs_easy.jsonl",
                                           pairs_hard="data/pairs_hard.jsonl")),
        ])
        trained = op_train(stages, "train")
        op_eval(EvalConfig(baseline=trained["stages"][0]["final_checkpoint"],
                           candidates=[CandidateSpec(
                               name="dpo",
                               checkpoint=trained["stages"][1]["final_checkpoint"])],
                           corpus=gen["corpus"], split="eval", threads=2), "eval")
    finally:
        os.chdir(cwd)
    return root


def _comparable(tree):
    """Manifests lose their timestamp field; other files stay raw bytes."""
    out = {}
    for rel, raw in tree.items():
        if os.path.basename(rel) == "manifest.json":
            doc = json.loads(raw)
            doc.pop("timestamp", None)
            out[rel] = json.dumps(doc, sort_keys=True)
        else:
            out[rel] = raw
    return out


def test_criterion_8_rerun_reproducibility(tmp_path):
    """Identical config+seed reruns produce byte-identical artifacts."""
    run_a = _run_once(str(tmp_path / "a"))
    run_b = _run_once(str(tmp_path / "b"))
    tree_a, tree_b = _tree_bytes(run_a), _tree_bytes(run_b)
    # out_dir paths differ between runs, so manifests compare config hash
    # and artifact names, and every other artifact compares raw bytes
    assert sorted(tree_a) == sorted(tree_b)
    comp_a, comp_b = _comparable(tree_a), _comparable(tree_b)
    diffs = [rel for rel in sorted(comp_a) if comp_a[rel] != comp_b[rel]]
    checked = [rel for rel in tree_a if os.path.basename(rel) != "manifest.json"]
    assert any("params.bin" in rel for rel in checked)
    assert any(rel.endswith("log.csv") for rel in checked)
    assert any(rel.endswith("report.json") for rel in checked)
    assert not diffs, f"criterion 8: artifacts differ across reruns: {diffs[:8]}"
    print(f"criterion 8: PASS - {len(checked)} artifacts byte-identical across reruns "
          f"(+{len(tree_a) - len(checked)} manifests identical minus timestamps)")
    RESULTS["c8"] = True


def test_criterion_9_checkpoint_integrity(corpus6k, tmp_path):
    """Save/load round-trips bit-exactly; split-resume matches 20 straight steps."""
    examples = corpus6k[:80]
    data = TrainData(examples=examples, tiers=list(DEFAULT_TIERS))
    model_cfg = ModelConfig(context_len=32, n_layers=1, d_model=16, n_heads=2, seed=9)

    def cfg(epochs):
        return RunConfig(SFT, "RANDOM", epochs=epochs, batch_size=8, seed=9,
                         model=model_cfg, fixed=FixedSource(tier="middle"),
                         optimizer=OptimConfig(lr=1e-3, warmup_frac=0.1))

    straight = train(cfg(2), data, out_dir=str(tmp_path / "straight"))
    assert len(straight.log.records) == 20 and straight.log.records[-1]["step"] == 19

    # save/load round trip: params bit-exact and a re-save is byte-identical
    pure_a, pure_b = str(tmp_path / "pure_a"), str(tmp_path / "pure_b")
    save_checkpoint(pure_a, straight.model)
    loaded, resume = load_checkpoint(pure_a)
    assert resume is None
    assert loaded.params.keys() == straight.model.params.keys()
    for name, p in straight.model.params.items():
        got = loaded.params[name].data
        assert got.dtype == p.data.dtype and got.shape == p.data.shape
        assert got.tobytes() == p.data.tobytes(), f"criterion 9: {name} not bit-exact"
    save_checkpoint(pure_b, loaded)
    for fname in ("params.bin", "manifest.json"):
        assert (Path(pure_a) / fname).read_bytes() == (Path(pure_b) / fname).read_bytes()

    # split-resume: redo epoch 2 from the mid-run checkpoint, same schedule
    resumed = train(cfg(2), data, out_dir=str(tmp_path / "resumed"),
                    resume_from=straight.checkpoints[0])
    assert resumed.log.records[-1]["step"] == 19
    assert straight.log.records[10:] == resumed.log.records
    for fname in ("params.bin", "manifest.json"):
        a = Path(straight.final_checkpoint) / fname
        b = Path(resumed.final_checkpoint) / fname
        assert a.read_bytes() == b.read_bytes(), f"criterion 9: {fname} differs after resume"
    print("criterion 9: PASS - round-trip bit-exact; split-resume matches 20 straight steps")
    RESULTS["c9"] = True
