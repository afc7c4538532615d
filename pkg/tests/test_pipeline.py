import json
import os

import pytest

from prefkit import pipeline, schemas
from prefkit.corpus import is_eval_prompt, read_corpus
from prefkit.errors import ConfigError, DataError
from prefkit.evaluation import Judgment, aggregate, write_judgments_csv

MODEL = schemas.ModelSpec(context_len=32, n_layers=1, d_model=16, n_heads=2)


@pytest.fixture(scope="module")
def data_dir(tmp_path_factory):
    out = str(tmp_path_factory.mktemp("data"))
    pipeline.op_gen(schemas.GenConfig(n=60, seed=3), out)
    pipeline.op_pairs(schemas.PairsConfig(
        corpus=os.path.join(out, "corpus.jsonl"), pair_kind="EASY"), out)
    pipeline.op_pairs(schemas.PairsConfig(
        corpus=os.path.join(out, "corpus.jsonl"), pair_kind="HARD"), out)
    return out


def sft_stage(data_dir, **over):
    base = dict(name="stage0", method="SFT", init="RANDOM", epochs=1,
                batch_size=8, seed=0, model=MODEL,
                fixed=schemas.FixedSpec(tier="middle"),
                data=schemas.DataSpec(corpus=os.path.join(data_dir, "corpus.jsonl")))
    base.update(over)
    return schemas.TrainStageConfig(**base)


def test_op_gen_writes_corpus_and_manifest(tmp_path):
    out = str(tmp_path)
    summary = pipeline.op_gen(schemas.GenConfig(n=25, seed=1), out, argv=["x"])
    assert summary["n"] == 25
    examples = read_corpus(os.path.join(out, "corpus.jsonl"))
    assert len(examples) == 25
    manifest = json.load(open(os.path.join(out, "manifest.json")))
    assert manifest["op"] == "gen"
    assert manifest["argv"] == ["x"]
    assert manifest["artifacts"] == ["corpus.jsonl"]
    assert manifest["config_hash"] == pipeline.config_hash(
        schemas.GenConfig(n=25, seed=1).model_dump())


def test_op_gen_is_deterministic(tmp_path):
    a, b = str(tmp_path / "a"), str(tmp_path / "b")
    pipeline.op_gen(schemas.GenConfig(n=30, seed=9), a)
    pipeline.op_gen(schemas.GenConfig(n=30, seed=9), b)
    assert open(os.path.join(a, "corpus.jsonl"), "rb").read() == \
        open(os.path.join(b, "corpus.jsonl"), "rb").read()


def test_op_pairs_counts(data_dir):
    examples = read_corpus(os.path.join(data_dir, "corpus.jsonl"))
    pairs_file = os.path.join(data_dir, "pairs_easy.jsonl")
    kept = sum(1 for _ in open(pairs_file))
    assert kept <= len(examples)


def test_effective_threads_env_cap(monkeypatch):
    monkeypatch.delenv("PREFKIT_THREADS", raising=False)
    assert pipeline.effective_threads(8) == 8
    monkeypatch.setenv("PREFKIT_THREADS", "2")
    assert pipeline.effective_threads(8) == 2
    assert pipeline.effective_threads(1) == 1
    monkeypatch.setenv("PREFKIT_THREADS", "zero")
    with pytest.raises(ConfigError):
        pipeline.effective_threads(4)
    monkeypatch.setenv("PREFKIT_THREADS", "0")
    with pytest.raises(ConfigError):
        pipeline.effective_threads(4)


def test_train_data_excludes_eval_split(data_dir):
    data = pipeline._to_train_data(schemas.DataSpec(
        corpus=os.path.join(data_dir, "corpus.jsonl"),
        pairs_easy=os.path.join(data_dir, "pairs_easy.jsonl")))
    assert all(not is_eval_prompt(ex.prompt) for ex in data.examples)
    assert all(not is_eval_prompt(p.prompt) for p in data.pairs_by_kind["EASY"])


def test_op_train_single_stage_artifacts(data_dir, tmp_path):
    out = str(tmp_path)
    summary = pipeline.op_train(sft_stage(data_dir), out)
    stage = summary["stages"][0]
    assert stage["steps"] > 0
    assert os.path.isfile(os.path.join(out, "log.csv"))
    assert os.path.isfile(os.path.join(out, "loss_vs_step.svg"))
    assert os.path.isfile(os.path.join(out, "loss_vs_step.csv"))
    assert os.path.isdir(stage["final_checkpoint"])
    manifest = json.load(open(os.path.join(out, "manifest.json")))
    for name in manifest["artifacts"]:
        assert os.path.exists(os.path.join(out, name))


def test_op_train_pipeline_nests_stages(data_dir, tmp_path):
    out = str(tmp_path)
    cfg = schemas.PipelineConfig(stages=[
        sft_stage(data_dir, name="warm"),
        schemas.TrainStageConfig(
            name="dpo", method="DPO", init="stage:warm", epochs=1, batch_size=8,
            seed=0, objective=schemas.DpoSpec(),
            fixed=schemas.FixedSpec(pair_kind="EASY"),
            data=schemas.DataSpec(
                pairs_easy=os.path.join(data_dir, "pairs_easy.jsonl"))),
    ])
    summary = pipeline.op_train(cfg, out)
    assert [s["name"] for s in summary["stages"]] == ["warm", "dpo"]
    assert os.path.isfile(os.path.join(out, "warm", "log.csv"))
    assert os.path.isfile(os.path.join(out, "dpo", "log.csv"))
    # contrastive stages log their pair mix
    assert os.path.isfile(os.path.join(out, "dpo", "mix_vs_step.csv"))


def test_op_train_seed_override_lands_in_manifest(data_dir, tmp_path):
    out = str(tmp_path)
    pipeline.op_train(sft_stage(data_dir), out, seed_override=77)
    manifest = json.load(open(os.path.join(out, "manifest.json")))
    assert manifest["seed"] == 77


def test_op_train_rerun_is_byte_identical(data_dir, tmp_path):
    a, b = str(tmp_path / "a"), str(tmp_path / "b")
    cfg = sft_stage(data_dir)
    sa = pipeline.op_train(cfg, a)
    sb = pipeline.op_train(cfg, b)
    for name in ("log.csv", "loss_vs_step.svg"):
        assert open(os.path.join(a, name), "rb").read() == \
            open(os.path.join(b, name), "rb").read()
    pa = os.path.join(sa["stages"][0]["final_checkpoint"], "params.bin")
    pb = os.path.join(sb["stages"][0]["final_checkpoint"], "params.bin")
    assert open(pa, "rb").read() == open(pb, "rb").read()


@pytest.fixture(scope="module")
def trained(data_dir, tmp_path_factory):
    out = str(tmp_path_factory.mktemp("trained"))
    a = pipeline.op_train(sft_stage(data_dir, name="a"), os.path.join(out, "a"))
    b = pipeline.op_train(sft_stage(data_dir, name="b", seed=1, epochs=2),
                          os.path.join(out, "b"))
    return (a["stages"][0]["final_checkpoint"], b["stages"][0]["final_checkpoint"])


def test_op_eval_single_candidate(data_dir, trained, tmp_path):
    out = str(tmp_path)
    ck_a, ck_b = trained
    cfg = schemas.EvalConfig(
        baseline=ck_b, candidates=[schemas.CandidateSpec(name="a", checkpoint=ck_a)],
        corpus=os.path.join(data_dir, "corpus.jsonl"), split="all")
    summary = pipeline.op_eval(cfg, out)
    assert os.path.isfile(os.path.join(out, "report.json"))
    assert os.path.isfile(os.path.join(out, "judgments.csv"))
    rep = summary["reports"]["a"]
    assert rep["n"] == summary["n_prompts"]
    assert abs(rep["win_pct"] + rep["tie_pct"] + rep["loss_pct"] - 100.0) < 1e-9


def test_op_eval_multi_candidate_chart(data_dir, trained, tmp_path):
    out = str(tmp_path)
    ck_a, ck_b = trained
    cfg = schemas.EvalConfig(
        baseline=ck_b,
        candidates=[schemas.CandidateSpec(name="one", checkpoint=ck_a),
                    schemas.CandidateSpec(name="two", checkpoint=ck_b)],
        corpus=os.path.join(data_dir, "corpus.jsonl"), split="all")
    pipeline.op_eval(cfg, out)
    assert os.path.isfile(os.path.join(out, "one.report.json"))
    assert os.path.isfile(os.path.join(out, "two.judgments.csv"))
    assert os.path.isfile(os.path.join(out, "win_vs_candidate.svg"))


def test_op_eval_rejects_bad_split_and_duplicates(data_dir, trained, tmp_path):
    ck_a, ck_b = trained
    base = dict(baseline=ck_b, corpus=os.path.join(data_dir, "corpus.jsonl"))
    with pytest.raises(ConfigError):
        pipeline.op_eval(schemas.EvalConfig(
            candidates=[schemas.CandidateSpec(name="a", checkpoint=ck_a)],
            split="validation", **base), str(tmp_path))
    with pytest.raises(ConfigError):
        pipeline.op_eval(schemas.EvalConfig(
            candidates=[schemas.CandidateSpec(name="a", checkpoint=ck_a),
                        schemas.CandidateSpec(name="a", checkpoint=ck_b)],
            split="all", **base), str(tmp_path))


def test_op_eval_empty_split_is_a_data_error(data_dir, trained, tmp_path):
    # hand-build a corpus whose single prompt hashes to the train side
    src = read_corpus(os.path.join(data_dir, "corpus.jsonl"))
    keep = next(ex for ex in src if not is_eval_prompt(ex.prompt))
    path = str(tmp_path / "one.jsonl")
    with open(path, "w") as f:
        f.write(json.dumps({"prompt": keep.prompt, "gold": keep.gold,
                            "responses": keep.responses}) + "\n")
    ck_a, ck_b = trained
    cfg = schemas.EvalConfig(
        baseline=ck_b, candidates=[schemas.CandidateSpec(name="a", checkpoint=ck_a)],
        corpus=path, split="eval")
    with pytest.raises(DataError):
        pipeline.op_eval(cfg, str(tmp_path / "out"))


def test_judgments_csv_round_trip(tmp_path):
    judgments = [
        Judgment("12", "21", "12", 5.0, 10.0, "B"),
        Judgment("34", "34", "43", 10.0, 5.0, "A"),
        Judgment("56", "56", "56", 10.0, 10.0, "TIE"),
    ]
    path = str(tmp_path / "judgments.csv")
    write_judgments_csv(path, judgments)
    back = pipeline.read_judgments_csv(path)
    assert back == judgments
    assert aggregate(back).to_dict() == aggregate(judgments).to_dict()


def test_read_judgments_csv_rejects_junk(tmp_path):
    path = str(tmp_path / "x.csv")
    with open(path, "w") as f:
        f.write("not,a,judgments,file\n")
    with pytest.raises(DataError):
        pipeline.read_judgments_csv(path)
    with pytest.raises(DataError):
        pipeline.read_judgments_csv(str(tmp_path / "missing.csv"))


def test_judgments_path_resolution(tmp_path):
    d = str(tmp_path)
    assert pipeline._judgments_path(d) == os.path.join(d, "judgments.csv")
    assert pipeline._judgments_path("/x/report.json") == "/x/judgments.csv"
    assert pipeline._judgments_path("/x/dpo.report.json") == "/x/dpo.judgments.csv"
    with pytest.raises(ConfigError):
        pipeline._judgments_path("/x/results.txt")


def test_op_report_single_and_paired(data_dir, trained, tmp_path):
    ck_a, ck_b = trained
    out = str(tmp_path)
    cfg = schemas.EvalConfig(
        baseline=ck_b,
        candidates=[schemas.CandidateSpec(name="one", checkpoint=ck_a),
                    schemas.CandidateSpec(name="two", checkpoint=ck_b)],
        corpus=os.path.join(data_dir, "corpus.jsonl"), split="all")
    pipeline.op_eval(cfg, out)
    single = pipeline.op_report(schemas.ReportRequest(
        paths=[os.path.join(out, "one.report.json")]))
    assert single["mode"] == "single"
    assert single["verdict"]["verdict"] in ("SIGNIFICANT", "NOT_SIGNIFICANT",
                                            "NOT_APPLICABLE")
    paired = pipeline.op_report(schemas.ReportRequest(
        paths=[os.path.join(out, "one.report.json"),
               os.path.join(out, "two.report.json")], alpha=0.1))
    assert paired["mode"] == "paired"
    assert paired["alpha"] == 0.1
