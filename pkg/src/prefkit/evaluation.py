"""Side-by-side evaluation under the deterministic edit-distance judge.

judge() scores a response 10*(1 - levenshtein/max_len) against gold.
head_to_head() decodes two models on shared eval prompts and aggregates
win/tie/loss percentages, the score ratio, and a Wilson interval.
compare_report() runs the exact two-sided sign test over the retained
judgments.
"""

import hashlib
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

from scipy.stats import binomtest

from . import corpus as corpus_mod
from .errors import ContractViolation, DataError
from .model import generate

TIE_EPSILON = 1e-9
WIN_A, WIN_B, TIE = "WIN_A", "WIN_B", "TIE"
_Z95 = 1.959963984540054  # two-sided 95% normal quantile


@dataclass(frozen=True)
class DecodeConfig:
    mode: str = "greedy"  # sampling is available behind the flag, seeded
    temperature: float = 1.0
    seed: int = 0


@dataclass(frozen=True)
class Judgment:
    prompt: str
    response_a: str
    response_b: str
    score_a: float
    score_b: float
    outcome: str


@dataclass
class EvalReport:
    n: int
    win_pct: float
    tie_pct: float
    loss_pct: float
    score_ratio_pct: float | None
    ci95: float
    flags: list = field(default_factory=list)
    judgments: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {"n": self.n, "win_pct": self.win_pct, "tie_pct": self.tie_pct,
                "loss_pct": self.loss_pct, "score_ratio_pct": self.score_ratio_pct,
                "ci95": self.ci95, "flags": list(self.flags)}


def levenshtein(a: str, b: str) -> int:
    """Classic DP edit distance (substitution/insert/delete all cost 1)."""
    if a == b:
        return 0
    if not a:
        return len(b)
    if not b:
        return len(a)
    prev = list(range(len(b) + 1))
    for i, ca in enumerate(a, 1):
        cur = [i] + [0] * len(b)
        for j, cb in enumerate(b, 1):
            cur[j] = min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (ca != cb))
        prev = cur
    return prev[-1]


def judge(prompt: str, gold: str, response: str) -> float:
    """Score in [0,10]: 10*(1 - levenshtein/max_len); exact match = 10."""
    denom = max(len(gold), len(response))
    if denom == 0:
        return 10.0
    return 10.0 * (1.0 - levenshtein(response, gold) / denom)


def _outcome(score_a: float, score_b: float) -> str:
    if abs(score_a - score_b) < TIE_EPSILON:
        return TIE
    return WIN_A if score_a > score_b else WIN_B


def _decode_seed(base_seed: int, prompt: str, side: str) -> int:
    # seed depends on the prompt, not its position, so prompt order is moot
    digest = hashlib.sha256(f"{base_seed}:{side}:{prompt}".encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "big")


def _decode(model, prompt: str, decode_cfg: DecodeConfig, side: str) -> str:
    prompt_ids = corpus_mod.encode_prompt(prompt)
    max_new = model.config.context_len - len(prompt_ids)
    if max_new < 1:
        raise ContractViolation("prompt fills the whole context")
    if decode_cfg.mode == "greedy":
        out = generate(model, prompt_ids, max_new, mode="greedy")
    else:
        out = generate(model, prompt_ids, max_new, mode="sample",
                       temperature=decode_cfg.temperature,
                       seed=_decode_seed(decode_cfg.seed, prompt, side))
    return corpus_mod.decode_generated(out)


def head_to_head(model_a, model_b, eval_set, decode_cfg: DecodeConfig | None = None,
                 threads: int = 1) -> EvalReport:
    """Decode both models on every example and aggregate the judgments.

    Aggregates are order-independent and worker-count-independent; the
    judgments list keeps the eval_set order.
    """
    eval_set = list(eval_set)
    if not eval_set:
        raise ContractViolation("empty eval set")
    decode_cfg = decode_cfg or DecodeConfig()

    def one(ex) -> Judgment:
        ra = _decode(model_a, ex.prompt, decode_cfg, "a")
        rb = _decode(model_b, ex.prompt, decode_cfg, "b")
        sa = judge(ex.prompt, ex.gold, ra)
        sb = judge(ex.prompt, ex.gold, rb)
        return Judgment(ex.prompt, ra, rb, sa, sb, _outcome(sa, sb))

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            judgments = list(pool.map(one, eval_set))
    else:
        judgments = [one(ex) for ex in eval_set]
    return aggregate(judgments)


def aggregate(judgments) -> EvalReport:
    """Fold judgments into an EvalReport."""
    n = len(judgments)
    if n == 0:
        raise ContractViolation("no judgments to aggregate")
    wins = sum(1 for j in judgments if j.outcome == WIN_A)
    ties = sum(1 for j in judgments if j.outcome == TIE)
    losses = n - wins - ties
    # fsum is exactly rounded, so aggregates ignore judgment order
    sum_a = math.fsum(j.score_a for j in judgments)
    sum_b = math.fsum(j.score_b for j in judgments)
    flags = []
    if sum_b > 0:
        ratio = 100.0 * sum_a / sum_b
    else:
        ratio = None
        flags.append("DIVIDE_BY_ZERO")
    phat = wins / n
    half = _Z95 * ((phat * (1 - phat) / n + _Z95**2 / (4 * n * n)) ** 0.5) / (1 + _Z95**2 / n)
    return EvalReport(n, 100.0 * wins / n, 100.0 * ties / n, 100.0 * losses / n,
                      ratio, 100.0 * half, flags, list(judgments))


@dataclass(frozen=True)
class Verdict:
    wins: int
    losses: int
    ties: int
    p_value: float | None
    verdict: str  # SIGNIFICANT | NOT_SIGNIFICANT | NOT_APPLICABLE
    alpha: float

    def to_dict(self) -> dict:
        return {"wins": self.wins, "losses": self.losses, "ties": self.ties,
                "p_value": self.p_value, "verdict": self.verdict, "alpha": self.alpha}


def compare_report(report: EvalReport, alpha_level: float = 0.05) -> Verdict:
    """Exact two-sided sign test on win/loss prompts; ties are dropped."""
    if not report.judgments:
        raise ContractViolation("report has no retained judgments")
    wins = sum(1 for j in report.judgments if j.outcome == WIN_A)
    losses = sum(1 for j in report.judgments if j.outcome == WIN_B)
    ties = len(report.judgments) - wins - losses
    if wins + losses == 0:
        return Verdict(wins, losses, ties, None, "NOT_APPLICABLE", alpha_level)
    p = binomtest(wins, wins + losses, 0.5, alternative="two-sided").pvalue
    verdict = "SIGNIFICANT" if p < alpha_level else "NOT_SIGNIFICANT"
    return Verdict(wins, losses, ties, float(p), verdict, alpha_level)


def compare_paired_reports(report_a: EvalReport, report_b: EvalReport,
                           alpha_level: float = 0.05) -> Verdict:
    """Sign test between two candidates evaluated against a shared baseline.

    Pairs the two reports' judgments by prompt and compares each
    candidate's own score (score_a) prompt by prompt.
    """
    scores_b = {j.prompt: j.score_a for j in report_b.judgments}
    wins = losses = ties = 0
    matched = 0
    for j in report_a.judgments:
        if j.prompt not in scores_b:
            continue
        matched += 1
        other = scores_b[j.prompt]
        if abs(j.score_a - other) < TIE_EPSILON:
            ties += 1
        elif j.score_a > other:
            wins += 1
        else:
            losses += 1
    if matched == 0:
        raise DataError("reports share no prompts")
    if wins + losses == 0:
        return Verdict(wins, losses, ties, None, "NOT_APPLICABLE", alpha_level)
    p = binomtest(wins, wins + losses, 0.5, alternative="two-sided").pvalue
    verdict = "SIGNIFICANT" if p < alpha_level else "NOT_SIGNIFICANT"
    return Verdict(wins, losses, ties, float(p), verdict, alpha_level)


def write_judgments_csv(path: str, judgments):
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, "w") as f:
        f.write("prompt,response_a,response_b,score_a,score_b,outcome\n")
        for j in judgments:
            f.write(f"{j.prompt},{j.response_a},{j.response_b},"
                    f"{j.score_a!r},{j.score_b!r},{j.outcome}\n")
