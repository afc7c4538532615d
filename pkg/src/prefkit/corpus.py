"""Synthetic tiered corpus: digit-sorting prompts with graded corruption.

Each example is a random digit string; the gold answer is its sorted
form. A tier stands in for a model of known strength: it copies gold
and substitutes a uniformly random digit at each position with its
corruption_rate. Lower rank = stronger tier = lower rate. Preference
pairs come from tier rank order, never from a learned judge.

This module also owns the fixed character tokenizer and the hash-based
train/eval prompt split.
"""

import hashlib
import json
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, ContractViolation, DataError, TokenizeError

PAD, BOS, EOS, SEP = 0, 1, 2, 3
_DIGIT_BASE = 4  # '0' -> 4 ... '9' -> 13
VOCAB_SIZE = 14

EASY, HARD = "EASY", "HARD"


@dataclass(frozen=True)
class Tier:
    name: str
    rank: int
    corruption_rate: float


@dataclass(frozen=True)
class TaskConfig:
    length: int = 12


@dataclass(frozen=True)
class TieredExample:
    prompt: str
    gold: str
    responses: dict


@dataclass(frozen=True)
class PreferencePair:
    prompt: str
    chosen: str
    rejected: str
    pair_kind: str
    source_tiers: tuple | None = None


# Default tiers. The rates are calibrated by Monte-Carlo so the judge-based
# win rates win(S,M), win(M,W), win(S,W) land strictly inside (0.80, 0.99)
# at the default task length, with win(S,W) largest (measured
# 0.821 / 0.815 / 0.987 at n=50000). A lower middle rate caps win(S,M)
# below 0.80: both responses are then perfect too often, and those ties
# count against the win rate.
DEFAULT_TIERS = (
    Tier("strong", 0, 0.02),
    Tier("middle", 1, 0.18),
    Tier("weak", 2, 0.40),
)


def validate_tiers(tiers) -> list:
    """Sorted-by-rank copy; rejects duplicate ranks/names and bad ordering."""
    tiers = list(tiers)
    if len(tiers) < 2:
        raise ConfigError("need at least 2 tiers")
    if len({t.name for t in tiers}) != len(tiers):
        raise ConfigError("duplicate tier name")
    if len({t.rank for t in tiers}) != len(tiers):
        raise ConfigError("duplicate tier rank")
    ordered = sorted(tiers, key=lambda t: t.rank)
    for t in ordered:
        if not 0.0 <= t.corruption_rate <= 1.0:
            raise ConfigError(f"tier {t.name}: corruption_rate outside [0,1]")
    for a, b in zip(ordered, ordered[1:]):
        if a.corruption_rate >= b.corruption_rate:
            raise ConfigError(
                f"tier {b.name}: corruption_rate must be strictly above "
                f"higher-ranked tier {a.name}")
    return ordered


def tokenize(text: str) -> list:
    """Digit characters to ids via the fixed table; '' gives []."""
    ids = []
    for ch in text:
        if not "0" <= ch <= "9":
            raise TokenizeError(f"character {ch!r} outside task alphabet")
        ids.append(_DIGIT_BASE + ord(ch) - ord("0"))
    return ids


def detokenize(ids) -> str:
    """Inverse of tokenize; rejects non-digit ids."""
    chars = []
    for i in ids:
        if not _DIGIT_BASE <= i < VOCAB_SIZE:
            raise TokenizeError(f"id {i} is not a digit token")
        chars.append(chr(ord("0") + i - _DIGIT_BASE))
    return "".join(chars)


def encode_prompt(text: str) -> list:
    return [BOS] + tokenize(text) + [SEP]


def encode_response(text: str) -> list:
    return tokenize(text) + [EOS]


def decode_generated(ids) -> str:
    """Generated ids to text: truncate at the first EOS, keep digits only."""
    out = []
    for i in ids:
        if i == EOS:
            break
        if _DIGIT_BASE <= i < VOCAB_SIZE:
            out.append(chr(ord("0") + i - _DIGIT_BASE))
    return "".join(out)


def _gen_example(index: int, ordered_tiers, length: int, seed: int) -> TieredExample:
    # one rng per example keyed by (seed, index): sharding order can't matter
    rng = np.random.default_rng((seed, index))
    prompt = "".join(str(d) for d in rng.integers(0, 10, size=length))
    gold = "".join(sorted(prompt))
    responses = {}
    for tier in ordered_tiers:
        hits = rng.random(length) < tier.corruption_rate
        subs = rng.integers(0, 10, size=length)  # drawn even when unused
        chars = [str(subs[i]) if hits[i] else gold[i] for i in range(length)]
        responses[tier.name] = "".join(chars)
    return TieredExample(prompt, gold, responses)


def gen_corpus(n: int, tiers, task_cfg: TaskConfig, seed: int, threads: int = 1) -> list:
    """n TieredExamples, deterministic in (n, tiers, task_cfg, seed).

    threads > 1 shards by example index; output order is by index so
    parallel and serial runs produce identical corpora.
    """
    if n < 1:
        raise ContractViolation("n must be >= 1")
    if task_cfg.length < 1:
        raise ConfigError("task length must be >= 1")
    ordered = validate_tiers(tiers)
    if threads <= 1:
        return [_gen_example(i, ordered, task_cfg.length, seed) for i in range(n)]
    out = [None] * n
    with ThreadPoolExecutor(max_workers=threads) as pool:
        for i, ex in enumerate(pool.map(
                lambda i: _gen_example(i, ordered, task_cfg.length, seed), range(n))):
            out[i] = ex
    return out


def build_pairs(corpus, tiers, pair_kind: str):
    """Pairs of one kind from every example; returns (pairs, n_dropped).

    EASY = (rank-0 tier, worst tier); HARD = (middle tier, worst tier).
    Examples whose two responses are identical are dropped and counted.
    """
    ordered = validate_tiers(tiers)
    if pair_kind == EASY:
        chosen_tier, rejected_tier = ordered[0], ordered[-1]
    elif pair_kind == HARD:
        if len(ordered) < 3:
            raise ConfigError("HARD pairs need at least 3 tiers")
        chosen_tier, rejected_tier = ordered[len(ordered) // 2], ordered[-1]
    else:
        raise ConfigError(f"unknown pair_kind {pair_kind!r}")
    pairs = []
    dropped = 0
    for ex in corpus:
        if chosen_tier.name not in ex.responses or rejected_tier.name not in ex.responses:
            raise DataError(f"example missing tier response for pair {pair_kind}")
        chosen = ex.responses[chosen_tier.name]
        rejected = ex.responses[rejected_tier.name]
        if chosen == rejected:
            dropped += 1
            continue
        pairs.append(PreferencePair(ex.prompt, chosen, rejected, pair_kind,
                                    (chosen_tier.name, rejected_tier.name)))
    return pairs, dropped


def tier_winrate(corpus, tier_a: str, tier_b: str, judge):
    """(win_rate, tie_rate) of tier_a over tier_b under the judge.

    Ties stay in the denominator but not the numerator.
    """
    wins = ties = 0
    for ex in corpus:
        if tier_a not in ex.responses or tier_b not in ex.responses:
            raise DataError("tier missing from example")
        sa = judge(ex.prompt, ex.gold, ex.responses[tier_a])
        sb = judge(ex.prompt, ex.gold, ex.responses[tier_b])
        if sa > sb:
            wins += 1
        elif sa == sb:
            ties += 1
    n = len(corpus)
    if n == 0:
        raise ContractViolation("empty corpus")
    return wins / n, ties / n


def is_eval_prompt(prompt: str) -> bool:
    """Hash-based holdout: sha256(prompt) mod 10 == 0 goes to eval."""
    digest = hashlib.sha256(prompt.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "big") % 10 == 0


def split_examples(examples):
    """(train, eval) split by is_eval_prompt; disjoint by construction."""
    train = [ex for ex in examples if not is_eval_prompt(ex.prompt)]
    evals = [ex for ex in examples if is_eval_prompt(ex.prompt)]
    return train, evals


def write_corpus(path: str, examples):
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, "w") as f:
        for ex in examples:
            f.write(json.dumps({"prompt": ex.prompt, "gold": ex.gold,
                                "responses": ex.responses}, sort_keys=True))
            f.write("\n")


def read_corpus(path: str) -> list:
    examples = []
    with open(path) as f:
        for lineno, line in enumerate(f, 1):
            line = line.strip()
            if not line:
                continue
            try:
                row = json.loads(line)
                examples.append(TieredExample(row["prompt"], row["gold"],
                                              dict(row["responses"])))
            except (json.JSONDecodeError, KeyError, TypeError) as e:
                raise DataError(f"{path}:{lineno}: bad corpus row ({e})")
    if not examples:
        raise DataError(f"{path}: empty corpus")
    return examples


def write_pairs(path: str, pairs):
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, "w") as f:
        for p in pairs:
            f.write(json.dumps({"prompt": p.prompt, "chosen": p.chosen,
                                "rejected": p.rejected, "pair_kind": p.pair_kind},
                               sort_keys=True))
            f.write("\n")


def read_pairs(path: str) -> list:
    pairs = []
    with open(path) as f:
        for lineno, line in enumerate(f, 1):
            line = line.strip()
            if not line:
                continue
            try:
                row = json.loads(line)
                kind = row["pair_kind"]
                if kind not in (EASY, HARD):
                    raise DataError(f"{path}:{lineno}: bad pair_kind {kind!r}")
                if row["chosen"] == row["rejected"]:
                    raise DataError(f"{path}:{lineno}: chosen == rejected")
                pairs.append(PreferencePair(row["prompt"], row["chosen"],
                                            row["rejected"], kind))
            except (json.JSONDecodeError, KeyError, TypeError) as e:
                raise DataError(f"{path}:{lineno}: bad pair row ({e})")
    if not pairs:
        raise DataError(f"{path}: empty pairs file")
    return pairs
