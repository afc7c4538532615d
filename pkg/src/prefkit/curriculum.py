"""Data curricula: the alpha schedule and Bernoulli mixing of pair kinds.

alpha(t) is the probability of the curriculum's LATE endpoint at step
t. The four curriculum ids map to Fig-2-style runs:

  1: SFT, top tier -> middle tier     (P(top) = 1 - alpha)
  2: SFT, middle tier -> top tier     (P(top) = alpha)
  3: DPO, EASY -> HARD pairs          (LINEAR schedule)
  4: DPO, HARD -> EASY pairs          (ANTI schedule)

Pair-kind draws are per example, not per batch, so the mixture moves
smoothly even at small total_steps.
"""

from dataclasses import dataclass

import numpy as np

from .corpus import EASY, HARD
from .errors import ConfigError, ContractViolation, DataError

LINEAR, CONSTANT, ANTI = "LINEAR", "CONSTANT", "ANTI"


@dataclass(frozen=True)
class CurriculumSchedule:
    kind: str
    total_steps: int | None = None  # None: trainer resolves to one epoch
    constant_alpha: float | None = None
    curriculum_id: int | None = None

    def __post_init__(self):
        if self.kind not in (LINEAR, CONSTANT, ANTI):
            raise ConfigError(f"unknown schedule kind {self.kind!r}")
        if self.total_steps is not None and self.total_steps < 1:
            raise ConfigError("total_steps must be >= 1")
        if self.kind == CONSTANT:
            if self.constant_alpha is None or not 0.0 <= self.constant_alpha <= 1.0:
                raise ConfigError("CONSTANT schedule needs constant_alpha in [0,1]")
        elif self.constant_alpha is not None:
            raise ConfigError("constant_alpha only applies to CONSTANT schedules")
        if self.curriculum_id is not None:
            if self.curriculum_id not in (1, 2, 3, 4):
                raise ConfigError("curriculum_id must be 1, 2, 3 or 4")
            # ids 3/4 name a direction; the schedule must actually move that way
            if self.curriculum_id == 3 and self.kind != LINEAR:
                raise ConfigError("curriculum 3 (easy->hard) requires a LINEAR schedule")
            if self.curriculum_id == 4 and self.kind != ANTI:
                raise ConfigError("curriculum 4 (hard->easy) requires an ANTI schedule")

    def resolved(self, steps_per_epoch: int) -> "CurriculumSchedule":
        """Fill total_steps with one epoch's step count when unset."""
        if self.total_steps is not None:
            return self
        return CurriculumSchedule(self.kind, steps_per_epoch, self.constant_alpha,
                                  self.curriculum_id)


def alpha_at(schedule: CurriculumSchedule, t: int) -> float:
    """alpha(t) per the kind's closed form; t past T clamps to alpha(T)."""
    if t < 0:
        raise ContractViolation("step index must be non-negative")
    T = schedule.total_steps
    if T is None:
        raise ContractViolation("schedule.total_steps is unresolved")
    if schedule.kind == CONSTANT:
        return schedule.constant_alpha
    frac = min(t, T) / T
    if schedule.kind == LINEAR:
        return frac
    return 1.0 - frac


def draw_pair_kind(schedule: CurriculumSchedule, t: int, rng) -> str:
    """HARD with probability alpha(t), else EASY."""
    return HARD if rng.random() < alpha_at(schedule, t) else EASY


def draw_sft_target(schedule: CurriculumSchedule, t: int, rng, example, tiers):
    """(prompt, response, tier_name) for SFT curricula (ids 1 and 2).

    Id 2 emits the middle tier with probability 1-alpha(t) and the top
    tier with alpha(t); id 1 is the reverse.
    """
    if schedule.curriculum_id not in (1, 2):
        raise ConfigError("draw_sft_target needs curriculum_id 1 or 2")
    ordered = sorted(tiers, key=lambda tier: tier.rank)
    if len(ordered) < 2:
        raise ConfigError("SFT curriculum needs at least 2 tiers")
    top, middle = ordered[0], ordered[len(ordered) // 2]
    alpha = alpha_at(schedule, t)
    p_top = alpha if schedule.curriculum_id == 2 else 1.0 - alpha
    name = top.name if rng.random() < p_top else middle.name
    if name not in example.responses:
        raise DataError(f"example missing tier {name!r}")
    return example.prompt, example.responses[name], name


def _rng_state(rng) -> dict:
    return rng.bit_generator.state


def _rng_from_state(state: dict):
    rng = np.random.default_rng()
    rng.bit_generator.state = state
    return rng


class PairSampler:
    """Without-replacement pair source driven by a schedule.

    Each draw picks a kind via draw_pair_kind, then takes the next pair
    from that kind's shuffled pool; an exhausted pool reshuffles and the
    event is recorded in .events for the trainer to log.
    """

    def __init__(self, pairs_by_kind: dict, schedule: CurriculumSchedule, seed: int):
        self.pools = {k: list(v) for k, v in pairs_by_kind.items()}
        self.schedule = schedule
        self.rng = np.random.default_rng(seed)
        self.perms = {}
        self.cursors = {}
        self.events = []

    def _next_from(self, kind: str):
        pool = self.pools.get(kind) or []
        if not pool:
            raise ContractViolation(f"drew kind {kind} but its pool is empty")
        if kind not in self.perms or self.cursors[kind] >= len(pool):
            if kind in self.perms:
                self.events.append(f"reshuffled {kind} pool (epoch boundary)")
            self.perms[kind] = self.rng.permutation(len(pool)).tolist()
            self.cursors[kind] = 0
        idx = self.perms[kind][self.cursors[kind]]
        self.cursors[kind] += 1
        return pool[idx]

    def make_batch(self, t: int, batch_size: int) -> list:
        """batch_size independent kind draws at step t."""
        return [self._next_from(draw_pair_kind(self.schedule, t, self.rng))
                for _ in range(batch_size)]

    def state_dict(self) -> dict:
        return {
            "rng": _rng_state(self.rng),
            "perms": {k: list(v) for k, v in self.perms.items()},
            "cursors": dict(self.cursors),
        }

    def load_state_dict(self, state: dict):
        self.rng = _rng_from_state(state["rng"])
        self.perms = {k: list(v) for k, v in state["perms"].items()}
        self.cursors = {k: int(v) for k, v in state["cursors"].items()}
        self.events = []


class SftSampler:
    """Without-replacement example source with fixed or scheduled targets."""

    def __init__(self, examples, tiers, seed: int,
                 fixed_tier: str | None = None,
                 schedule: CurriculumSchedule | None = None):
        if (fixed_tier is None) == (schedule is None):
            raise ConfigError("need exactly one of fixed_tier or schedule")
        self.examples = list(examples)
        if not self.examples:
            raise ContractViolation("no training examples")
        self.tiers = list(tiers)
        self.fixed_tier = fixed_tier
        self.schedule = schedule
        self.rng = np.random.default_rng(seed)
        self.perm = []
        self.cursor = 0
        self.events = []

    def _next_example(self):
        if not self.perm or self.cursor >= len(self.examples):
            if self.perm:
                self.events.append("reshuffled examples (epoch boundary)")
            self.perm = self.rng.permutation(len(self.examples)).tolist()
            self.cursor = 0
        ex = self.examples[self.perm[self.cursor]]
        self.cursor += 1
        return ex

    def make_batch(self, t: int, batch_size: int) -> list:
        """List of (prompt, response, tier_name) triples for step t."""
        batch = []
        for _ in range(batch_size):
            ex = self._next_example()
            if self.fixed_tier is not None:
                if self.fixed_tier not in ex.responses:
                    raise DataError(f"example missing tier {self.fixed_tier!r}")
                batch.append((ex.prompt, ex.responses[self.fixed_tier], self.fixed_tier))
            else:
                batch.append(draw_sft_target(self.schedule, t, self.rng, ex, self.tiers))
        return batch

    def state_dict(self) -> dict:
        return {"rng": _rng_state(self.rng), "perm": list(self.perm), "cursor": self.cursor}

    def load_state_dict(self, state: dict):
        self.rng = _rng_from_state(state["rng"])
        self.perm = list(state["perm"])
        self.cursor = int(state["cursor"])
        self.events = []
