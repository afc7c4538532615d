"""AdamW with bias correction and the warmup learning-rate schedule."""

from dataclasses import dataclass, field

import numpy as np

from .errors import ContractViolation


@dataclass
class LrSchedule:
    """Linear ramp 0 -> base_lr over warmup_steps, then flat.

    With decay=True the rate falls linearly to 0 between warmup_steps
    and total_steps instead of staying flat.
    """

    base_lr: float
    warmup_steps: int
    total_steps: int
    decay: bool = False

    def __post_init__(self):
        if self.base_lr < 0 or self.warmup_steps < 0 or self.total_steps <= 0:
            raise ContractViolation("bad LrSchedule parameters")


def lr_at(schedule: LrSchedule, t: int) -> float:
    """Learning rate at step t; t past total_steps holds the end value."""
    if t < 0:
        raise ContractViolation("step index must be non-negative")
    if schedule.warmup_steps > 0 and t < schedule.warmup_steps:
        return schedule.base_lr * t / schedule.warmup_steps
    if not schedule.decay:
        return schedule.base_lr
    span = schedule.total_steps - schedule.warmup_steps
    if span <= 0 or t >= schedule.total_steps:
        return 0.0
    return schedule.base_lr * (schedule.total_steps - t) / span


@dataclass
class AdamW:
    """Decoupled-weight-decay Adam over a named parameter dict."""

    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.0
    step_count: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)

    def step(self, params: dict, lr: float):
        """One update in place from each param's .grad (missing grad = 0)."""
        if lr < 0:
            raise ContractViolation("lr must be non-negative")
        self.step_count += 1
        t = self.step_count
        bc1 = 1.0 - self.beta1**t
        bc2 = 1.0 - self.beta2**t
        for name, p in params.items():
            g = p.grad if p.grad is not None else np.zeros_like(p.data)
            if g.shape != p.data.shape:
                raise ContractViolation(f"grad shape mismatch for {name}")
            if name not in self.m:
                self.m[name] = np.zeros_like(p.data)
                self.v[name] = np.zeros_like(p.data)
            m = self.m[name]
            v = self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            mhat = m / bc1
            vhat = v / bc2
            p.data = p.data - lr * (mhat / (np.sqrt(vhat) + self.eps) + self.weight_decay * p.data)

    def state_dict(self) -> dict:
        """Serializable copy of hyperparameters and moment buffers."""
        return {
            "beta1": self.beta1,
            "beta2": self.beta2,
            "eps": self.eps,
            "weight_decay": self.weight_decay,
            "step_count": self.step_count,
            "m": {k: a.copy() for k, a in self.m.items()},
            "v": {k: a.copy() for k, a in self.v.items()},
        }

    def load_state_dict(self, state: dict):
        self.beta1 = float(state["beta1"])
        self.beta2 = float(state["beta2"])
        self.eps = float(state["eps"])
        self.weight_decay = float(state["weight_decay"])
        self.step_count = int(state["step_count"])
        self.m = {k: np.asarray(a, dtype=np.float64).copy() for k, a in state["m"].items()}
        self.v = {k: np.asarray(a, dtype=np.float64).copy() for k, a in state["v"].items()}
