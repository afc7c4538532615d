"""Training losses: SFT NLL, SLiC hinge+regularizer, DPO.

SLiC: loss = max(0, delta - logP(y+|x) + logP(y-|x)) - lambda*logP(y_ref|x)
DPO:  r+/- = beta*(logP_theta(y|x) - logP_ref(y|x)); loss = -log sigmoid(r+ - r-)

SLiC and DPO use raw summed sequence log-probs (no length
normalization); SFT is the per-token mean so batches with mixed
response lengths stay comparable. The hinge subgradient at exactly
zero is 0 (inactive side).
"""

from dataclasses import dataclass

from . import autodiff as ad
from . import corpus
from .autodiff import Tensor
from .errors import ContractViolation
from .model import seq_logprob


@dataclass(frozen=True)
class SlicConfig:
    delta: float = 1.0
    lam: float = 1.0

    def __post_init__(self):
        if self.delta < 0 or self.lam < 0:
            raise ContractViolation("delta and lambda must be >= 0")


@dataclass(frozen=True)
class DpoConfig:
    beta: float = 0.1

    def __post_init__(self):
        if self.beta <= 0:
            raise ContractViolation("beta must be > 0")


@dataclass
class LossOutput:
    loss: Tensor
    diagnostics: dict


def _check_pair(pair):
    if pair.chosen == pair.rejected:
        raise ContractViolation("pair has chosen == rejected")


def _check_frozen(ref):
    if not getattr(ref, "frozen", False):
        raise ContractViolation("reference model must be frozen")


def sft_loss(model, prompt, response) -> LossOutput:
    """Mean per-token NLL of response ids given prompt ids; >= 0."""
    response = list(response)
    if not response:
        raise ContractViolation("response must be non-empty")
    lp = seq_logprob(model, prompt, response)
    loss = (-1.0 / len(response)) * lp
    return LossOutput(loss, {"logprob": lp.item(), "n_tokens": float(len(response))})


def slic_terms(delta: float, lam: float, lp_pos, lp_neg, lp_ref):
    """Hinge + regularizer from sequence log-probs; Tensor or float inputs."""
    lp_pos, lp_neg, lp_ref = ad.as_tensor(lp_pos), ad.as_tensor(lp_neg), ad.as_tensor(lp_ref)
    hinge = ad.relu(delta - lp_pos + lp_neg)
    loss = hinge - lam * lp_ref
    return loss, hinge


def slic_loss(model, pair, y_ref, cfg: SlicConfig) -> LossOutput:
    """SLiC on a text PreferencePair; y_ref is a pre-generated token list."""
    _check_pair(pair)
    y_ref = list(y_ref)
    if not y_ref:
        raise ContractViolation("SLiC needs a non-empty y_ref")
    prompt_ids = corpus.encode_prompt(pair.prompt)
    lp_pos = seq_logprob(model, prompt_ids, corpus.encode_response(pair.chosen))
    lp_neg = seq_logprob(model, prompt_ids, corpus.encode_response(pair.rejected))
    lp_ref = seq_logprob(model, prompt_ids, y_ref)
    loss, hinge = slic_terms(cfg.delta, cfg.lam, lp_pos, lp_neg, lp_ref)
    return LossOutput(loss, {
        "hinge": hinge.item(),
        "hinge_active": 1.0 if hinge.item() > 0 else 0.0,
        "logprob_ref": lp_ref.item(),
    })


def dpo_terms(beta: float, lp_pos, lp_neg, ref_lp_pos, ref_lp_neg):
    """(loss, r_plus, r_minus) from the four sequence log-probs."""
    lp_pos, lp_neg = ad.as_tensor(lp_pos), ad.as_tensor(lp_neg)
    ref_lp_pos, ref_lp_neg = ad.as_tensor(ref_lp_pos), ad.as_tensor(ref_lp_neg)
    r_plus = beta * (lp_pos - ref_lp_pos)
    r_minus = beta * (lp_neg - ref_lp_neg)
    loss = -ad.log_sigmoid(r_plus - r_minus)
    return loss, r_plus, r_minus


def dpo_loss(model, ref, pair, cfg: DpoConfig) -> LossOutput:
    """DPO on a text PreferencePair against a frozen reference."""
    _check_pair(pair)
    _check_frozen(ref)
    prompt_ids = corpus.encode_prompt(pair.prompt)
    chosen_ids = corpus.encode_response(pair.chosen)
    rejected_ids = corpus.encode_response(pair.rejected)
    lp_pos = seq_logprob(model, prompt_ids, chosen_ids)
    lp_neg = seq_logprob(model, prompt_ids, rejected_ids)
    ref_lp_pos = seq_logprob(ref, prompt_ids, chosen_ids)
    ref_lp_neg = seq_logprob(ref, prompt_ids, rejected_ids)
    loss, r_plus, r_minus = dpo_terms(cfg.beta, lp_pos, lp_neg, ref_lp_pos, ref_lp_neg)
    return LossOutput(loss, {
        "r_plus": r_plus.item(),
        "r_minus": r_minus.item(),
        "margin": r_plus.item() - r_minus.item(),
    })


def implied_margin(ref, pair) -> float:
    """log P_ref(y+|x) - log P_ref(y-|x): the margin the reference implies."""
    _check_pair(pair)
    _check_frozen(ref)
    prompt_ids = corpus.encode_prompt(pair.prompt)
    lp_pos = seq_logprob(ref, prompt_ids, corpus.encode_response(pair.chosen))
    lp_neg = seq_logprob(ref, prompt_ids, corpus.encode_response(pair.rejected))
    return lp_pos.item() - lp_neg.item()
