"""Tiny decoder-only transformer exposing exact sequence log-probabilities.

Pre-norm, learned positional embeddings, GELU MLP, no biases on the
projections. Everything runs on the autodiff Tensor, so seq_logprob is
differentiable w.r.t. the parameters.
"""

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ContractViolation


class ModelConfig:
    """Architecture hyperparameters; desk-scale bounds are enforced."""

    def __init__(self, vocab_size=14, context_len=32, n_layers=2, d_model=32, n_heads=4, seed=0):
        if vocab_size < 1 or context_len < 1 or n_layers < 1 or d_model < 1 or n_heads < 1:
            raise ContractViolation("ModelConfig fields must be positive")
        if d_model % n_heads != 0:
            raise ContractViolation("d_model must be divisible by n_heads")
        if vocab_size > 64 or context_len > 64 or n_layers > 2 or d_model > 64:
            raise ContractViolation("config exceeds desk-scale bounds")
        self.vocab_size = vocab_size
        self.context_len = context_len
        self.n_layers = n_layers
        self.d_model = d_model
        self.n_heads = n_heads
        self.seed = seed

    def to_dict(self) -> dict:
        return {
            "vocab_size": self.vocab_size,
            "context_len": self.context_len,
            "n_layers": self.n_layers,
            "d_model": self.d_model,
            "n_heads": self.n_heads,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return cls(**d)

    def __eq__(self, other):
        return isinstance(other, ModelConfig) and self.to_dict() == other.to_dict()


def _param_shapes(cfg: ModelConfig) -> dict:
    """Parameter name -> shape; fixed order defines the checkpoint layout."""
    shapes = {
        "tok_emb": (cfg.vocab_size, cfg.d_model),
        "pos_emb": (cfg.context_len, cfg.d_model),
    }
    d = cfg.d_model
    for i in range(cfg.n_layers):
        shapes[f"layer{i}.ln1.g"] = (d,)
        shapes[f"layer{i}.ln1.b"] = (d,)
        shapes[f"layer{i}.wq"] = (d, d)
        shapes[f"layer{i}.wk"] = (d, d)
        shapes[f"layer{i}.wv"] = (d, d)
        shapes[f"layer{i}.wo"] = (d, d)
        shapes[f"layer{i}.ln2.g"] = (d,)
        shapes[f"layer{i}.ln2.b"] = (d,)
        shapes[f"layer{i}.fc1"] = (d, 4 * d)
        shapes[f"layer{i}.fc2"] = (4 * d, d)
    shapes["ln_f.g"] = (d,)
    shapes["ln_f.b"] = (d,)
    shapes["out_proj"] = (d, cfg.vocab_size)
    return shapes


class Model:
    """Trainable LM: config plus a named dict of parameter Tensors."""

    frozen = False

    def __init__(self, config: ModelConfig, params: dict):
        expected = _param_shapes(config)
        if set(params) != set(expected):
            raise ContractViolation("parameter names do not match config")
        for name, shape in expected.items():
            if params[name].data.shape != shape:
                raise ContractViolation(f"bad shape for {name}")
        self.config = config
        self.params = params

    @classmethod
    def init_random(cls, config: ModelConfig) -> "Model":
        """Gaussian std 0.02 weights, unit layer-norm gains, zero shifts."""
        rng = np.random.default_rng(config.seed)
        params = {}
        for name, shape in _param_shapes(config).items():
            if name.endswith("ln1.g") or name.endswith("ln2.g") or name == "ln_f.g":
                data = np.ones(shape)
            elif name.endswith(".b") and ("ln" in name):
                data = np.zeros(shape)
            else:
                data = rng.normal(0.0, 0.02, size=shape)
            params[name] = Tensor(data, requires_grad=True)
        return cls(config, params)

    @classmethod
    def init_zero(cls, config: ModelConfig) -> "Model":
        """All parameters zero: the predictive distribution is exactly uniform."""
        params = {
            name: Tensor(np.zeros(shape), requires_grad=True)
            for name, shape in _param_shapes(config).items()
        }
        return cls(config, params)

    def zero_grad(self):
        for p in self.params.values():
            p.zero_grad()

    def forward_logits(self, ids) -> Tensor:
        """Logits for every position of ids: (T,) int -> (T, vocab) Tensor."""
        ids = np.asarray(ids, dtype=np.int64)
        T = ids.shape[0]
        if T == 0:
            raise ContractViolation("empty input sequence")
        if T > self.config.context_len:
            raise ContractViolation("sequence longer than context_len")
        if ids.min() < 0 or ids.max() >= self.config.vocab_size:
            raise ContractViolation("token id out of range")
        p = self.params
        x = ad.add(ad.embedding(p["tok_emb"], ids), ad.embedding(p["pos_emb"], np.arange(T)))
        mask = np.triu(np.full((T, T), -1e30), k=1)  # strictly-upper = future
        n_heads = self.config.n_heads
        dh = self.config.d_model // n_heads
        scale = 1.0 / np.sqrt(dh)
        for i in range(self.config.n_layers):
            h = ad.layer_norm(x, p[f"layer{i}.ln1.g"], p[f"layer{i}.ln1.b"])
            q = ad.matmul(h, p[f"layer{i}.wq"])
            k = ad.matmul(h, p[f"layer{i}.wk"])
            v = ad.matmul(h, p[f"layer{i}.wv"])
            heads = []
            for j in range(n_heads):
                qj = ad.slice_cols(q, j * dh, (j + 1) * dh)
                kj = ad.slice_cols(k, j * dh, (j + 1) * dh)
                vj = ad.slice_cols(v, j * dh, (j + 1) * dh)
                att = ad.mul(ad.matmul(qj, ad.transpose(kj)), Tensor(scale))
                att = ad.softmax(ad.add(att, Tensor(mask)))
                heads.append(ad.matmul(att, vj))
            attn_out = ad.matmul(ad.concat_cols(heads), p[f"layer{i}.wo"])
            x = ad.add(x, attn_out)
            h = ad.layer_norm(x, p[f"layer{i}.ln2.g"], p[f"layer{i}.ln2.b"])
            h = ad.matmul(ad.gelu(ad.matmul(h, p[f"layer{i}.fc1"])), p[f"layer{i}.fc2"])
            x = ad.add(x, h)
        x = ad.layer_norm(x, p["ln_f.g"], p["ln_f.b"])
        return ad.matmul(x, p["out_proj"])


class ReferenceModel:
    """Frozen deep copy of a Model; log-probs match the source bit-exactly."""

    frozen = True

    def __init__(self, config: ModelConfig, params: dict):
        self.config = config
        self.params = {name: Tensor(p.data.copy()) for name, p in params.items()}

    forward_logits = Model.forward_logits


def snapshot(model) -> ReferenceModel:
    """Frozen copy; later training of the source never touches it."""
    return ReferenceModel(model.config, model.params)


def seq_logprob(model, prompt, response) -> Tensor:
    """log P(response | prompt) in nats, summed over response tokens.

    Teacher-forced: each response token is conditioned on the prompt and
    all earlier response tokens. Differentiable for a trainable Model;
    a ReferenceModel yields a constant.
    """
    prompt = list(prompt)
    response = list(response)
    if not response:
        raise ContractViolation("response must be non-empty")
    if not prompt:
        raise ContractViolation("prompt must be non-empty")
    full = prompt + response
    if len(full) > model.config.context_len:
        raise ContractViolation("prompt+response longer than context_len")
    logits = model.forward_logits(full[:-1])
    lps = ad.gather_logprobs(logits, full[1:])
    picked = ad.slice_rows(lps, len(prompt) - 1, len(full) - 1)
    return ad.tsum(picked)


def generate(model, prompt, max_new: int, mode: str = "greedy",
             temperature: float = 1.0, seed: int = 0, eos_id: int = 2) -> list:
    """Decode up to max_new tokens after prompt; stops after emitting eos_id.

    Greedy is deterministic; sample mode is deterministic given seed.
    Returns only the newly generated ids (including the EOS if produced).
    """
    prompt = list(prompt)
    if not prompt:
        raise ContractViolation("prompt must be non-empty")
    if len(prompt) >= model.config.context_len:
        raise ContractViolation("prompt length must be < context_len")
    if mode not in ("greedy", "sample"):
        raise ContractViolation(f"unknown decode mode: {mode}")
    if mode == "sample" and temperature <= 0:
        raise ContractViolation("temperature must be positive")
    rng = np.random.default_rng(seed) if mode == "sample" else None
    ids = prompt
    out = []
    for _ in range(max_new):
        logits = model.forward_logits(ids).data[-1]
        if mode == "greedy":
            tok = int(np.argmax(logits))
        else:
            z = logits / temperature
            z = z - z.max()
            probs = np.exp(z)
            probs /= probs.sum()
            tok = int(rng.choice(len(probs), p=probs))
        out.append(tok)
        ids = ids + [tok]
        if tok == eos_id or len(ids) >= model.config.context_len:
            break
    return out
