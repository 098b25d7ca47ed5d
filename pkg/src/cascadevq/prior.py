"""Coarse-to-fine autoregressive categorical model over token hierarchies.

All scales of one hierarchy are laid out as consecutive blocks of a single
transformer sequence.  A block-causal mask lets every position attend to its
own block (bidirectionally) and to all coarser blocks, so the whole token
sequence of a scale is predicted in parallel from the prefix.  The input for
block k is the previous scale's code-embedding sequence upsampled to the
block length; the first block starts from the condition embedding.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Var
from .errors import ContractError, NumericsError, ShapeError
from .layers import Adam, TransformerBlock, init_bias, init_linear
from .quantize import Codebook, ScaleSchedule, TokenHierarchy

NULL_LABEL = -1  # sentinel mapped to the last row of the condition table


@dataclass
class PriorConfig:
    vocab: int = 64
    code_dim: int = 16
    num_classes: int = 3
    width: int = 64
    n_heads: int = 4
    n_blocks: int = 2
    base_final_length: int = 16
    num_scales: int = 5
    cfg_null_fraction: float = 0.1
    lr: float = 2e-4
    epochs: int = 60
    batch_size: int = 8
    seed: int = 0


@dataclass
class SamplerConfig:
    cfg_weight: float = 5.0
    temperature: float = 1.0
    top_k: int = 0          # 0 disables the filter
    seed: int = 0

    def __post_init__(self):
        if self.temperature < 0:
            raise ContractError("temperature must be >= 0")


def block_causal_mask(lengths: list[int]) -> np.ndarray:
    """True where attention is permitted: own block plus all earlier blocks."""
    total = sum(lengths)
    mask = np.zeros((total, total), dtype=bool)
    stop = 0
    for length in lengths:
        start = stop
        stop += length
        mask[start:stop, :stop] = True
    return mask


def cfg_logits(cond: np.ndarray, uncond: np.ndarray, w: float) -> np.ndarray:
    """Classifier-free guidance: (1+w)*cond - w*uncond."""
    cond = np.asarray(cond, dtype=np.float64)
    uncond = np.asarray(uncond, dtype=np.float64)
    if cond.shape != uncond.shape:
        raise ShapeError("cfg logits shape mismatch")
    return (1.0 + w) * cond - w * uncond


class Prior:
    """Transformer over concatenated scale blocks."""

    def __init__(self, config: PriorConfig):
        self.config = config
        rng = np.random.default_rng(config.seed)
        w = config.width
        self.in_proj = init_linear(rng, config.code_dim, w)
        self.scale_emb = ad.parameter(
            rng.normal(0.0, 0.02, size=(config.num_scales, w)))
        self.pos_base = ad.parameter(
            rng.normal(0.0, 0.02, size=(config.base_final_length, w)))
        self.cond_emb = ad.parameter(
            rng.normal(0.0, 0.02, size=(config.num_classes + 1, w)))
        self.blocks = [TransformerBlock(rng, w, config.n_heads)
                       for _ in range(config.n_blocks)]
        self.ln_g = ad.parameter(np.ones(w))
        self.ln_b = init_bias(w)
        self.out_proj = init_linear(rng, w, config.vocab)
        self.out_bias = init_bias(config.vocab)

    def params(self) -> list[Var]:
        out = [self.in_proj, self.scale_emb, self.pos_base, self.cond_emb,
               self.ln_g, self.ln_b, self.out_proj, self.out_bias]
        for blk in self.blocks:
            out += blk.params()
        return out

    def _cond_row(self, label: int) -> int:
        if label == NULL_LABEL:
            return self.config.num_classes
        if not 0 <= label < self.config.num_classes:
            raise ShapeError(f"unknown condition label {label}")
        return label

    def _block_inputs(self, prefix_scales: list[np.ndarray],
                      codebook: Codebook, label: int,
                      lengths: list[int]) -> Var:
        """Inputs for blocks 1..len(lengths); prefix_scales supplies blocks
        2.. (block k reads scale k-1 tokens)."""
        row = self._cond_row(label)
        cond = self.cond_emb[[row]]
        pieces = []
        for k, length in enumerate(lengths):
            if k == 0:
                base = ad.interp_resize(cond, length)
            else:
                prev = codebook.entries[prefix_scales[k - 1]].detach()
                base = ad.interp_resize(prev, length) @ self.in_proj
            pos = ad.interp_resize(self.pos_base, length)
            block = base + pos + self.scale_emb[[k]] + cond
            pieces.append(block)
        return ad.concat(pieces, axis=0)

    def logits(self, prefix_scales: list[np.ndarray], codebook: Codebook,
               label: int, schedule: ScaleSchedule, upto: int) -> Var:
        """Per-position logits for scale ``upto`` (1-based), shape
        (L'_upto, V); runs blocks 1..upto with the block-causal mask."""
        if upto < 1 or upto > schedule.num_scales:
            raise ShapeError(f"scale index {upto} out of range")
        if len(prefix_scales) < upto - 1:
            raise ShapeError("prefix is missing scales")
        for z, length in zip(prefix_scales[:upto - 1],
                             schedule.effective_lengths):
            if len(z) != length:
                raise ShapeError("prefix length does not match schedule")
        lengths = list(schedule.effective_lengths[:upto])
        x = self._block_inputs(prefix_scales, codebook, label, lengths)
        mask = block_causal_mask(lengths)
        for blk in self.blocks:
            x = blk(x, mask)
        x = ad.layer_norm(x, self.ln_g, self.ln_b)
        logits = x @ self.out_proj + self.out_bias
        return logits[sum(lengths[:-1]):]

    def all_logits(self, tokens: TokenHierarchy, codebook: Codebook,
                   label: int, schedule: ScaleSchedule) -> Var:
        """Teacher-forced logits for every scale at once, concatenated."""
        lengths = list(schedule.effective_lengths)
        x = self._block_inputs(tokens.scales, codebook, label, lengths)
        mask = block_causal_mask(lengths)
        for blk in self.blocks:
            x = blk(x, mask)
        x = ad.layer_norm(x, self.ln_g, self.ln_b)
        return x @ self.out_proj + self.out_bias

    # -- sampling -----------------------------------------------------------

    def scale_probs(self, prefix_scales: list[np.ndarray], codebook: Codebook,
                    label: int, schedule: ScaleSchedule, k: int,
                    sampler: SamplerConfig) -> np.ndarray:
        """Guided-sampler front half: CFG-combined categorical probabilities
        for scale k, as a plain (L'_k, V) array."""
        cond = self.logits(prefix_scales, codebook, label, schedule, k).data
        if sampler.cfg_weight != 0.0:
            uncond = self.logits(prefix_scales, codebook, NULL_LABEL,
                                 schedule, k).data
            combined = cfg_logits(cond, uncond, sampler.cfg_weight)
        else:
            combined = cond
        if sampler.top_k > 0:
            kth = np.sort(combined, axis=-1)[:, -sampler.top_k][:, None]
            combined = np.where(combined >= kth, combined, -np.inf)
        if sampler.temperature == 0.0:
            probs = np.zeros_like(combined)
            probs[np.arange(len(combined)), combined.argmax(axis=-1)] = 1.0
            return probs
        z = combined / sampler.temperature
        z = z - z.max(axis=-1, keepdims=True)
        e = np.exp(z)
        return e / e.sum(axis=-1, keepdims=True)


def sample_rows(probs: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Independent categorical draw per row."""
    cdf = np.cumsum(probs, axis=-1)
    u = rng.random(len(probs))[:, None]
    return np.minimum((u > cdf[:, :-1]).sum(axis=-1), probs.shape[1] - 1)


def check_hook_rows(probs: np.ndarray):
    if not np.all(np.isfinite(probs)) or np.any(probs < -1e-12):
        raise ContractError("guidance hook produced invalid probabilities")
    if np.abs(probs.sum(axis=-1) - 1.0).max() > 1e-6:
        raise ContractError("guidance hook rows are not normalized")


def sample_hierarchy(prior: Prior, codebook: Codebook, label: int,
                     schedule: ScaleSchedule, sampler: SamplerConfig,
                     hook=None) -> TokenHierarchy:
    """Ancestral coarse-to-fine sampling; ``hook(k, probs) -> probs`` may
    reshape each scale's categorical distributions before drawing."""
    rng = np.random.default_rng(sampler.seed)
    prefix: list[np.ndarray] = []
    for k in range(1, schedule.num_scales + 1):
        probs = prior.scale_probs(prefix, codebook, label, schedule, k,
                                  sampler)
        if hook is not None:
            probs = np.asarray(hook(k, probs), dtype=np.float64)
            check_hook_rows(probs)
        prefix.append(sample_rows(probs, rng))
    return TokenHierarchy(prefix)


def train_prior(token_corpus: list[TokenHierarchy], labels: np.ndarray,
                codebook: Codebook, schedule: ScaleSchedule,
                config: PriorConfig, log_hook=None):
    """Teacher-forced cross-entropy over all scales and positions, with a
    fraction of examples trained on the null label for CFG."""
    for tokens in token_corpus:
        tokens.validate(schedule, config.vocab)
    prior = Prior(config)
    rng = np.random.default_rng(config.seed + 1)
    opt = Adam(prior.params(), lr=config.lr)
    n = len(token_corpus)
    log = []
    for epoch in range(config.epochs):
        order = rng.permutation(n)
        total_loss = 0.0
        total_correct = 0
        total_positions = 0
        for start in range(0, n, config.batch_size):
            batch = order[start:start + config.batch_size]
            opt.zero_grad()
            loss = Var(0.0)
            for i in batch:
                label = int(labels[i])
                if rng.random() < config.cfg_null_fraction:
                    label = NULL_LABEL
                tokens = token_corpus[i]
                logits = prior.all_logits(tokens, codebook, label, schedule)
                targets = np.concatenate(tokens.scales)
                logp = ad.log_softmax(logits, axis=-1)
                picked = logp[np.arange(len(targets)), targets]
                loss = loss - ad.sum_(picked)
                total_correct += int(
                    (logits.data.argmax(axis=-1) == targets).sum())
                total_positions += len(targets)
            loss = loss * (1.0 / len(batch))
            if not np.isfinite(loss.data):
                raise NumericsError(
                    "prior loss became non-finite; lower the learning rate")
            total_loss += float(loss.data) * len(batch)
            loss.backward()
            opt.step()
        record = {"epoch": epoch, "loss": total_loss / n,
                  "accuracy": total_correct / max(1, total_positions)}
        log.append(record)
        if log_hook is not None:
            log_hook(record)
    return prior, log
