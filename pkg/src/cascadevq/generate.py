"""Coarse-to-fine generation with per-scale guidance, amortized residuals,
and final test-time refinement.

Each scale is produced by reweighting the conditional prior's categorical
distributions toward the goal before drawing, so later (finer) scales see a
feature prefix already steered toward the target; the last stage polishes
the continuous embedding offsets by gradient ascent on the same goal.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Var
from .errors import ConfigError
from .guidance import GuidedDistribution, guided_scale_step
from .prior import Prior, SamplerConfig, sample_rows
from .quantize import TokenHierarchy, scale_contribution
from .refiner import RefinementConfig, RefinementResult, Refiner, \
    test_time_refine
from .tokenizer import Vqvae


@dataclass
class GenerationResult:
    tokens: TokenHierarchy
    residuals: list                      # per-scale (L'_k, d) offsets
    motion: np.ndarray                   # decoded (T, D) motion, normalized units
    guided: list                         # per-scale GuidedDistribution or None
    refinement: RefinementResult | None
    decoder_passes: dict                 # {"guidance": ..., "refinement": ...}


def generate(vqvae: Vqvae, prior: Prior, label: int, target_len: int,
             sampler: SamplerConfig, goal=None, mode: str = "off",
             refiner: Refiner | None = None,
             refine_config: RefinementConfig | None = None,
             exact_budget: int = 50_000) -> GenerationResult:
    """Sample a motion of ``target_len`` frames for a condition label.

    ``goal`` (motion Var -> scalar Var) enables token guidance when ``mode``
    is "first_order" or "exact", and test-time refinement when
    ``refine_config`` is set.  ``refiner`` adds amortized embedding offsets
    to every sampled scale.
    """
    if goal is None and (mode != "off" or refine_config is not None):
        raise ConfigError("guidance and refinement need a goal")
    schedule = vqvae.schedule_for(target_len)
    L = schedule.final_length
    entries = vqvae.codebook.entries
    rng = np.random.default_rng(sampler.seed)
    prefix: list[np.ndarray] = []
    residuals: list[np.ndarray] = []
    guided: list = []
    fhat = np.zeros((L, vqvae.config.latent_dim))
    passes_before = vqvae.decoder_passes
    for k in range(schedule.num_scales):
        probs = prior.scale_probs(prefix, vqvae.codebook, label, schedule,
                                  k + 1, sampler)
        if mode != "off":
            prefix_const = Var(fhat.copy())

            def decode_fn(emb, _k=k, _prefix=prefix_const):
                contrib = scale_contribution(emb, _k, L, vqvae.upconvs)
                return goal(vqvae.decode_motion(_prefix + contrib))

            step = guided_scale_step(probs, vqvae.codebook, decode_fn,
                                     mode=mode, exact_budget=exact_budget)
            guided.append(step)
            probs = step.posterior
        else:
            guided.append(None)
        z = sample_rows(probs, rng)
        prefix.append(z)
        emb = entries[z].detach()
        if refiner is not None:
            delta = refiner.delta(emb, k).data
        else:
            delta = np.zeros_like(emb.data)
        residuals.append(delta)
        fhat = fhat + scale_contribution(Var(emb.data + delta), k, L,
                                         vqvae.upconvs).data
    guidance_passes = vqvae.decoder_passes - passes_before
    tokens = TokenHierarchy(prefix)
    refinement = None
    if refine_config is not None:
        refinement = test_time_refine(vqvae, tokens, schedule, goal,
                                      refine_config,
                                      init_residuals=residuals)
        residuals = refinement.residuals
        motion = refinement.motion
        refine_passes = refinement.decoder_passes
    else:
        motion = vqvae.decode_motion(Var(fhat), count=False).data
        refine_passes = 0
    return GenerationResult(tokens, residuals, motion, guided, refinement,
                            {"guidance": guidance_passes,
                             "refinement": refine_passes})
