"""Shared codebook, multi-scale residual quantization, and scale scheduling.

The encoder features ``f`` of length L are approximated as a sum of per-scale
contributions: at each scale the current residual is downsampled, snapped to
the nearest codebook entry per position, brought back to full length by
linear upsampling plus a small convolution, and subtracted before moving to
the next (finer) scale.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Var
from .errors import ConfigError, ShapeError


@dataclass
class Codebook:
    """V x d embedding table shared by all scales."""

    entries: Var
    normalized: bool = False

    @property
    def size(self) -> int:
        return self.entries.data.shape[0]

    @property
    def dim(self) -> int:
        return self.entries.data.shape[1]

    def project(self):
        """Re-normalize rows to unit length (called after every update when
        the normalized flag is set)."""
        if self.normalized:
            norms = np.linalg.norm(self.entries.data, axis=1, keepdims=True)
            self.entries.data = self.entries.data / np.maximum(norms, 1e-12)

    @classmethod
    def random(cls, rng: np.random.Generator, size: int, dim: int,
               normalized: bool = False, scale: float = 1.0) -> "Codebook":
        if size < 2:
            raise ConfigError("codebook needs at least 2 entries")
        cb = cls(ad.parameter(rng.normal(0.0, scale, size=(size, dim))),
                 normalized=normalized)
        cb.project()
        return cb


@dataclass
class ScaleSchedule:
    """Per-scale latent lengths, coarse to fine."""

    base_lengths: tuple
    ratio: float = 1.0
    effective_lengths: tuple = field(default=None)

    def __post_init__(self):
        base = tuple(int(v) for v in self.base_lengths)
        if any(b < 1 for b in base):
            raise ConfigError("scale lengths must be positive")
        if any(a > b for a, b in zip(base, base[1:])):
            raise ConfigError("scale lengths must be non-decreasing")
        self.base_lengths = base
        if self.effective_lengths is None:
            self.effective_lengths = base
        else:
            self.effective_lengths = tuple(int(v) for v in self.effective_lengths)

    @property
    def num_scales(self) -> int:
        return len(self.base_lengths)

    @property
    def final_length(self) -> int:
        return self.effective_lengths[-1]


def adapt_schedule(base: ScaleSchedule, target_len: int) -> ScaleSchedule:
    """Rescale every per-scale length by target_len / final base length,
    rounding up, so the finest scale hits ``target_len`` exactly."""
    if target_len < 1:
        raise ConfigError("target_len must be >= 1")
    base_final = base.base_lengths[-1]
    # exact integer ceil of target_len * L_k / L_K
    effective = tuple(-(-target_len * lk // base_final)
                      for lk in base.base_lengths)
    return ScaleSchedule(base.base_lengths,
                         ratio=target_len / base_final,
                         effective_lengths=effective)


@dataclass
class TokenHierarchy:
    """Per-scale token index sequences, coarse to fine."""

    scales: list  # list of int arrays, scale k has length L'_k

    def __post_init__(self):
        self.scales = [np.asarray(z, dtype=np.int64) for z in self.scales]

    @property
    def num_scales(self) -> int:
        return len(self.scales)

    def validate(self, schedule: ScaleSchedule, vocab: int):
        if len(self.scales) != schedule.num_scales:
            raise ShapeError("token hierarchy scale count does not match schedule")
        for z, length in zip(self.scales, schedule.effective_lengths):
            if len(z) != length:
                raise ShapeError("token sequence length does not match schedule")
            if z.size and (z.min() < 0 or z.max() >= vocab):
                raise ShapeError("token index outside codebook range")


def nearest_code(queries: np.ndarray, codebook: Codebook) -> np.ndarray:
    """Index of the closest codebook entry per query row (ties -> lowest
    index, which is what argmin does on exact ties)."""
    q = np.atleast_2d(np.asarray(queries, dtype=np.float64))
    entries = codebook.entries.data
    if q.shape[1] != entries.shape[1]:
        raise ShapeError(f"query dim {q.shape[1]} != codebook dim "
                         f"{entries.shape[1]}")
    d2 = (q * q).sum(axis=1, keepdims=True) \
        - 2.0 * q @ entries.T + (entries * entries).sum(axis=1)
    idx = np.argmin(d2, axis=1)
    return idx if np.asarray(queries).ndim > 1 else int(idx[0])


@dataclass
class UpsampleConvs:
    """Per-scale post-upsampling convolution (kernel width 3, d -> d)."""

    weights: list  # K Vars of shape (3, d, d)
    biases: list   # K Vars of shape (d,)

    @classmethod
    def identity(cls, num_scales: int, dim: int) -> "UpsampleConvs":
        w = np.zeros((3, dim, dim))
        w[1] = np.eye(dim)
        return cls([ad.parameter(w.copy()) for _ in range(num_scales)],
                   [ad.parameter(np.zeros(dim)) for _ in range(num_scales)])

    def params(self) -> list[Var]:
        return list(self.weights) + list(self.biases)

    def apply(self, k: int, x: Var) -> Var:
        return ad.conv1d(x, self.weights[k], self.biases[k])


def scale_contribution(embeddings: Var, k: int, target_len: int,
                       upconvs: UpsampleConvs) -> Var:
    """Upsample one scale's embedding sequence to the finest length and run
    the per-scale convolution."""
    return upconvs.apply(k, ad.interp_resize(embeddings, target_len))


def encode_multiscale(features: Var, codebook: Codebook,
                      schedule: ScaleSchedule, upconvs: UpsampleConvs,
                      straight_through: bool = False,
                      max_scales: int | None = None):
    """Residual encoding loop.

    Returns (tokens, per_scale_pre_quant, per_scale_embeddings, approx)
    where ``approx`` is the cumulative feature reconstruction.  With
    ``straight_through`` the reconstruction carries encoder gradients through
    the quantization while the codebook stays out of the reconstruction path.
    """
    features = ad._lift(features)
    L = schedule.final_length
    if features.data.shape[0] != L:
        raise ShapeError(f"feature length {features.data.shape[0]} != "
                         f"final scale length {L}")
    active = schedule.num_scales if max_scales is None else max_scales
    residual = features
    tokens, pre_quant, embeds = [], [], []
    approx = None
    for k, length in enumerate(schedule.effective_lengths[:active]):
        u = ad.interp_resize(residual, length)
        z = nearest_code(u.data, codebook)
        e = codebook.entries[z]
        tokens.append(z)
        pre_quant.append(u)
        embeds.append(e)
        if straight_through:
            quantized = u + Var(e.data - u.data)
        else:
            quantized = e
        fhat_k = scale_contribution(quantized, k, L, upconvs)
        residual = residual - fhat_k
        approx = fhat_k if approx is None else approx + fhat_k
    return TokenHierarchy(tokens), pre_quant, embeds, approx


def decode_multiscale(tokens: TokenHierarchy, codebook: Codebook,
                      schedule: ScaleSchedule, upconvs: UpsampleConvs,
                      upto_scale: int | None = None,
                      residuals: list | None = None) -> Var:
    """Cumulative sum of upsampled, post-convolved code embeddings over
    scales 1..upto_scale; upto_scale=0 returns zero features.

    ``residuals`` optionally adds a continuous offset to each scale's code
    embeddings before upsampling (used by the token refiner)."""
    tokens.validate(schedule, codebook.size)
    K = schedule.num_scales
    upto = K if upto_scale is None else upto_scale
    if upto < 0 or upto > K:
        raise ShapeError(f"upto_scale must be in [0, {K}]")
    L = schedule.final_length
    approx = Var(np.zeros((L, codebook.dim)))
    for k in range(upto):
        e = codebook.entries[tokens.scales[k]]
        if residuals is not None and residuals[k] is not None:
            e = e + residuals[k]
        approx = approx + scale_contribution(e, k, L, upconvs)
    return approx
