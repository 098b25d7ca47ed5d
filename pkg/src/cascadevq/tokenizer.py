"""Temporal convolutional tokenizer: encoder, decoder, and training.

The encoder maps a (T, D) sequence to (T/4, d) latent features with two
stride-2 stages; the decoder mirrors it with linear upsampling.  Training
minimizes reconstruction + codebook + commitment terms with straight-through
gradients to the encoder, optional quantization dropout, and an optional
unit-norm projection of the codebook after every step.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Var
from .errors import NumericsError, ShapeError
from .layers import Adam
from .quantize import (Codebook, ScaleSchedule, TokenHierarchy, UpsampleConvs,
                       adapt_schedule, decode_multiscale, encode_multiscale)

DOWNSAMPLE = 4  # two stride-2 stages


def _conv_param(rng, k, c_in, c_out):
    w = ad.parameter(rng.normal(0.0, 1.0 / np.sqrt(k * c_in),
                                size=(k, c_in, c_out)))
    b = ad.parameter(np.zeros(c_out))
    return w, b


class ConvStack:
    """One side of the autoencoder: a conv in/out pair around two residual
    blocks, with stride-2 downsampling or 2x linear upsampling between."""

    def __init__(self, rng, c_io: int, hidden: int, latent: int,
                 direction: str):
        self.direction = direction
        first = c_io if direction == "down" else latent
        last = latent if direction == "down" else c_io
        self.w_in, self.b_in = _conv_param(rng, 3, first, hidden)
        self.res = [_conv_param(rng, 3, hidden, hidden) for _ in range(4)]
        self.w_out, self.b_out = _conv_param(rng, 3, hidden, last)

    def params(self) -> list[Var]:
        out = [self.w_in, self.b_in, self.w_out, self.b_out]
        for w, b in self.res:
            out += [w, b]
        return out

    def _resblock(self, x: Var, i: int) -> Var:
        w1, b1 = self.res[2 * i]
        w2, b2 = self.res[2 * i + 1]
        return x + ad.conv1d(ad.relu(ad.conv1d(x, w1, b1)), w2, b2)

    def __call__(self, x: Var) -> Var:
        h = ad.relu(ad.conv1d(x, self.w_in, self.b_in))
        for i in range(2):
            h = self._resblock(h, i)
            if self.direction == "down":
                h = h[::2]
            else:
                h = ad.interp_resize(h, 2 * h.shape[0])
        return ad.conv1d(h, self.w_out, self.b_out)


@dataclass
class VqvaeConfig:
    motion_dim: int = 4
    latent_dim: int = 16
    hidden: int = 32
    vocab: int = 64
    base_lengths: tuple = (1, 2, 4, 8, 16)
    normalized_codebook: bool = True
    beta: float = 0.02
    dropout_prob: float = 0.2
    lr: float = 2e-4
    batch_size: int = 8
    epochs: int = 60
    seed: int = 0


class Vqvae:
    """Encoder, shared codebook + per-scale convs, decoder."""

    def __init__(self, config: VqvaeConfig):
        self.config = config
        rng = np.random.default_rng(config.seed)
        self.schedule = ScaleSchedule(config.base_lengths)
        self.encoder = ConvStack(rng, config.motion_dim, config.hidden,
                                 config.latent_dim, "down")
        self.decoder = ConvStack(rng, config.motion_dim, config.hidden,
                                 config.latent_dim, "up")
        self.codebook = Codebook.random(rng, config.vocab, config.latent_dim,
                                        normalized=config.normalized_codebook)
        self.upconvs = UpsampleConvs.identity(len(config.base_lengths),
                                              config.latent_dim)
        self.decoder_passes = 0

    def params(self) -> list[Var]:
        return (self.encoder.params() + self.decoder.params()
                + self.upconvs.params() + [self.codebook.entries])

    # -- forward pieces -----------------------------------------------------

    def schedule_for(self, T: int) -> ScaleSchedule:
        if T % DOWNSAMPLE != 0:
            raise ShapeError(f"sequence length {T} not divisible by "
                             f"{DOWNSAMPLE}; crop first")
        return adapt_schedule(self.schedule, T // DOWNSAMPLE)

    def encode_features(self, motion: Var) -> Var:
        return self.encoder(motion)

    def decode_motion(self, features: Var, count: bool = True) -> Var:
        if count:
            self.decoder_passes += 1
        return self.decoder(features)

    def tokenize(self, motion: np.ndarray) -> TokenHierarchy:
        schedule = self.schedule_for(len(motion))
        f = self.encode_features(Var(motion))
        tokens, _, _, _ = encode_multiscale(f, self.codebook, schedule,
                                            self.upconvs)
        return tokens

    def reconstruct(self, tokens: TokenHierarchy, schedule: ScaleSchedule,
                    upto_scale: int | None = None,
                    residuals: list | None = None) -> Var:
        fhat = decode_multiscale(tokens, self.codebook, schedule, self.upconvs,
                                 upto_scale=upto_scale, residuals=residuals)
        return self.decode_motion(fhat)

    def forward(self, motion: np.ndarray, dropout_draw: int | None = None):
        """Full training forward: returns (tokens, reconstruction Var,
        loss terms dict of Vars)."""
        schedule = self.schedule_for(len(motion))
        K = schedule.num_scales
        active = K if dropout_draw is None else int(dropout_draw)
        if active < 1 or active > K:
            raise ShapeError(f"dropout cutoff must be in [1, {K}]")
        x = Var(np.asarray(motion, dtype=np.float64))
        f = self.encode_features(x)
        tokens, pre_quant, embeds, approx = encode_multiscale(
            f, self.codebook, schedule, self.upconvs, straight_through=True,
            max_scales=active)
        recon = self.decode_motion(approx)
        diff = recon - x
        l_rec = ad.mean(diff * diff)
        l_code = Var(0.0)
        l_commit = Var(0.0)
        for u, e in zip(pre_quant, embeds):
            cd = u.detach() - e
            md = u - e.detach()
            l_code = l_code + ad.mean(cd * cd)
            l_commit = l_commit + ad.mean(md * md)
        return tokens, recon, {"rec": l_rec, "code": l_code,
                               "commit": l_commit}

    def reconstruction_curve(self, motion: np.ndarray) -> list[float]:
        """Cumulative reconstruction MSE per scale; entry 0 is the empty-sum
        baseline (decode of zero features), entry k uses scales 1..k."""
        schedule = self.schedule_for(len(motion))
        tokens = self.tokenize(motion)
        x = np.asarray(motion, dtype=np.float64)
        curve = []
        for upto in range(schedule.num_scales + 1):
            recon = self.reconstruct(tokens, schedule, upto_scale=upto)
            curve.append(float(np.mean((recon.data - x) ** 2)))
        return curve


def train_vqvae(sequences: np.ndarray, config: VqvaeConfig,
                log_hook=None) -> tuple[Vqvae, list[dict]]:
    """Minimize the compound objective; deterministic given config.seed.

    Returns the trained model and a per-epoch loss log
    (epoch, rec, code, commit)."""
    model = Vqvae(config)
    rng = np.random.default_rng(config.seed + 1)
    opt = Adam(model.params(), lr=config.lr)
    n = len(sequences)
    K = model.schedule.num_scales
    log = []
    for epoch in range(config.epochs):
        order = rng.permutation(n)
        sums = np.zeros(3)
        used = np.zeros(model.codebook.size, dtype=bool)
        sample_pool = []
        for start in range(0, n, config.batch_size):
            batch = order[start:start + config.batch_size]
            if rng.random() < config.dropout_prob:
                cutoff = int(rng.integers(1, K + 1))
            else:
                cutoff = K
            opt.zero_grad()
            total = Var(0.0)
            for i in batch:
                tokens, _, terms = model.forward(sequences[i],
                                                 dropout_draw=cutoff)
                loss = (terms["rec"] + terms["code"]
                        + config.beta * terms["commit"])
                total = total + loss
                sums += [terms["rec"].data, terms["code"].data,
                         terms["commit"].data]
                for z in tokens.scales:
                    used[z] = True
            total = total * (1.0 / len(batch))
            if not np.isfinite(total.data):
                raise NumericsError(
                    "loss became non-finite; lower the learning rate")
            total.backward()
            opt.step()
            model.codebook.project()
            first = sequences[batch[0]]
            sample_pool.append(
                model.encode_features(Var(first)).data)
        # re-seed codebook entries unused for the whole epoch
        dead = np.flatnonzero(~used)
        if dead.size and config.lr > 0.0:
            pool = np.concatenate(sample_pool, axis=0)
            picks = rng.integers(0, len(pool), size=dead.size)
            model.codebook.entries.data[dead] = pool[picks]
            model.codebook.project()
        record = {"epoch": epoch, "rec": sums[0] / n, "code": sums[1] / n,
                  "commit": sums[2] / n}
        log.append(record)
        if log_hook is not None:
            log_hook(record)
    return model, log
