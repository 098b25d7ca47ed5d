"""Refiner network and test-time refinement contracts."""

import numpy as np
import pytest

from cascadevq import autodiff as ad
from cascadevq.autodiff import Var
from cascadevq.errors import NumericsError
from cascadevq.goals import ControlMask, JointGoal
from cascadevq.refiner import (RefinementConfig, Refiner, RefinerTrainConfig,
                               test_time_refine, train_refiner)
from cascadevq.tokenizer import Vqvae, VqvaeConfig, train_vqvae

RNG = np.random.default_rng(6)
SMALL = VqvaeConfig(hidden=16, vocab=16, epochs=4, seed=0)


def _trained_vqvae(n=10):
    seqs = RNG.normal(size=(n, 64, 4))
    model, _ = train_vqvae(seqs, SMALL)
    return model, seqs


def test_zero_init_is_noop():
    refiner = Refiner(code_dim=4, num_scales=3, seed=0)
    emb = Var(RNG.normal(size=(5, 4)))
    assert np.all(refiner.delta(emb, 1).data == 0.0)


def test_permutation_equivariance_without_positions():
    refiner = Refiner(code_dim=4, num_scales=2, seed=0)
    refiner.out_proj.data = RNG.normal(size=refiner.out_proj.data.shape) * 0.1
    emb = RNG.normal(size=(6, 4))
    perm = RNG.permutation(6)
    direct = refiner.delta(Var(emb[perm]), 0).data
    permuted = refiner.delta(Var(emb), 0).data[perm]
    assert np.allclose(direct, permuted, atol=1e-10)


def test_train_refiner_reduces_loss_and_freezes_tokenizer(tmp_path):
    vqvae, seqs = _trained_vqvae()
    config = RefinerTrainConfig(epochs=3, lr=1e-3, seed=0)
    refiner, log = train_refiner(vqvae, seqs[:6], config)
    assert log[-1]["loss"] < log[0]["loss"]


def test_refined_reconstruction_not_worse():
    vqvae, seqs = _trained_vqvae()
    refiner, _ = train_refiner(vqvae, seqs[:8],
                               RefinerTrainConfig(epochs=5, lr=1e-3, seed=0))
    schedule = vqvae.schedule_for(64)
    held_out = seqs[8:]
    plain, refined = [], []
    for seq in held_out:
        tokens = vqvae.tokenize(seq)
        plain.append(((vqvae.reconstruct(tokens, schedule).data - seq) ** 2).mean())
        res = refiner.all_deltas(vqvae, tokens)
        refined.append(
            ((vqvae.reconstruct(tokens, schedule, residuals=res).data - seq) ** 2).mean())
    assert np.mean(refined) <= np.mean(plain)


def _keyframe_goal(seq, frames):
    control = ControlMask.keyframes(seq.shape, frames, [0, 1],
                                    seq[frames][:, :2])
    return JointGoal(control, sigma=0.1), control


def test_refinement_zero_iterations_is_noop():
    vqvae, seqs = _trained_vqvae(6)
    seq = seqs[0]
    tokens = vqvae.tokenize(seq)
    schedule = vqvae.schedule_for(64)
    goal, _ = _keyframe_goal(seq, [4, 30])
    res = test_time_refine(vqvae, tokens, schedule, goal,
                           RefinementConfig(iterations=0))
    assert all(np.all(r == 0.0) for r in res.residuals)
    assert len(res.trace) == 1


def test_refinement_improves_goal_and_reports_best():
    vqvae, seqs = _trained_vqvae(6)
    seq = seqs[0]
    tokens = vqvae.tokenize(seq)
    schedule = vqvae.schedule_for(64)
    goal, _ = _keyframe_goal(seq, [4, 30, 55])
    res = test_time_refine(vqvae, tokens, schedule, goal,
                           RefinementConfig(iterations=50, step_size=0.02))
    values = [v for _, v, _ in res.trace]
    assert res.value >= values[0]
    assert all(b >= a for a, b in zip(values, values[1:]))
    assert np.isclose(float(goal(Var(res.motion)).data), res.value)


def test_refinement_least_squares_optimum():
    # Affine "decoder": motion = residual @ W + c; quadratic goal has a
    # closed-form optimum the ascent must reach.
    rng = np.random.default_rng(0)
    W = rng.normal(size=(3, 2))
    c = rng.normal(size=2)
    target = rng.normal(size=2)

    class AffineModel:
        class config:
            latent_dim = 3
        decoder_passes = 0

        def reconstruct(self, tokens, schedule, upto_scale=None,
                        residuals=None):
            self.decoder_passes += 1
            return ad.reshape(ad.matmul(ad.reshape(residuals[0], (1, 3)),
                                        Var(W)) + Var(c), (1, 2))

    class OneScale:
        effective_lengths = (1,)

    goal = lambda m: -0.5 * ad.sum_((m - Var(target)) ** 2.0)
    res = test_time_refine(AffineModel(), None, OneScale(), goal,
                           RefinementConfig(iterations=400, step_size=0.2))
    residual, *_ = np.linalg.lstsq(W.T, target - c, rcond=None)
    reached = residual @ W + c
    assert abs(res.value - float(goal(Var(reached[None])).data)) < 1e-6


def test_refinement_early_stop():
    vqvae, seqs = _trained_vqvae(4)
    seq = seqs[0]
    tokens = vqvae.tokenize(seq)
    schedule = vqvae.schedule_for(64)
    goal, _ = _keyframe_goal(seq, [10])
    res = test_time_refine(vqvae, tokens, schedule, goal,
                           RefinementConfig(iterations=200, step_size=0.02,
                                            early_stop_tol=1e-3))
    assert res.trace[-1][0] < 200
