"""Command-line front end: corpus/model building, guided generation, and
diagnostics.

Every command accepts an optional JSON config file; explicit flags override
it.  On success a run manifest (resolved config, seed, timings, outputs) is
printed as JSON; failures print a machine-readable error object to stderr
and exit nonzero.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
import time

import numpy as np

from . import containers
from .corpus import default_specs, denormalize, generate_corpus, normalize
from .errors import CascadeError, ConfigError
from .goals import ControlMask, goal_from_spec
from .guidance import norm_comparison_instance, verify_bound
from .generate import generate
from .metrics import eval_control, scale_spectra, write_spectra_csv
from .prior import PriorConfig, SamplerConfig, train_prior
from .refiner import RefinementConfig, RefinerTrainConfig, train_refiner
from .tokenizer import DOWNSAMPLE, VqvaeConfig, train_vqvae


def _load_config(path) -> dict:
    if path is None:
        return {}
    with open(path) as fh:
        loaded = json.load(fh)
    if not isinstance(loaded, dict):
        raise ConfigError("config file must hold a JSON object")
    return loaded


def _resolve(args, defaults: dict) -> dict:
    """File config < explicit flags; argparse defaults fill the rest."""
    config = dict(defaults)
    config.update(_load_config(args.config))
    for key, value in vars(args).items():
        if key in ("command", "config", "func"):
            continue
        if value is not None:
            config[key] = value
    return config


def _manifest(command: str, config: dict, started: float, outputs: dict):
    digest = hashlib.sha256(
        json.dumps(config, sort_keys=True, default=str).encode()).hexdigest()
    print(json.dumps({"command": command, "config": config,
                      "config_sha256": digest,
                      "elapsed_seconds": round(time.time() - started, 3),
                      "outputs": outputs}, sort_keys=True, default=str))


def _tokenize_corpus(vqvae, corpus):
    seqs, labels = corpus.normalized("train")
    return [vqvae.tokenize(s) for s in seqs], labels


def cmd_make_corpus(args):
    config = _resolve(args, {"n_per_family": 40, "seed": 0})
    corpus = generate_corpus(default_specs(), int(config["n_per_family"]),
                             seed=int(config["seed"]))
    containers.save_corpus(config["out"], corpus)
    return config, {"corpus": config["out"],
                    "sequences": int(len(corpus.sequences))}


def cmd_train_vqvae(args):
    config = _resolve(args, {})
    corpus = containers.load_corpus(config["corpus"])
    model_cfg = VqvaeConfig(**{k: v for k, v in config.items()
                               if k in VqvaeConfig.__dataclass_fields__})
    seqs, _ = corpus.normalized("train")
    model, log = train_vqvae(seqs, model_cfg)
    containers.save_vqvae(config["out"], model)
    return config, {"checkpoint": config["out"],
                    "final_rec_loss": log[-1]["rec"]}


def cmd_train_prior(args):
    config = _resolve(args, {})
    corpus = containers.load_corpus(config["corpus"])
    vqvae = containers.load_vqvae(config["vqvae"])
    tokens, labels = _tokenize_corpus(vqvae, corpus)
    prior_cfg = PriorConfig(**{k: v for k, v in config.items()
                               if k in PriorConfig.__dataclass_fields__})
    model, log = train_prior(tokens, labels, vqvae.codebook, vqvae.schedule,
                             prior_cfg)
    containers.save_prior(config["out"], model)
    return config, {"checkpoint": config["out"],
                    "final_loss": log[-1]["loss"],
                    "final_accuracy": log[-1]["accuracy"]}


def cmd_train_refiner(args):
    config = _resolve(args, {})
    corpus = containers.load_corpus(config["corpus"])
    vqvae = containers.load_vqvae(config["vqvae"])
    seqs, _ = corpus.normalized("train")
    ref_cfg = RefinerTrainConfig(**{k: v for k, v in config.items()
                                    if k in
                                    RefinerTrainConfig.__dataclass_fields__})
    model, log = train_refiner(vqvae, seqs, ref_cfg)
    containers.save_refiner(config["out"], model)
    return config, {"checkpoint": config["out"],
                    "final_loss": log[-1]["loss"]}


def _generation_pieces(config):
    vqvae = containers.load_vqvae(config["vqvae"])
    prior = containers.load_prior(config["prior"])
    refiner = (containers.load_refiner(config["refiner"])
               if config.get("refiner") else None)
    sampler = SamplerConfig(cfg_weight=float(config["cfg_weight"]),
                            seed=int(config["seed"]))
    return vqvae, prior, refiner, sampler


def _write_motion(config, result):
    motion = result.motion
    if config.get("corpus"):
        corpus = containers.load_corpus(config["corpus"])
        motion = denormalize(motion, corpus.mean, corpus.std)
    np.save(config["out"], motion)
    return motion


def cmd_generate(args):
    config = _resolve(args, {"label": 0, "target_len": 16, "seed": 0,
                             "cfg_weight": 5.0})
    vqvae, prior, refiner, sampler = _generation_pieces(config)
    frames = int(config["target_len"]) * DOWNSAMPLE
    result = generate(vqvae, prior, int(config["label"]), frames, sampler,
                      refiner=refiner)
    _write_motion(config, result)
    return config, {"motion": config["out"],
                    "frames": int(result.motion.shape[0]),
                    "token_lengths": [int(len(z))
                                      for z in result.tokens.scales]}


def cmd_control(args):
    config = _resolve(args, {"label": 0, "target_len": 16, "seed": 0,
                             "cfg_weight": 5.0, "mode": "first_order",
                             "iters": 200, "step": 0.01})
    vqvae, prior, refiner, sampler = _generation_pieces(config)
    frames = int(config["target_len"]) * DOWNSAMPLE
    with open(config["goal"]) as fh:
        spec = json.load(fh)
    goal = goal_from_spec(spec, (frames, vqvae.config.motion_dim))
    refine = RefinementConfig(iterations=int(config["iters"]),
                              step_size=float(config["step"]))
    result = generate(vqvae, prior, int(config["label"]), frames, sampler,
                      goal=goal, mode=config["mode"], refiner=refiner,
                      refine_config=refine)
    _write_motion(config, result)
    return config, {"motion": config["out"],
                    "goal_value": result.refinement.value,
                    "decoder_passes": result.decoder_passes}


def cmd_eval_control(args):
    config = _resolve(args, {"threshold": 0.25})
    motion = np.load(config["motion"])
    with open(config["goal"]) as fh:
        spec = json.load(fh)
    joint = [e for e in spec["terms"] if e["type"] == "joint"]
    if not joint:
        raise ConfigError("eval-control needs a joint goal term")
    entry = joint[0]
    control = ControlMask.keyframes(motion.shape, entry["frames"],
                                    entry["channels"],
                                    np.asarray(entry["targets"]))
    report = eval_control(motion, control, float(config["threshold"]))
    return config, {"average_error": report.average_error,
                    "location_error_rate": report.location_error_rate,
                    "trajectory_error": report.trajectory_error}


def cmd_check_bound(args):
    config = _resolve(args, {"instances": 100, "seed": 0, "vocab": 16,
                             "dim": 6})
    violations = 0
    worst = 0.0
    for i in range(int(config["instances"])):
        rng = np.random.default_rng(int(config["seed"]) + i)
        B = rng.normal(size=(int(config["dim"]), int(config["dim"])))
        report = verify_bound(
            rng.normal(size=(int(config["vocab"]), int(config["dim"]))),
            rng.dirichlet(np.ones(int(config["vocab"]))),
            B @ B.T / int(config["dim"]), rng.normal(size=int(config["dim"])))
        violations += 0 if report.satisfied else 1
        worst = max(worst, report.kl - report.bound_mean)
    return config, {"instances": int(config["instances"]),
                    "violations": violations, "worst_gap": worst,
                    "exit_code": 0 if violations == 0 else 1}


def cmd_kl_diag(args):
    config = _resolve(args, {"instances": 50, "seed": 0, "vocab": 16,
                             "dim": 6})
    pairs = np.array([
        norm_comparison_instance(np.random.default_rng(int(config["seed"]) + i),
                                 int(config["vocab"]), int(config["dim"]))
        for i in range(int(config["instances"]))])
    return config, {"mean_kl_normalized": float(pairs[:, 0].mean()),
                    "mean_kl_raw": float(pairs[:, 1].mean())}


def cmd_spectrogram(args):
    config = _resolve(args, {"index": 0})
    vqvae = containers.load_vqvae(config["vqvae"])
    corpus = containers.load_corpus(config["corpus"])
    seqs, _ = corpus.normalized("val")
    rows = scale_spectra(vqvae, seqs[int(config["index"])])
    write_spectra_csv(config["out"], rows)
    return config, {"csv": config["out"],
                    "high_freq_fractions": [row["high_freq_fraction"]
                                            for row in rows]}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="cascadevq",
        description="Multi-scale residual tokenization with guided sampling")
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, fn, *flags):
        p = sub.add_parser(name)
        p.add_argument("--config", help="JSON config file")
        for flag, kwargs in flags:
            p.add_argument(flag, **kwargs)
        p.set_defaults(func=fn)
        return p

    out = ("--out", {"required": True})
    seed = ("--seed", {"type": int})
    corpus = ("--corpus", {})
    vq = ("--vqvae", {"required": True})
    add("make-corpus", cmd_make_corpus, out, seed,
        ("--n-per-family", {"type": int, "dest": "n_per_family"}))
    add("train-vqvae", cmd_train_vqvae, out, seed,
        ("--corpus", {"required": True}), ("--epochs", {"type": int}),
        ("--lr", {"type": float}))
    add("train-prior", cmd_train_prior, out, seed,
        ("--corpus", {"required": True}), vq, ("--epochs", {"type": int}),
        ("--lr", {"type": float}))
    add("train-refiner", cmd_train_refiner, out, seed,
        ("--corpus", {"required": True}), vq, ("--epochs", {"type": int}),
        ("--lr", {"type": float}))
    add("generate", cmd_generate, out, seed, vq, corpus,
        ("--prior", {"required": True}), ("--refiner", {}),
        ("--label", {"type": int}),
        ("--target-len", {"type": int, "dest": "target_len"}),
        ("--cfg-weight", {"type": float, "dest": "cfg_weight"}))
    add("control", cmd_control, out, seed, vq, corpus,
        ("--prior", {"required": True}), ("--refiner", {}),
        ("--goal", {"required": True}),
        ("--mode", {"choices": ["off", "first_order", "exact"]}),
        ("--label", {"type": int}),
        ("--target-len", {"type": int, "dest": "target_len"}),
        ("--cfg-weight", {"type": float, "dest": "cfg_weight"}),
        ("--iters", {"type": int}), ("--step", {"type": float}))
    add("eval-control", cmd_eval_control,
        ("--motion", {"required": True}), ("--goal", {"required": True}),
        ("--threshold", {"type": float}))
    add("check-bound", cmd_check_bound, seed,
        ("--instances", {"type": int}), ("--vocab", {"type": int}),
        ("--dim", {"type": int}))
    add("kl-diag", cmd_kl_diag, seed,
        ("--instances", {"type": int}), ("--vocab", {"type": int}),
        ("--dim", {"type": int}))
    add("spectrogram", cmd_spectrogram, out,
        ("--corpus", {"required": True}), vq,
        ("--index", {"type": int}))
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    started = time.time()
    try:
        config, outputs = args.func(args)
    except CascadeError as exc:
        print(json.dumps({"error": exc.code, "message": str(exc)}),
              file=sys.stderr)
        return 2
    except OSError as exc:
        print(json.dumps({"error": "io", "message": str(exc)}),
              file=sys.stderr)
        return 2
    code = int(outputs.pop("exit_code", 0))
    _manifest(args.command, config, started, outputs)
    return code


if __name__ == "__main__":
    sys.exit(main())
