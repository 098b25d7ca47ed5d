"""Control-quality metrics and per-scale frequency diagnostics."""

from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass

import numpy as np

from .errors import ShapeError
from .goals import ControlMask


@dataclass
class ControlReport:
    average_error: float        # mean keyframe L2 distance
    location_error_rate: float  # fraction of keyframes beyond the threshold
    trajectory_error: float     # 1.0 if any keyframe is beyond it, else 0.0
    per_keyframe: np.ndarray    # L2 distance per controlled frame
    vacuous: bool = False       # True when the mask selects nothing


def eval_control(motion: np.ndarray, control: ControlMask,
                 threshold: float = 0.25) -> ControlReport:
    """Score a motion against masked targets.  The threshold is in the same
    units as the motion (for normalized corpora, a fraction of the channel
    standard deviation)."""
    motion = np.asarray(motion, dtype=np.float64)
    if motion.shape != control.mask.shape:
        raise ShapeError("motion shape does not match control mask")
    frames = np.flatnonzero(control.mask.any(axis=1))
    if frames.size == 0:
        return ControlReport(0.0, 0.0, 0.0, np.zeros(0), vacuous=True)
    dists = np.array([
        np.linalg.norm((motion[t] - control.targets[t])[control.mask[t] == 1])
        for t in frames])
    misses = dists > threshold
    return ControlReport(float(dists.mean()), float(misses.mean()),
                         float(misses.any()), dists)


def stft_power(motion: np.ndarray, window: int = 32,
               hop: int | None = None) -> np.ndarray:
    """Mean magnitude-squared short-time spectrum, summed over channels.
    A window longer than the sequence shrinks to fit (with a warning)."""
    motion = np.asarray(motion, dtype=np.float64)
    T = motion.shape[0]
    if window > T:
        warnings.warn(f"window {window} longer than sequence {T}; shrunk")
        window = T
    hop = max(window // 2, 1) if hop is None else hop
    taper = np.hanning(window)[:, None]
    spectra = []
    for start in range(0, T - window + 1, hop):
        seg = motion[start:start + window] * taper
        spectra.append((np.abs(np.fft.rfft(seg, axis=0)) ** 2).sum(axis=1))
    return np.mean(spectra, axis=0)


def band_energies(motion: np.ndarray, n_bands: int = 4,
                  window: int = 32) -> np.ndarray:
    """Short-time spectral energy split into equal frequency bands (DC
    excluded)."""
    power = stft_power(motion, window)[1:]
    return np.array([b.sum() for b in np.array_split(power, n_bands)])


def high_freq_fraction(motion: np.ndarray, window: int = 32) -> float:
    """Fraction of non-DC short-time spectral energy above half the Nyquist
    rate."""
    power = stft_power(motion, window)[1:]
    total = power.sum()
    if total == 0.0:
        return 0.0
    return float(power[len(power) // 2:].sum() / total)


def scale_spectra(vqvae, motion: np.ndarray, n_bands: int = 4,
                  window: int = 32):
    """Band energies and high-frequency fraction of the reconstruction after
    each scale; row k uses scales 1..k."""
    schedule = vqvae.schedule_for(len(motion))
    tokens = vqvae.tokenize(motion)
    return token_scale_spectra(vqvae, tokens, schedule, n_bands, window)


def token_scale_spectra(vqvae, tokens, schedule, n_bands: int = 4,
                        window: int = 32):
    rows = []
    for k in range(1, schedule.num_scales + 1):
        recon = vqvae.reconstruct(tokens, schedule, upto_scale=k).data
        rows.append({"scale": k,
                     "bands": band_energies(recon, n_bands, window),
                     "high_freq_fraction": high_freq_fraction(recon, window)})
    return rows


def write_spectra_csv(path, rows, n_bands: int = 4):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["scale"] + [f"band_{i}" for i in range(n_bands)]
                        + ["high_freq_fraction"])
        for row in rows:
            writer.writerow([row["scale"]] + [f"{b:.8e}" for b in row["bands"]]
                            + [f"{row['high_freq_fraction']:.8e}"])
