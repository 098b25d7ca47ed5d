"""Shared test utilities: directional finite-difference gradient checks."""

import numpy as np

from cascadevq import autodiff as ad
from cascadevq.autodiff import Var


def directional_fd(fn, inputs, eps=1e-6):
    """Relative error between analytic and central-finite-difference
    directional derivatives of ``fn(*inputs) -> scalar Var`` along one random
    unit direction per input.

    Using a directional probe checks every gradient entry jointly in two
    forward passes per input.
    """
    rng = np.random.default_rng(
        int(abs(np.sum([np.sum(np.abs(x)) for x in inputs])) * 1e6) % (2**32))
    vars_ = [ad.parameter(np.asarray(x, dtype=np.float64)) for x in inputs]
    out = fn(*vars_)
    grads = ad.gradients(out, vars_)
    worst = 0.0
    for i, v in enumerate(vars_):
        u = rng.normal(size=v.data.shape)
        u /= max(np.linalg.norm(u), 1e-12)
        analytic = float((grads[v] * u).sum())
        shifted = [w.data.copy() for w in vars_]
        shifted[i] = shifted[i] + eps * u
        plus = float(fn(*[Var(s) for s in shifted]).data)
        shifted[i] = vars_[i].data - eps * u
        minus = float(fn(*[Var(s) for s in shifted]).data)
        numeric = (plus - minus) / (2 * eps)
        denom = max(abs(analytic), abs(numeric), 1e-8)
        worst = max(worst, abs(analytic - numeric) / denom)
    return worst


def away_from(x, kinks, margin=0.05):
    """Nudge values away from kink locations so subgradient choices cannot
    contaminate finite differences."""
    x = np.asarray(x, dtype=np.float64).copy()
    for k in kinks:
        close = np.abs(x - k) < margin
        x[close] = k + margin * np.sign(x[close] - k + 1e-12)
    return x
