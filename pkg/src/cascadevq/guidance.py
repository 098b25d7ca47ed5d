"""Token-level Bayes guidance for categorical scale distributions.

Given per-position prior probabilities over the codebook and a goal that
scores decoded motion, the posterior over a position's token reweights the
prior by how much each candidate embedding helps the goal.  The exact
posterior needs one decoder pass per (position, candidate) pair; the
first-order variant linearizes the goal around the prior-mean embedding and
needs a single decoder forward/backward for the whole scale.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Var
from .errors import ConfigError, ContractError, NumericsError, ShapeError
from .quantize import Codebook

GUIDANCE_MODES = ("off", "first_order", "exact")


@dataclass
class GuidedDistribution:
    """Per-position categorical posterior over codebook entries."""

    log_prior: np.ndarray      # (L, V) normalized log prior
    scores: np.ndarray         # (L, V) guidance term added to the log prior
    log_posterior: np.ndarray  # (L, V) normalized log posterior
    decoder_passes: int
    mode: str
    expansion: np.ndarray | None = None  # (L, d) expansion embeddings
    gradient: np.ndarray | None = None   # (L, d) goal gradient at expansion

    @property
    def posterior(self) -> np.ndarray:
        return np.exp(self.log_posterior)


@dataclass
class BoundReport:
    """One instance of the posterior-approximation KL bound."""

    kl: float            # KL(exact || first-order at the anchor)
    bound_mean: float    # (C/2) * (E_exact + E_approx)[ ||e - a||^2 ]
    bound_sup: float     # C * max_v ||e_v - a||^2
    curvature: float     # largest Hessian eigenvalue of the goal
    max_dist_sq: float   # max_v ||e_v - a||^2

    @property
    def satisfied(self) -> bool:
        tol = 1e-12
        return (self.kl <= self.bound_mean + tol
                and self.bound_mean <= self.bound_sup + tol)


def log_normalize_rows(logw: np.ndarray) -> np.ndarray:
    """Row-wise log-normalization with max subtraction for stability."""
    shifted = logw - logw.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def _check_prior(prior_probs: np.ndarray, vocab: int) -> np.ndarray:
    p = np.asarray(prior_probs, dtype=np.float64)
    if p.ndim != 2 or p.shape[1] != vocab:
        raise ShapeError(f"prior must be (L, {vocab})")
    if np.any(p < 0) or not np.allclose(p.sum(axis=1), 1.0, atol=1e-8):
        raise ContractError("prior rows must be probability vectors")
    return p


def _log_prior(p: np.ndarray) -> np.ndarray:
    with np.errstate(divide="ignore"):
        return np.log(p)


def prior_mean_embeddings(prior_probs: np.ndarray,
                          codebook: Codebook) -> np.ndarray:
    """Expectation of the embedding under each position's prior."""
    return np.asarray(prior_probs) @ codebook.entries.data


def unguided(prior_probs: np.ndarray, codebook: Codebook) -> GuidedDistribution:
    logp = log_normalize_rows(_log_prior(_check_prior(prior_probs,
                                                      codebook.size)))
    return GuidedDistribution(logp, np.zeros_like(logp), logp, 0, "off")


def first_order_posterior(prior_probs: np.ndarray, codebook: Codebook,
                          decode_fn, normalize: bool = True,
                          anchor: np.ndarray | None = None,
                          grad_scale: float = 1.0) -> GuidedDistribution:
    """Linearized posterior from one decoder forward/backward.

    ``decode_fn`` maps a (L, d) embedding Var for this scale to the scalar
    goal log-likelihood of the decoded motion.  The expansion anchor defaults
    to the prior-mean embedding per position.  A non-finite goal value or
    gradient disables guidance for the scale (with a warning) rather than
    poisoning the samples.
    """
    p = _check_prior(prior_probs, codebook.size)
    entries = codebook.entries.data
    a = prior_mean_embeddings(p, codebook) if anchor is None \
        else np.asarray(anchor, dtype=np.float64)
    if a.shape != (p.shape[0], entries.shape[1]):
        raise ShapeError("anchor must be (L, d)")
    logp = log_normalize_rows(_log_prior(p))
    grad = None
    try:
        point = ad.parameter(a)
        value = decode_fn(point)
        grads = ad.gradients(value, [point])
        grad = grads[point] * grad_scale
        finite = np.isfinite(value.data).all() and np.isfinite(grad).all()
    except NumericsError:
        finite = False
    if not finite:
        warnings.warn("goal value or gradient non-finite; guidance skipped")
        return GuidedDistribution(logp, np.zeros_like(logp), logp, 1,
                                  "first_order", a, None)
    # score[l, v] = (e_v - a_l) . grad_l
    scores = grad @ entries.T - (a * grad).sum(axis=1, keepdims=True)
    logq = logp + scores
    if normalize:
        logq = log_normalize_rows(logq)
    return GuidedDistribution(logp, scores, logq, 1, "first_order", a, grad)


def exact_posterior(prior_probs: np.ndarray, codebook: Codebook,
                    decode_fn, anchor: np.ndarray | None = None) -> GuidedDistribution:
    """Brute-force posterior: per (position, candidate), substitute the
    candidate embedding at that position — other positions stay at the
    anchor (prior-mean) embedding — and decode.  Costs V decoder passes per
    position."""
    p = _check_prior(prior_probs, codebook.size)
    entries = codebook.entries.data
    L, V = p.shape
    a = prior_mean_embeddings(p, codebook) if anchor is None \
        else np.asarray(anchor, dtype=np.float64)
    logp = log_normalize_rows(_log_prior(p))
    scores = np.zeros((L, V))
    for l in range(L):
        for v in range(V):
            rows = a.copy()
            rows[l] = entries[v]
            scores[l, v] = float(decode_fn(Var(rows)).data)
    if not np.isfinite(scores).all():
        raise NumericsError("goal produced non-finite values in exact mode")
    return GuidedDistribution(logp, scores,
                              log_normalize_rows(logp + scores),
                              L * V, "exact", a, None)


def guided_scale_step(prior_probs: np.ndarray, codebook: Codebook,
                      decode_fn, mode: str = "first_order",
                      exact_budget: int = 50_000,
                      grad_scale: float = 1.0) -> GuidedDistribution:
    """Dispatch on guidance mode; the exact oracle refuses to run past
    ``exact_budget`` decoder passes."""
    if mode not in GUIDANCE_MODES:
        raise ConfigError(f"guidance mode must be one of {GUIDANCE_MODES}")
    if mode == "off":
        return unguided(prior_probs, codebook)
    if mode == "first_order":
        return first_order_posterior(prior_probs, codebook, decode_fn,
                                     grad_scale=grad_scale)
    cost = int(np.asarray(prior_probs).shape[0]) * codebook.size
    if cost > exact_budget:
        raise ConfigError(
            f"exact guidance needs {cost} decoder passes "
            f"(budget {exact_budget}); raise exact_budget or use first_order")
    return exact_posterior(prior_probs, codebook, decode_fn)


def kl_categorical(log_p: np.ndarray, log_q: np.ndarray) -> float:
    """KL divergence between normalized log-probability rows, summed over
    positions."""
    p = np.exp(log_p)
    diff = np.where(p > 0, log_p - log_q, 0.0)
    return float((p * diff).sum())


# ---------------------------------------------------------------------------
# Quadratic-goal bound verification


def quadratic_goal(matrix: np.ndarray, center: np.ndarray):
    """Concave quadratic goal over a single embedding row:
    log G(e) = -0.5 (e - m)^T A (e - m), with A symmetric PSD.  Returns the
    goal (Var (1, d) -> scalar Var) and its curvature bound (largest
    eigenvalue of A)."""
    A = np.asarray(matrix, dtype=np.float64)
    m = np.asarray(center, dtype=np.float64)
    if not np.allclose(A, A.T):
        raise ConfigError("quadratic goal matrix must be symmetric")
    eig = np.linalg.eigvalsh(A)
    if eig[0] < -1e-10:
        raise ConfigError("quadratic goal matrix must be PSD")

    def goal(rows: Var) -> Var:
        diff = rows - Var(m)
        return -0.5 * ad.sum_(diff * ad.matmul(diff, Var(A)))

    return goal, float(eig[-1])


def verify_bound(entries: np.ndarray, prior: np.ndarray, matrix: np.ndarray,
                 center: np.ndarray,
                 anchor: np.ndarray | None = None) -> BoundReport:
    """Check the two-sided KL bound for one position under a quadratic goal.

    KL(exact || first-order at anchor a) is bounded by
    (C/2) * (E_exact + E_approx) ||e - a||^2, which is itself bounded by
    C * max_v ||e_v - a||^2, with C the goal's curvature bound.
    """
    E = np.asarray(entries, dtype=np.float64)
    pi = np.asarray(prior, dtype=np.float64).reshape(1, -1)
    if E.ndim != 2 or pi.shape[1] != E.shape[0]:
        raise ShapeError("entries must be (V, d) with a length-V prior")
    goal, C = quadratic_goal(matrix, center)
    cb = Codebook(Var(E))
    a = (pi @ E) if anchor is None else np.asarray(anchor).reshape(1, -1)
    exact = exact_posterior(pi, cb, goal, anchor=a)
    approx = first_order_posterior(pi, cb, goal, anchor=a)
    kl = kl_categorical(exact.log_posterior, approx.log_posterior)
    dist_sq = ((E - a) ** 2).sum(axis=1)
    bound_mean = 0.5 * C * float(
        (exact.posterior[0] * dist_sq).sum()
        + (approx.posterior[0] * dist_sq).sum())
    bound_sup = C * float(dist_sq.max())
    return BoundReport(kl, bound_mean, bound_sup, C, float(dist_sq.max()))


def norm_comparison_instance(rng: np.random.Generator, vocab: int, dim: int,
                             curvature_scale: float = 1.0):
    """One paired instance for the codebook-normalization KL comparison.

    Draws raw embeddings with heterogeneous norms and the same embeddings
    projected to the unit sphere, scores both under the same random
    quadratic goal, and returns (kl_normalized, kl_raw)."""
    raw = rng.normal(size=(vocab, dim)) * rng.uniform(0.3, 3.0, size=(vocab, 1))
    unit = raw / np.linalg.norm(raw, axis=1, keepdims=True)
    B = rng.normal(size=(dim, dim))
    A = curvature_scale * (B @ B.T) / dim
    center = rng.normal(size=dim)
    prior = rng.dirichlet(np.ones(vocab))
    kl_unit = verify_bound(unit, prior, A, center).kl
    kl_raw = verify_bound(raw, prior, A, center).kl
    return kl_unit, kl_raw
