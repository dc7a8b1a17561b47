"""
Closed-form noise prediction for Gaussian mixture worlds.

analytic_epsilon is the sandbox's eps_theta: the exact posterior noise
E[eps | x_t] of the effective mixture selected by a Condition. The adapter
blend lifts image-prompt residual injection into noise space, and
dual_attention keeps the literal two-branch attention formula for unit tests.
quadrature_epsilon is an independent oracle used only for validation.
"""

from typing import Optional, Tuple

import numpy as np
from scipy import linalg
from scipy.special import logsumexp, softmax
from scipy.stats import multivariate_normal

from core.schedule import NoiseSchedule, check_step
from core.world import (
    GmmWorld,
    as_batch,
    effective_members,
    log_joint,
    noised_mixture,
    resolve_identity,
    whitened_residuals,
)
from sandbox_types import Condition, DenoiserOutput
from sandbox_types.errors import DimensionError, SandboxValidationError, UnknownConditionError


def _denoiser_output(x: np.ndarray, eps: np.ndarray, alpha_bar: float, single: bool) -> DenoiserOutput:
    x0 = (x - np.sqrt(1.0 - alpha_bar) * eps) / np.sqrt(alpha_bar)
    if single:
        return DenoiserOutput(eps_hat=eps[0], x0_hat=x0[0])
    return DenoiserOutput(eps_hat=eps, x0_hat=x0)


def _validate_leakage(leakage: float):
    if not np.isfinite(leakage) or not 0.0 <= leakage < 1.0:
        raise SandboxValidationError(f"identity leakage must lie in [0, 1), got {leakage}")


def _leaky_members(w: GmmWorld, c: Condition, leakage: float) -> Tuple[Tuple[int, ...], Optional[np.ndarray]]:
    """
    Members and per-member log weight offsets of a leaky identity restriction.

    Components of the conditioning identity keep their weight; every other
    component of the attribute-restricted mixture is scaled by leakage.
    With leakage 0 or a null identity this is the plain effective mixture
    and the offsets are None.
    """
    _validate_leakage(leakage)
    members = effective_members(w, c)
    if c.identity is None or leakage == 0.0:
        return members, None
    label = resolve_identity(w, c.identity)
    members = effective_members(w, c.null_identity())
    foreign = w.identity_labels[list(members)] != label
    return members, np.where(foreign, np.log(leakage), 0.0)


def analytic_epsilon(w: GmmWorld, s: NoiseSchedule, x, t: int, c: Condition,
                     leakage: float = 0.0) -> DenoiserOutput:
    """
    Exact noise prediction at (x, t) under condition c.

    eps_hat = -sqrt(1 - alpha_bar_t) * grad log p_t(x), where p_t is the
    effective mixture convolved with the forward noise. Responsibilities are
    softmax-normalized log joints; covariance solves go through Cholesky.

    Args:
        w: World
        s: Noise schedule
        x: Point (d,) or batch (n, d)
        t: Step index, 1 <= t <= T
        c: Condition selecting the effective mixture
        leakage: Weight factor for components of other identities when c
            names one; 0 is the hard restriction

    Returns:
        DenoiserOutput with the same leading shape as x
    """
    check_step(s, t, lower=1)
    batch, single = as_batch(w, x)
    alpha_bar = float(s.alpha_bar[t])
    members, offsets = _leaky_members(w, c, leakage)
    mixture = noised_mixture(w, alpha_bar, members)

    whitened = whitened_residuals(mixture, batch)
    joint = log_joint(mixture, whitened)
    if offsets is not None:
        joint = joint + offsets[None, :]
    responsibilities = softmax(joint, axis=1)

    # sum_k r_k C_k^{-1} (x - m_k) = -grad log p_t(x)
    neg_score = np.zeros_like(batch)
    for k in range(len(mixture.members)):
        precision_residual = linalg.solve_triangular(mixture.chols[k], whitened[k], lower=True, trans="T")
        neg_score += responsibilities[:, k:k + 1] * precision_residual.T

    eps = np.sqrt(1.0 - alpha_bar) * neg_score
    return _denoiser_output(batch, eps, alpha_bar, single)


def _quadrature_members(w: GmmWorld, c: Condition, leakage: float) -> Tuple[np.ndarray, np.ndarray]:
    _validate_leakage(leakage)
    attribute = _attribute_mask(w, c)
    own = np.ones(w.size, dtype=bool)
    if c.identity is not None:
        own = w.identity_labels == resolve_identity(w, c.identity)
    if not (own & attribute).any():
        raise UnknownConditionError("no component carries the requested identity and attribute")
    members = np.flatnonzero(attribute if leakage > 0.0 else own & attribute)
    factors = np.where(own[members], 1.0, leakage)
    return members, factors


def _attribute_mask(w: GmmWorld, c: Condition) -> np.ndarray:
    if c.attribute is None:
        return np.ones(w.size, dtype=bool)
    if c.attribute not in w.attributes:
        raise UnknownConditionError(f"unknown attribute label {c.attribute}")
    return w.attribute_labels == c.attribute


def quadrature_epsilon(w: GmmWorld, s: NoiseSchedule, x, t: int, c: Condition,
                       leakage: float = 0.0) -> DenoiserOutput:
    """
    Validation oracle for analytic_epsilon.

    Integrates the Gaussian posterior over x_0 component by component: each
    component contributes its posterior mean
    mu_k + a Sigma_k C_k^{-1} (x - a mu_k) weighted by its responsibility,
    and eps follows from E[x_0 | x]. Leaked components enter with their
    weight scaled by leakage.
    """
    check_step(s, t, lower=1)
    batch, single = as_batch(w, x)
    alpha_bar = float(s.alpha_bar[t])
    a = np.sqrt(alpha_bar)
    members, factors = _quadrature_members(w, c, leakage)

    log_terms = np.empty((batch.shape[0], members.size), dtype=np.float64)
    posterior_means = np.empty((members.size,) + batch.shape, dtype=np.float64)
    for column, k in enumerate(members):
        mean_t = a * w.means[k]
        cov_t = alpha_bar * w.covs[k] + (1.0 - alpha_bar) * np.eye(w.dim)
        log_terms[:, column] = np.log(w.weights[k] * factors[column]) + np.atleast_1d(
            multivariate_normal.logpdf(batch, mean=mean_t, cov=cov_t)
        )
        gain = np.linalg.solve(cov_t, (batch - mean_t).T)
        posterior_means[column] = w.means[k] + (a * w.covs[k] @ gain).T

    weights = np.exp(log_terms - logsumexp(log_terms, axis=1, keepdims=True))
    x0_mean = np.einsum("nk,knd->nd", weights, posterior_means)
    eps = (batch - a * x0_mean) / np.sqrt(1.0 - alpha_bar)
    return _denoiser_output(batch, eps, alpha_bar, single)


def adapter_epsilon(w: GmmWorld, s: NoiseSchedule, x, t: int, c: Condition, lambda_ipa: float,
                    uncond: Optional[DenoiserOutput] = None, leakage: float = 0.0) -> DenoiserOutput:
    """
    Identity-adapter blend eps_uncond + lambda_ipa * (eps_cond - eps_uncond).

    eps_uncond drops the identity from c (attribute kept); eps_cond uses c as
    given, with other identities leaking in at weight factor leakage.
    lambda_ipa = 0 returns the unconditional prediction and lambda_ipa = 1
    the conditional one. A precomputed unconditional output
    may be passed to avoid evaluating it twice.
    """
    if not np.isfinite(lambda_ipa) or lambda_ipa < 0:
        raise SandboxValidationError(f"lambda_ipa must be >= 0, got {lambda_ipa}")
    if uncond is None:
        uncond = analytic_epsilon(w, s, x, t, c.null_identity())
    if c.identity is None or lambda_ipa == 0.0:
        return uncond
    cond = analytic_epsilon(w, s, x, t, c, leakage)
    if lambda_ipa == 1.0:
        return cond

    batch, single = as_batch(w, x)
    eps_u = np.atleast_2d(uncond.eps_hat)
    eps = eps_u + lambda_ipa * (np.atleast_2d(cond.eps_hat) - eps_u)
    return _denoiser_output(batch, eps, float(s.alpha_bar[t]), single)


def _attention(Q: np.ndarray, K: np.ndarray, V: np.ndarray) -> np.ndarray:
    scores = Q @ K.T / np.sqrt(Q.shape[-1])
    return softmax(scores, axis=-1) @ V


def dual_attention(Q, K, V, K2, V2, lambda_ipa: float) -> np.ndarray:
    """
    Decoupled cross-attention: Attn(Q, K, V) + lambda_ipa * Attn(Q, K2, V2).

    Args:
        Q: Queries (q, d)
        K, V: Text-branch keys (k, d) and values (k, v)
        K2, V2: Image-prompt keys (k2, d) and values (k2, v)
        lambda_ipa: Image-prompt scale

    Returns:
        Attention output (q, v)
    """
    Q, K, V, K2, V2 = (np.atleast_2d(np.asarray(m, dtype=np.float64)) for m in (Q, K, V, K2, V2))
    if K.shape[1] != Q.shape[1] or K2.shape[1] != Q.shape[1]:
        raise DimensionError(f"key width must match query width {Q.shape[1]}, got {K.shape[1]} and {K2.shape[1]}")
    if K.shape[0] != V.shape[0] or K2.shape[0] != V2.shape[0]:
        raise DimensionError("each key matrix needs one value row per key")
    if V.shape[1] != V2.shape[1]:
        raise DimensionError(f"value widths differ: {V.shape[1]} vs {V2.shape[1]}")

    base = _attention(Q, K, V)
    if lambda_ipa == 0:
        return base
    return base + lambda_ipa * _attention(Q, K2, V2)
