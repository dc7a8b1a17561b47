"""
Metrics Service - aggregate evaluation of anonymized batches
"""
from typing import Iterable, List, Optional, Sequence

import numpy as np
from scipy import linalg

from core.world import GmmWorld, mixture_moments, posterior_attribute, posterior_identity
from sandbox_types import GuidanceConfig, MetricsRecord, TradeoffRow
from sandbox_types.errors import DimensionError


def gaussian_w2(mean_a, cov_a, mean_b, cov_b) -> float:
    """
    Closed-form 2-Wasserstein distance between two Gaussians.

    W2^2 = ||m_a - m_b||^2 + tr(A + B - 2 (B^1/2 A B^1/2)^1/2)

    Args:
        mean_a, cov_a: First Gaussian
        mean_b, cov_b: Second Gaussian

    Returns:
        Non-negative distance
    """
    mean_a = np.atleast_1d(np.asarray(mean_a, dtype=np.float64))
    mean_b = np.atleast_1d(np.asarray(mean_b, dtype=np.float64))
    cov_a = np.atleast_2d(np.asarray(cov_a, dtype=np.float64))
    cov_b = np.atleast_2d(np.asarray(cov_b, dtype=np.float64))
    if mean_a.shape != mean_b.shape or cov_a.shape != cov_b.shape or cov_a.shape != mean_a.shape * 2:
        raise DimensionError("Gaussian moments must share one dimension")

    root_b = np.real(linalg.sqrtm(cov_b))
    # trace of (B^1/2 A B^1/2)^1/2 from the eigenvalues of the symmetric product
    product = root_b @ cov_a @ root_b
    eigenvalues = np.linalg.eigvalsh(0.5 * (product + product.T))
    cross_trace = float(np.sum(np.sqrt(np.clip(eigenvalues, 0.0, None))))
    squared = float(np.sum((mean_a - mean_b) ** 2) + np.trace(cov_a) + np.trace(cov_b) - 2.0 * cross_trace)
    return float(np.sqrt(max(squared, 0.0)))


def moment_fit(points: np.ndarray):
    """Mean and (population) covariance of a point set; a single point has zero covariance."""
    points = np.atleast_2d(np.asarray(points, dtype=np.float64))
    mean = points.mean(axis=0)
    centered = points - mean
    cov = centered.T @ centered / points.shape[0]
    return mean, cov


def chance_level(w: GmmWorld) -> float:
    """Re-identification rate of outputs drawn independently of their inputs."""
    totals = np.array([w.weights[w.identity_labels == label].sum() for label in w.identities])
    return float(np.sum(totals ** 2))


def evaluate_batch(inputs, outputs, w: GmmWorld, g: GuidanceConfig,
                   target_attributes: Optional[Sequence[int]] = None, seed: int = 0,
                   extras: Optional[dict] = None) -> MetricsRecord:
    """
    Evaluate paired inputs and anonymized outputs.

    Args:
        inputs: Input points (n, d)
        outputs: Output points (n, d), row i paired with input i
        w: World providing the identity and attribute oracles
        g: Guidance settings echoed into the record
        target_attributes: Attribute each output should carry; defaults to
                           the inputs' posterior attributes
        seed: Base seed echoed into the record
        extras: Additional named values carried on the record

    Returns:
        MetricsRecord
    """
    inputs = np.atleast_2d(np.asarray(inputs, dtype=np.float64))
    outputs = np.atleast_2d(np.asarray(outputs, dtype=np.float64))
    if inputs.shape != outputs.shape:
        raise DimensionError(f"inputs {inputs.shape} and outputs {outputs.shape} are not paired")
    if inputs.shape[0] < 1:
        raise DimensionError("metrics need at least one sample")

    identity_in, _ = posterior_identity(w, inputs)
    identity_out, _ = posterior_identity(w, outputs)
    attribute_out, _ = posterior_attribute(w, outputs)
    if target_attributes is None:
        target_attributes, _ = posterior_attribute(w, inputs)
    target_attributes = np.asarray(target_attributes, dtype=np.int64).reshape(-1)
    if target_attributes.shape[0] != inputs.shape[0]:
        raise DimensionError("need one target attribute per sample")

    out_mean, out_cov = moment_fit(outputs)
    world_mean, world_cov = mixture_moments(w)
    # distance of each output from the embedding of its input's identity
    anchors = w.embeddings[np.searchsorted(w.identities, identity_in)]
    distances = np.linalg.norm(outputs - anchors, axis=1)

    return MetricsRecord(
        reid_rate=float(np.mean(identity_out == identity_in)),
        attr_accuracy=float(np.mean(attribute_out == target_attributes)),
        quality=gaussian_w2(out_mean, out_cov, world_mean, world_cov),
        mean_identity_distance=float(np.mean(distances) / w.component_scale),
        config=g,
        n=int(inputs.shape[0]),
        seed=int(seed),
        extras=dict(extras or {}),
    )


def tradeoff_table(records: Iterable[MetricsRecord]) -> List[TradeoffRow]:
    """Trade-off rows sorted by (lambda_ipa, lambda_cfg); ties keep input order."""
    rows = [
        TradeoffRow(config=record.config, reid_rate=record.reid_rate,
                    attr_accuracy=record.attr_accuracy, quality=record.quality)
        for record in records
    ]
    return sorted(rows, key=lambda row: (row.config.lambda_ipa, row.config.lambda_cfg))
