"""
Labeled Gaussian mixture worlds.

A GmmWorld stands in for the image manifold: every component carries an
identity label (the subject) and an attribute label (the age/sex-style
attribute). The module provides sampling, the posterior classifiers used as
re-identification and attribute oracles, and the identity embedding lookup
that turns a label into the continuous conditioning vector.
"""

import json
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path
from typing import Dict, Iterator, List, Optional, Sequence, Tuple

import numpy as np
from scipy import linalg
from scipy.special import logsumexp, softmax

from config import SandboxConfig
from sandbox_types import Condition
from sandbox_types.errors import DimensionError, UnknownConditionError, WorldValidationError

WEIGHT_SUM_TOLERANCE = 1e-12
SYMMETRY_TOLERANCE = 1e-12


@dataclass(frozen=True)
class Component:
    """One Gaussian component with its (identity, attribute) labels."""
    mean: np.ndarray
    cov: np.ndarray
    weight: float
    identity: int
    attribute: int


@dataclass(frozen=True, eq=False)
class GmmWorld:
    """
    Immutable labeled Gaussian mixture.

    Instances hash by identity, which lets per-world caches key on them.
    held_out names identities that are present in the data but absent from
    the conditioning vocabulary: they have no embedding-table entry and can
    only be conditioned on through an embedding extracted from a sample.
    """
    components: Tuple[Component, ...]
    rng_seed: int = 0
    held_out: Tuple[int, ...] = ()
    dim: int = field(init=False)
    means: np.ndarray = field(init=False, repr=False)
    covs: np.ndarray = field(init=False, repr=False)
    weights: np.ndarray = field(init=False, repr=False)
    identity_labels: np.ndarray = field(init=False, repr=False)
    attribute_labels: np.ndarray = field(init=False, repr=False)
    identities: Tuple[int, ...] = field(init=False)
    attributes: Tuple[int, ...] = field(init=False)
    embeddings: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        components = tuple(self.components)
        if not components:
            raise WorldValidationError("world needs at least one component")

        means = np.array([np.asarray(c.mean, dtype=np.float64).reshape(-1) for c in components])
        dim = means.shape[1]
        covs = np.empty((len(components), dim, dim), dtype=np.float64)
        for index, component in enumerate(components):
            cov = np.asarray(component.cov, dtype=np.float64)
            if cov.shape != (dim, dim):
                raise WorldValidationError(
                    f"component {index}: covariance shape {cov.shape} does not match dimension {dim}"
                )
            if not np.allclose(cov, cov.T, rtol=0.0, atol=SYMMETRY_TOLERANCE):
                raise WorldValidationError(f"component {index}: covariance is not symmetric")
            try:
                linalg.cholesky(cov, lower=True)
            except linalg.LinAlgError:
                raise WorldValidationError(f"component {index}: covariance is not positive-definite")
            covs[index] = cov

        weights = np.array([float(c.weight) for c in components], dtype=np.float64)
        if not np.all(np.isfinite(means)):
            raise WorldValidationError("component means must be finite")
        if np.any(weights <= 0.0):
            raise WorldValidationError("every component weight must be > 0")
        if abs(weights.sum() - 1.0) > WEIGHT_SUM_TOLERANCE:
            raise WorldValidationError(f"weights must sum to 1, got {weights.sum()!r}")
        if not 0 <= int(self.rng_seed) < 2 ** 64:
            raise WorldValidationError("rng_seed must be a 64-bit unsigned integer")

        identity_labels = np.array([int(c.identity) for c in components], dtype=np.int64)
        attribute_labels = np.array([int(c.attribute) for c in components], dtype=np.int64)
        identities = tuple(int(label) for label in np.unique(identity_labels))
        attributes = tuple(int(label) for label in np.unique(attribute_labels))
        held_out = tuple(sorted({int(label) for label in self.held_out}))
        unknown = sorted(set(held_out) - set(identities))
        if unknown:
            raise WorldValidationError(f"held-out identities {unknown} do not occur in the world")
        if len(held_out) == len(identities):
            raise WorldValidationError("held_out leaves no identity in the conditioning vocabulary")

        # Identity embedding: weight-averaged mean of the identity's components
        embeddings = np.empty((len(identities), dim), dtype=np.float64)
        for row, label in enumerate(identities):
            mask = identity_labels == label
            embeddings[row] = weights[mask] @ means[mask] / weights[mask].sum()
        for row in range(len(identities)):
            gaps = np.linalg.norm(embeddings - embeddings[row], axis=1)
            gaps[row] = np.inf
            if np.any(gaps <= SandboxConfig.IDENTITY_MATCH_TOLERANCE):
                raise WorldValidationError(
                    f"identity {identities[row]} shares its embedding with another identity"
                )

        for array in (means, covs, weights, identity_labels, attribute_labels, embeddings):
            array.setflags(write=False)
        object.__setattr__(self, "components", components)
        object.__setattr__(self, "rng_seed", int(self.rng_seed))
        object.__setattr__(self, "held_out", held_out)
        object.__setattr__(self, "dim", int(dim))
        object.__setattr__(self, "means", means)
        object.__setattr__(self, "covs", covs)
        object.__setattr__(self, "weights", weights)
        object.__setattr__(self, "identity_labels", identity_labels)
        object.__setattr__(self, "attribute_labels", attribute_labels)
        object.__setattr__(self, "identities", identities)
        object.__setattr__(self, "attributes", attributes)
        object.__setattr__(self, "embeddings", embeddings)

    @classmethod
    def from_arrays(cls, means, covs, weights, identities, attributes, rng_seed: int = 0,
                    held_out: Sequence[int] = ()) -> "GmmWorld":
        means = np.atleast_2d(np.asarray(means, dtype=np.float64))
        covs = np.asarray(covs, dtype=np.float64)
        if covs.ndim == 2:
            covs = np.broadcast_to(covs, (means.shape[0],) + covs.shape)
        components = tuple(
            Component(mean=means[k], cov=covs[k], weight=float(weights[k]),
                      identity=int(identities[k]), attribute=int(attributes[k]))
            for k in range(means.shape[0])
        )
        return cls(components=components, rng_seed=rng_seed, held_out=tuple(held_out))

    @property
    def size(self) -> int:
        return len(self.components)

    @property
    def vocabulary(self) -> Tuple[Tuple[int, int], ...]:
        """Sorted (identity, attribute) pairs available for conditioning (held-out identities excluded)."""
        pairs = {
            (identity, attribute)
            for identity, attribute in zip(self.identity_labels.tolist(), self.attribute_labels.tolist())
            if identity not in self.held_out
        }
        return tuple(sorted(pairs))

    @property
    def component_scale(self) -> float:
        """Typical component standard deviation (root mean of the per-axis variances)."""
        return float(np.sqrt(np.mean(np.trace(self.covs, axis1=1, axis2=2)) / self.dim))


@dataclass(frozen=True)
class WorldSamples:
    """Points drawn from a world with the labels of their source components."""
    points: np.ndarray
    identities: np.ndarray
    attributes: np.ndarray

    def __len__(self) -> int:
        return int(self.points.shape[0])

    def __iter__(self) -> Iterator[Tuple[np.ndarray, int, int]]:
        for point, identity, attribute in zip(self.points, self.identities, self.attributes):
            yield point, int(identity), int(attribute)


@dataclass(frozen=True)
class NoisedMixture:
    """Components of the effective mixture convolved to noise level alpha_bar."""
    members: Tuple[int, ...]
    means: np.ndarray
    chols: np.ndarray
    log_norm: np.ndarray


def build_ring_world(identities: int = SandboxConfig.WORLD_IDENTITIES,
                     attributes: int = SandboxConfig.WORLD_ATTRIBUTES,
                     radii: Optional[Sequence[float]] = None,
                     variance: float = SandboxConfig.WORLD_VARIANCE,
                     seed: int = SandboxConfig.WORLD_SEED,
                     weights: Optional[Sequence[float]] = None,
                     held_out: Sequence[int] = ()) -> GmmWorld:
    """
    Build the concentric-ring world.

    Identity k sits at angle 2*pi*k / identities; attribute a places the
    component on ring radii[a]. Components are ordered identity-major, which
    is also the order expected for explicit weights.

    Args:
        identities: Number of identity labels
        attributes: Number of attribute labels (one ring each)
        radii: Ring radius per attribute
        variance: Isotropic component variance
        seed: World rng seed (default seed for sample_world)
        weights: Optional component weights; uniform when omitted
        held_out: Identities kept out of the conditioning vocabulary

    Returns:
        Two-dimensional GmmWorld
    """
    radii = list(SandboxConfig.WORLD_RADII if radii is None else radii)
    if identities < 1 or attributes < 1:
        raise WorldValidationError("world needs at least one identity and one attribute")
    if len(radii) != attributes:
        raise WorldValidationError(f"expected {attributes} radii (one per attribute), got {len(radii)}")
    if any(radius < 0 for radius in radii):
        raise WorldValidationError("radii must be non-negative")
    if not variance > 0:
        raise WorldValidationError(f"variance must be > 0, got {variance}")

    count = identities * attributes
    if weights is None:
        weights = np.full(count, 1.0 / count)
    elif len(weights) != count:
        raise WorldValidationError(f"expected {count} weights (identities x attributes), got {len(weights)}")

    components = []
    for identity in range(identities):
        angle = 2.0 * np.pi * identity / identities
        direction = np.array([np.cos(angle), np.sin(angle)])
        for attribute in range(attributes):
            components.append(Component(
                mean=radii[attribute] * direction,
                cov=variance * np.eye(2),
                weight=float(weights[identity * attributes + attribute]),
                identity=identity,
                attribute=attribute,
            ))
    return GmmWorld(components=tuple(components), rng_seed=seed, held_out=tuple(held_out))


def sample_world(w: GmmWorld, n: int, seed: Optional[int] = None) -> WorldSamples:
    """
    Draw n labeled points, component first (categorical by weight) then Gaussian.

    The same (world, n, seed) always yields bitwise-identical samples; seed
    defaults to the world's rng_seed.
    """
    if isinstance(n, bool) or int(n) != n or n < 1:
        raise WorldValidationError(f"sample count must be >= 1, got {n!r}")
    rng = np.random.default_rng(w.rng_seed if seed is None else int(seed))
    chosen = rng.choice(w.size, size=int(n), p=w.weights)
    noise = rng.standard_normal((int(n), w.dim))
    chols = np.stack([linalg.cholesky(cov, lower=True) for cov in w.covs])
    points = w.means[chosen] + np.einsum("nij,nj->ni", chols[chosen], noise)
    return WorldSamples(
        points=points,
        identities=w.identity_labels[chosen].copy(),
        attributes=w.attribute_labels[chosen].copy(),
    )


def as_batch(w: GmmWorld, x) -> Tuple[np.ndarray, bool]:
    """Return x as an (n, d) float array and whether the input was a single vector."""
    array = np.asarray(x, dtype=np.float64)
    single = array.ndim == 1
    batch = np.atleast_2d(array)
    if batch.ndim != 2 or batch.shape[1] != w.dim:
        raise DimensionError(f"expected points of dimension {w.dim}, got shape {array.shape}")
    return batch, single


def encode_identity(w: GmmWorld, label: int) -> np.ndarray:
    """Embedding (cluster mean) of any identity in the world, vocabulary or held out."""
    try:
        row = w.identities.index(int(label))
    except ValueError:
        raise UnknownConditionError(f"unknown identity label {label}")
    return w.embeddings[row]


def identity_embedding(w: GmmWorld, label: int) -> np.ndarray:
    """Embedding-table entry of a vocabulary identity."""
    if int(label) in w.held_out:
        raise UnknownConditionError(f"identity {label} is held out of the conditioning vocabulary")
    return encode_identity(w, label)


def resolve_identity(w: GmmWorld, embedding: np.ndarray) -> int:
    """Identity label whose embedding lies within the match tolerance of `embedding`."""
    embedding = np.asarray(embedding, dtype=np.float64).reshape(-1)
    if embedding.shape != (w.dim,):
        raise DimensionError(f"identity embedding has shape {embedding.shape}, world dimension is {w.dim}")
    gaps = np.linalg.norm(w.embeddings - embedding, axis=1)
    row = int(np.argmin(gaps))
    if gaps[row] > SandboxConfig.IDENTITY_MATCH_TOLERANCE:
        raise UnknownConditionError("identity embedding does not match any identity in the world")
    return w.identities[row]


def effective_members(w: GmmWorld, c: Condition) -> Tuple[int, ...]:
    """
    Component indices of the effective mixture for a condition.

    Null identity and null attribute select every component; each set field
    restricts the mixture to matching components.
    """
    mask = np.ones(w.size, dtype=bool)
    if c.identity is not None:
        mask &= w.identity_labels == resolve_identity(w, c.identity)
    if c.attribute is not None:
        if c.attribute not in w.attributes:
            raise UnknownConditionError(f"unknown attribute label {c.attribute}")
        mask &= w.attribute_labels == c.attribute
    members = tuple(int(k) for k in np.flatnonzero(mask))
    if not members:
        raise UnknownConditionError("no component carries the requested identity and attribute")
    return members


@lru_cache(maxsize=8192)
def noised_mixture(w: GmmWorld, alpha_bar: float, members: Tuple[int, ...]) -> NoisedMixture:
    """
    Effective mixture at noise level alpha_bar.

    Component k becomes N(sqrt(alpha_bar) mu_k, alpha_bar Sigma_k + (1 - alpha_bar) I).
    """
    index = list(members)
    scale = np.sqrt(alpha_bar)
    means = scale * w.means[index]
    covs = alpha_bar * w.covs[index] + (1.0 - alpha_bar) * np.eye(w.dim)
    chols = np.stack([linalg.cholesky(cov, lower=True) for cov in covs])
    log_det_half = np.log(np.diagonal(chols, axis1=1, axis2=2)).sum(axis=1)
    log_norm = np.log(w.weights[index]) - log_det_half - 0.5 * w.dim * np.log(2.0 * np.pi)
    for array in (means, chols, log_norm):
        array.setflags(write=False)
    return NoisedMixture(members=members, means=means, chols=chols, log_norm=log_norm)


def whitened_residuals(mixture: NoisedMixture, x: np.ndarray) -> np.ndarray:
    """
    Solve L_k y = (x - m_k) for every component.

    Args:
        mixture: Noised mixture
        x: Points of shape (n, d)

    Returns:
        Array of shape (m, d, n)
    """
    whitened = np.empty((len(mixture.members), x.shape[1], x.shape[0]), dtype=np.float64)
    for k in range(len(mixture.members)):
        residual = (x - mixture.means[k]).T
        whitened[k] = linalg.solve_triangular(mixture.chols[k], residual, lower=True)
    return whitened


def log_joint(mixture: NoisedMixture, whitened: np.ndarray) -> np.ndarray:
    """log(w_k N(x; m_k, C_k)) with shape (n, m)."""
    return mixture.log_norm[None, :] - 0.5 * np.sum(whitened ** 2, axis=1).T


def component_posterior(w: GmmWorld, x) -> np.ndarray:
    """p(component | x) over all components, shape (n, K) (or (K,) for one point)."""
    batch, single = as_batch(w, x)
    mixture = noised_mixture(w, 1.0, tuple(range(w.size)))
    posterior = softmax(log_joint(mixture, whitened_residuals(mixture, batch)), axis=1)
    return posterior[0] if single else posterior


def _label_posterior(w: GmmWorld, x, component_labels: np.ndarray,
                     labels: Tuple[int, ...]) -> Tuple[np.ndarray, np.ndarray, bool]:
    batch, single = as_batch(w, x)
    mixture = noised_mixture(w, 1.0, tuple(range(w.size)))
    joint = log_joint(mixture, whitened_residuals(mixture, batch))
    grouped = np.stack(
        [logsumexp(joint[:, component_labels == label], axis=1) for label in labels], axis=1
    )
    posterior = np.exp(grouped - logsumexp(grouped, axis=1, keepdims=True))
    # np.argmax returns the first maximum, i.e. the lowest label on ties
    winners = np.asarray(labels, dtype=np.int64)[np.argmax(grouped, axis=1)]
    return winners, posterior, single


def posterior_identity(w: GmmWorld, x):
    """
    Most probable identity label of x and its posterior probability.

    Sums component posteriors per identity label; ties go to the lowest
    label. Accepts one point (returns a (label, probability) pair) or a
    batch (returns two arrays).
    """
    winners, posterior, single = _label_posterior(w, x, w.identity_labels, w.identities)
    best = posterior[np.arange(posterior.shape[0]), np.searchsorted(w.identities, winners)]
    if single:
        return int(winners[0]), float(best[0])
    return winners, best


def posterior_attribute(w: GmmWorld, x):
    """Same rule as posterior_identity over attribute labels."""
    winners, posterior, single = _label_posterior(w, x, w.attribute_labels, w.attributes)
    best = posterior[np.arange(posterior.shape[0]), np.searchsorted(w.attributes, winners)]
    if single:
        return int(winners[0]), float(best[0])
    return winners, best


def extract_identity(w: GmmWorld, x0) -> Condition:
    """
    Condition carrying the embedding of x0's most probable identity (attribute null).

    The embedding is read from the sample, so held-out identities are
    encoded like any other.
    """
    x0 = np.asarray(x0, dtype=np.float64)
    if not np.all(np.isfinite(x0)):
        raise DimensionError("input point must be finite")
    label, _ = posterior_identity(w, x0)
    return Condition(identity=encode_identity(w, label), attribute=None)


def extract_attribute(w: GmmWorld, x0) -> int:
    """Most probable attribute label of x0."""
    label, _ = posterior_attribute(w, x0)
    return label


def mixture_moments(w: GmmWorld) -> Tuple[np.ndarray, np.ndarray]:
    """Exact mean and covariance of the world marginal."""
    mean = w.weights @ w.means
    second = np.einsum("k,kij->ij", w.weights, w.covs + np.einsum("ki,kj->kij", w.means, w.means))
    cov = second - np.outer(mean, mean)
    return mean, 0.5 * (cov + cov.T)


def world_to_dict(w: GmmWorld) -> Dict:
    return {
        "dim": w.dim,
        "rng_seed": w.rng_seed,
        "held_out": list(w.held_out),
        "components": [
            {
                "mean": [float(v) for v in component.mean],
                "cov": [[float(v) for v in row] for row in np.asarray(component.cov)],
                "weight": float(component.weight),
                "identity": int(component.identity),
                "attribute": int(component.attribute),
            }
            for component in w.components
        ],
    }


def world_from_dict(data: Dict) -> GmmWorld:
    """Rebuild a world from its JSON form."""
    try:
        components = tuple(
            Component(
                mean=np.asarray(item["mean"], dtype=np.float64),
                cov=np.asarray(item["cov"], dtype=np.float64),
                weight=float(item["weight"]),
                identity=int(item["identity"]),
                attribute=int(item["attribute"]),
            )
            for item in data["components"]
        )
        world = GmmWorld(components=components, rng_seed=int(data.get("rng_seed", 0)),
                         held_out=tuple(int(label) for label in data.get("held_out", ())))
    except WorldValidationError:
        raise
    except (KeyError, TypeError, ValueError) as e:
        raise WorldValidationError(f"malformed world description: {e}")
    if "dim" in data and int(data["dim"]) != world.dim:
        raise WorldValidationError(f"declared dim {data['dim']} does not match components ({world.dim})")
    return world


def load_world_json(path) -> GmmWorld:
    with open(Path(path), "r", encoding="utf-8") as f:
        return world_from_dict(json.load(f))


def describe_world(w: GmmWorld) -> List[Dict]:
    """Per-component summary rows (used in reports and logs)."""
    return [
        {
            "component": k,
            "identity": int(w.identity_labels[k]),
            "attribute": int(w.attribute_labels[k]),
            "weight": float(w.weights[k]),
            "mean": [float(v) for v in w.means[k]],
            "in_vocabulary": (int(w.identity_labels[k]), int(w.attribute_labels[k])) in w.vocabulary,
        }
        for k in range(w.size)
    ]
