"""Inverse-entropy weighting of the four granularity channels.

For each granularity, the query's similarity scores against all memory
units are turned into a softmax distribution; the Shannon entropy of
that distribution measures how discriminative the channel is. Flat
(high-entropy) channels carry little signal for this query, so channel
weights are proportional to inverse entropy, normalized to sum to 1.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ParameterError
from .model import GRANULARITIES, Granularity

DEFAULT_TEMPERATURE = 0.2
ENTROPY_FLOOR = 1e-6


@dataclass
class GranularityScores:
    """Per-granularity similarity vectors, aligned with ``memory_ids``."""

    memory_ids: list[str]
    vectors: dict[Granularity, np.ndarray]

    def __post_init__(self):
        for granularity in GRANULARITIES:
            if granularity not in self.vectors:
                raise ParameterError(f"missing scores for granularity {granularity.value}")
            vector = np.asarray(self.vectors[granularity], dtype=np.float64)
            if vector.shape != (len(self.memory_ids),):
                raise ParameterError(
                    f"{granularity.value} scores have shape {vector.shape}, "
                    f"expected ({len(self.memory_ids)},)"
                )
            self.vectors[granularity] = vector


@dataclass(frozen=True)
class RouterWeights:
    """Normalized channel weights plus the entropies that produced them."""

    weights: dict[Granularity, float]
    entropies: dict[Granularity, float] = field(default_factory=dict)
    temperature: float = DEFAULT_TEMPERATURE

    def __post_init__(self):
        total = 0.0
        for granularity in GRANULARITIES:
            if granularity not in self.weights:
                raise ParameterError(f"missing weight for granularity {granularity.value}")
            weight = self.weights[granularity]
            if not math.isfinite(weight) or weight < 0.0:
                raise ParameterError(f"weight for {granularity.value} must be finite and >= 0")
            total += weight
        if abs(total - 1.0) > 1e-9:
            raise ParameterError(f"weights must sum to 1, got {total!r}")

    @classmethod
    def uniform(cls, temperature: float = DEFAULT_TEMPERATURE) -> "RouterWeights":
        share = 1.0 / len(GRANULARITIES)
        return cls(weights={g: share for g in GRANULARITIES}, temperature=temperature)

    @classmethod
    def one_hot(cls, granularity: Granularity | str, temperature: float = DEFAULT_TEMPERATURE) -> "RouterWeights":
        target = Granularity(granularity)
        return cls(
            weights={g: 1.0 if g is target else 0.0 for g in GRANULARITIES},
            temperature=temperature,
        )


def softmax_distribution(scores, temperature: float) -> np.ndarray:
    """Temperature-scaled softmax, computed with max subtraction."""
    if not (math.isfinite(temperature) and temperature > 0.0):
        raise ParameterError(f"temperature must be positive, got {temperature}")
    x = np.asarray(scores, dtype=np.float64)
    if x.ndim != 1 or x.size == 0:
        raise ParameterError(f"scores must be a non-empty 1-D array, got shape {x.shape}")
    if not np.all(np.isfinite(x)):
        raise ParameterError("scores contain non-finite values")
    z = x / temperature
    z = z - z.max()
    exp = np.exp(z)
    return exp / exp.sum()


def shannon_entropy(distribution) -> float:
    """Entropy in nats; zero-probability entries contribute nothing."""
    p = np.asarray(distribution, dtype=np.float64)
    if p.ndim != 1 or p.size == 0:
        raise ParameterError(f"distribution must be a non-empty 1-D array, got shape {p.shape}")
    if np.any(p < 0.0):
        raise ParameterError("distribution has negative entries")
    total = float(p.sum())
    if abs(total - 1.0) > 1e-6:
        raise ParameterError(f"distribution sums to {total!r}, expected 1")
    positive = p[p > 0.0]
    return max(float(-(positive * np.log(positive)).sum()), 0.0)


def weights_from_entropies(
    entropies: dict[Granularity, float], entropy_floor: float = ENTROPY_FLOOR
) -> dict[Granularity, float]:
    """Normalize inverse entropies into channel weights.

    Entropies are floored at ``entropy_floor`` before inversion so a
    zero-entropy (single-memory or fully peaked) channel cannot blow up;
    with every channel floored equally the weights degrade to uniform.
    """
    inverse = {g: 1.0 / max(entropies[g], entropy_floor) for g in GRANULARITIES}
    total = sum(inverse.values())
    return {g: inverse[g] / total for g in GRANULARITIES}


def route(
    scores: GranularityScores,
    temperature: float = DEFAULT_TEMPERATURE,
    entropy_floor: float = ENTROPY_FLOOR,
) -> RouterWeights:
    """Compute per-granularity weights for one query."""
    entropies = {
        g: shannon_entropy(softmax_distribution(scores.vectors[g], temperature))
        for g in GRANULARITIES
    }
    return RouterWeights(
        weights=weights_from_entropies(entropies, entropy_floor),
        entropies=entropies,
        temperature=temperature,
    )
