"""Chunk service-time distributions with closed-form moments.

The service time X is the time to move one chunk when the full aggregate
bandwidth B is available. A queue with effective bandwidth B_eff serves
chunks in X * B / B_eff.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from math import gamma as gamma_fn

import numpy as np

FAMILIES = ("deterministic", "exponential", "gamma", "chunk-over-bandwidth")


@dataclass(frozen=True)
class ServiceDistribution:
    family: str
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"unknown service family {self.family!r}")
        p = self.params
        if self.family == "deterministic":
            _positive(p, "value")
        elif self.family == "exponential":
            _positive(p, "mean")
        elif self.family == "gamma":
            _positive(p, "shape")
            _positive(p, "scale")
        else:
            _positive(p, "chunk_bits")
            _positive(p, "bandwidth")

    @classmethod
    def deterministic(cls, value):
        return cls("deterministic", {"value": float(value)})

    @classmethod
    def exponential(cls, mean):
        return cls("exponential", {"mean": float(mean)})

    @classmethod
    def gamma(cls, shape, scale):
        return cls("gamma", {"shape": float(shape), "scale": float(scale)})

    @classmethod
    def chunk_over_bandwidth(cls, chunk_bits, bandwidth):
        """Fixed-size chunk moved at a fixed reference bandwidth."""
        return cls("chunk-over-bandwidth",
                   {"chunk_bits": float(chunk_bits), "bandwidth": float(bandwidth)})

    def raw_moment(self, t: int) -> float:
        """E[X^t], computed analytically."""
        p = self.params
        if self.family == "deterministic":
            return p["value"] ** t
        if self.family == "chunk-over-bandwidth":
            return (p["chunk_bits"] / p["bandwidth"]) ** t
        if self.family == "exponential":
            return gamma_fn(t + 1) * p["mean"] ** t
        a, s = p["shape"], p["scale"]
        m = 1.0
        for j in range(t):
            m *= a + j
        return m * s ** t

    @property
    def mean(self) -> float:
        return self.raw_moment(1)

    @property
    def second_moment(self) -> float:
        return self.raw_moment(2)

    @property
    def third_moment(self) -> float:
        return self.raw_moment(3)

    @property
    def variance(self) -> float:
        return max(self.second_moment - self.mean ** 2, 0.0)

    def scaled(self, factor: float) -> "ServiceDistribution":
        """Same family with every draw multiplied by ``factor``."""
        if factor <= 0:
            raise ValueError("scale factor must be positive")
        p = dict(self.params)
        if self.family == "deterministic":
            p["value"] *= factor
        elif self.family == "exponential":
            p["mean"] *= factor
        elif self.family == "gamma":
            p["scale"] *= factor
        else:
            p["chunk_bits"] *= factor
        return ServiceDistribution(self.family, p)

    def sample(self, rng: np.random.Generator, size) -> np.ndarray:
        p = self.params
        if self.family == "deterministic":
            return np.full(size, p["value"])
        if self.family == "chunk-over-bandwidth":
            return np.full(size, p["chunk_bits"] / p["bandwidth"])
        if self.family == "exponential":
            return rng.exponential(p["mean"], size)
        return rng.gamma(p["shape"], p["scale"], size)

    def to_dict(self) -> dict:
        return {"family": self.family, **self.params}


def _positive(params, key):
    if key not in params:
        raise ValueError(f"missing service parameter {key!r}")
    if not float(params[key]) > 0:
        raise ValueError(f"service parameter {key!r} must be > 0")
