"""Provably fair parameter initialisations and the draw-then-verify loop."""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .network import NetworkSpec, Parameters
from .verify import InputDomain, Verdict, verify


class InitializationError(RuntimeError):
    """No verified initialisation within the attempt budget."""

    def __init__(self, message: str, verdict: Verdict, attempts: int):
        super().__init__(message)
        self.verdict = verdict
        self.attempts = attempts


@dataclass(frozen=True)
class InitConfig:
    scheme: str = "bernoulli"
    constant: float = 0.0
    p_init: float = 0.5
    phi: float = -10.0
    seed: int = 0
    tie_groups: bool = True

    def __post_init__(self):
        if self.scheme not in ("zero", "bernoulli"):
            raise ValueError(f"unknown init scheme {self.scheme!r}")
        if not 0.0 < self.p_init < 1.0:
            raise ValueError("p_init must lie in (0, 1)")
        if self.phi > 0:
            raise ValueError("phi must be <= 0")

    @property
    def magnitude(self) -> float:
        return math.exp(self.phi)


def zero_init(spec: NetworkSpec, c: float = 0.0) -> Parameters:
    """All weights 0 and all biases ``c``: every logit equals ``c`` everywhere."""
    sizes = spec.layer_sizes
    return Parameters([np.zeros((sizes[i + 1], sizes[i])) for i in range(spec.n_layers)],
                      [np.full(sizes[i + 1], float(c)) for i in range(spec.n_layers)])


def bernoulli_init(spec: NetworkSpec, config: InitConfig) -> Parameters:
    """Weights ``+e^phi`` with probability ``p_init``, else ``-e^phi``; biases 0.

    With ``tie_groups`` the one-hot sensitive block of every first-layer
    neuron gets a single shared draw, and a signed sensitive column is set
    to 0, so the structural certificate holds from the outset.
    """
    rng = np.random.default_rng(config.seed)
    mag = config.magnitude
    sizes = spec.layer_sizes
    weights = []
    for i in range(spec.n_layers):
        draw = rng.random((sizes[i + 1], sizes[i])) < config.p_init
        weights.append(np.where(draw, mag, -mag))
    if config.tie_groups:
        start, stop = spec.sensitive_slice
        if spec.encoding == "signed":
            weights[0][:, start] = 0.0
        else:
            weights[0][:, start:stop] = weights[0][:, start:start + 1]
    biases = [np.zeros(sizes[i + 1]) for i in range(spec.n_layers)]
    return Parameters(weights, biases)


@dataclass
class InitResult:
    params: Parameters
    verdict: Verdict
    attempts: int

    def __iter__(self):
        return iter((self.params, self.verdict, self.attempts))

    def report_row(self, dataset: str = "", accuracy: float | None = None) -> dict:
        return self.verdict.report_row(dataset, accuracy)


def init_until_verified(spec: NetworkSpec, config: InitConfig, domain: InputDomain,
                        max_partitions: int = 10_000, max_seconds: float = 60.0,
                        max_attempts: int = 10, use_certificate: bool = True) -> InitResult:
    """Draw initialisations until one verifies as individually fair.

    Attempt ``k`` (0-based) reseeds with ``config.seed + k``.  Raises
    :class:`InitializationError` carrying the last verdict once
    ``max_attempts`` draws have failed.
    """
    if max_attempts < 1:
        raise ValueError("max_attempts must be >= 1")
    verdict = None
    for attempt in range(max_attempts):
        if config.scheme == "zero":
            params = zero_init(spec, config.constant)
        else:
            params = bernoulli_init(spec, replace(config, seed=config.seed + attempt))
        verdict = verify(spec, params, domain, max_partitions, max_seconds,
                         use_certificate=use_certificate)
        if verdict.verified:
            return InitResult(params, verdict, attempt + 1)
    raise InitializationError(
        f"no verified initialisation after {max_attempts} attempts (last: {verdict.tag})",
        verdict, max_attempts)

