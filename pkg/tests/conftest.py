from dataclasses import dataclass

import numpy as np
import pytest

from certfair.network import NetworkSpec, Parameters
from certfair.response import SensitiveDomain


@dataclass
class ToyData:
    """Minimal dataset: the trainer and evaluators only read these fields."""

    x: np.ndarray
    s: np.ndarray
    y: np.ndarray
    sensitive: SensitiveDomain

    def __len__(self):
        return len(self.y)


def toy_spec(n_features=2, hidden=(4,), n_outputs=1, n_values=2, encoding="onehot"):
    width = 1 if encoding == "signed" else n_values
    return NetworkSpec.for_features(n_features, list(hidden), n_outputs, width, encoding)


def random_params(spec, rng, scale=1.0, tie=False):
    sizes = spec.layer_sizes
    weights = [rng.normal(0.0, scale, (sizes[i + 1], sizes[i])) for i in range(spec.n_layers)]
    biases = [rng.normal(0.0, scale, sizes[i + 1]) for i in range(spec.n_layers)]
    if tie:
        start, stop = spec.sensitive_slice
        if spec.encoding == "signed":
            weights[0][:, start] = 0.0
        else:
            weights[0][:, start:stop] = weights[0][:, start:start + 1]
    return Parameters(weights, biases)


def toy_data(n=400, n_features=2, n_values=2, seed=0, encoding="onehot", separable=False):
    """Two-feature-ish classification data whose label ignores the sensitive value."""
    rng = np.random.default_rng(seed)
    x = rng.random((n, n_features))
    s = rng.integers(0, n_values, n)
    score = x @ np.linspace(1.0, -1.0, n_features) if n_features > 1 else x[:, 0] - 0.5
    if separable:
        keep = np.abs(score) > 0.1
        x, s, score = x[keep], s[keep], score[keep]
    else:
        score = score + rng.normal(0, 0.2, len(score))
    y = np.where(score > 0, 2, 1)
    values = tuple(f"v{i}" for i in range(n_values))
    return ToyData(x, s, y, SensitiveDomain(values, encoding))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
