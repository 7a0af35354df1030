"""Randomized response over sensitive values and the privacy-budget solver.

A released sensitive value equals the true one with probability
``p = e^g / (e^g + |S| - 1)`` and is otherwise uniform over the remaining
values.  Every function here works on value *indices* ``0..|S|-1``; use
:meth:`SensitiveDomain.index` to map labels.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .network import NetworkSpec, Parameters, build_input, forward_inputs, input_deltas

GAMMA_MAX = 20.0
P_CEILING = 1.0 - 1e-12
P_SNAP = 1e-12


@dataclass(frozen=True)
class SensitiveDomain:
    values: tuple
    encoding: str = "onehot"

    def __post_init__(self):
        object.__setattr__(self, "values", tuple(self.values))
        if len(self.values) < 2:
            raise ValueError("a sensitive domain needs at least two values")
        if len(set(self.values)) != len(self.values):
            raise ValueError("sensitive values must be distinct")
        if self.encoding not in ("onehot", "signed"):
            raise ValueError(f"unknown encoding {self.encoding!r}")
        if self.encoding == "signed" and len(self.values) != 2:
            raise ValueError("signed encoding requires exactly two values")

    def __len__(self) -> int:
        return len(self.values)

    def index(self, value) -> int:
        try:
            return self.values.index(value)
        except ValueError:
            raise ValueError(f"{value!r} is not in the sensitive domain {self.values}") from None


def keep_probability(gamma: float, n_values: int) -> float:
    """``e^g / (e^g + n - 1)``, evaluated without overflow."""
    if gamma == math.inf:
        return 1.0
    return 1.0 / (1.0 + (n_values - 1) * math.exp(-gamma))


def gamma_for_keep(p: float, n_values: int) -> float:
    """Inverse of :func:`keep_probability`."""
    if p >= 1.0:
        return math.inf
    return math.log(p * (n_values - 1) / (1.0 - p))


@dataclass(frozen=True)
class RRConfig:
    gamma: float
    domain: SensitiveDomain

    def __post_init__(self):
        if math.isnan(self.gamma) or self.gamma == -math.inf:
            raise ValueError("gamma must be a real number or +inf")

    @property
    def n_values(self) -> int:
        return len(self.domain)

    @property
    def keep_prob(self) -> float:
        return keep_probability(self.gamma, self.n_values)

    def matrix(self) -> np.ndarray:
        """``M[i, j] = P(released j | true i)``."""
        m = self.n_values
        if self.gamma == math.inf:
            return np.eye(m)
        e = math.exp(-self.gamma)
        denom = 1.0 + (m - 1) * e
        out = np.full((m, m), e / denom)
        np.fill_diagonal(out, 1.0 / denom)
        return out


def response_prob(config: RRConfig, true_index: int, released_index: int) -> float:
    m = config.n_values
    for idx in (true_index, released_index):
        if not 0 <= idx < m:
            raise ValueError(f"sensitive index {idx} outside 0..{m - 1}")
    return float(config.matrix()[true_index, released_index])


def sample(config: RRConfig, true_index, rng: np.random.Generator):
    """Randomized responses for one index or an array of indices.

    Keeps each value with probability ``p``; otherwise draws uniformly from
    the other ``|S| - 1`` values.
    """
    s = np.asarray(true_index, dtype=np.intp)
    m = config.n_values
    q = rng.random(s.shape)
    other = rng.integers(0, m - 1, size=s.shape)
    other = other + (other >= s)
    out = np.where(q > config.keep_prob, other, s)
    return int(out) if out.ndim == 0 else out


@dataclass
class SensitiveFrontier:
    """Frontier neurons plus the per-released-value gradient table.

    Row ``e`` of ``grads`` holds one fairness-relevant gradient component
    evaluated with the sensitive input forced to each value; the matching
    equation is ``sum_s grads[e, s] * P(s | true_index[e]) = 0``.
    """

    neurons: list[tuple[int, int]]
    grads: np.ndarray
    true_index: np.ndarray
    domain: SensitiveDomain
    labels: list[str] = field(default_factory=list)

    def __post_init__(self):
        self.grads = np.atleast_2d(np.asarray(self.grads, dtype=np.float64))
        self.true_index = np.asarray(self.true_index, dtype=np.intp).reshape(-1)
        if self.grads.size and self.grads.shape[1] != len(self.domain):
            raise ValueError("gradient table needs one column per sensitive value")
        if self.true_index.shape[0] != self.grads.shape[0] and self.grads.size:
            raise ValueError("one true value per equation required")


@dataclass
class GammaSolution:
    gamma: float
    keep_prob: float
    residual: float
    residuals: np.ndarray
    feasible: bool

    def as_row(self) -> dict:
        return {"gamma": self.gamma, "keep_prob": self.keep_prob,
                "residual": self.residual, "feasible": self.feasible,
                "n_equations": int(self.residuals.size)}


def _affine_in_p(frontier: SensitiveFrontier) -> tuple[np.ndarray, np.ndarray]:
    """Each equation as ``a * p + b``."""
    g = frontier.grads
    m = g.shape[1]
    rows = np.arange(g.shape[0])
    own = g[rows, frontier.true_index]
    others = (g.sum(axis=1) - own) / (m - 1)
    return own - others, others


def expected_gradient(frontier: SensitiveFrontier, gamma: float) -> np.ndarray:
    """RR expectation of every tabulated gradient component."""
    if frontier.grads.size == 0:
        raise ValueError("empty frontier gradient table")
    probs = RRConfig(gamma, frontier.domain).matrix()[frontier.true_index]
    return (frontier.grads * probs).sum(axis=1)


def solve_gamma(frontier: SensitiveFrontier, tol: float = 1e-9,
                gamma_max: float = GAMMA_MAX) -> GammaSolution:
    """Least-squares privacy budget for the zero-sum system.

    Every equation is affine in the keep-probability ``p`` and ``p`` is
    strictly increasing in ``gamma``, so the minimiser over
    ``gamma in [0, gamma_max]`` is the clamped closed-form minimiser in ``p``.
    When the objective is flat the smallest budget, 0, is returned.
    """
    if frontier.grads.size == 0:
        raise ValueError("empty frontier gradient table")
    if not np.isfinite(frontier.grads).all():
        raise ValueError("frontier gradients must be finite")
    m = len(frontier.domain)
    a, b = _affine_in_p(frontier)
    p_lo = 1.0 / m
    p_hi = min(keep_probability(gamma_max, m), P_CEILING)
    aa = float(a @ a)
    if aa == 0.0:
        p = p_lo
    else:
        p = min(max(-float(a @ b) / aa, p_lo), p_hi)
    # a least-squares p within rounding of uniform is uniform
    gamma = 0.0 if p <= p_lo + P_SNAP else gamma_for_keep(p, m)
    residuals = expected_gradient(frontier, gamma)
    residual = float(np.abs(residuals).max())
    return GammaSolution(gamma, keep_probability(gamma, m), residual, residuals, residual <= tol)


def neuron_invariance(spec: NetworkSpec, params: Parameters, x_probe, n_values: int,
                      tol: float = 0.0) -> list[np.ndarray]:
    """Per layer, a boolean mask of neurons whose value ignores the sensitive input.

    Layer 0 is the input layer; only the sensitive positions vary there.
    Invariance is tested on the probe rows, for every sensitive value.
    """
    x_probe = np.atleast_2d(x_probe)
    traces = [forward_inputs(spec, params, build_input(spec, x_probe, np.full(len(x_probe), s)))
              for s in range(n_values)]
    masks = []
    for layer in range(spec.n_layers + 1):
        ref = traces[0].post[layer]
        spread = np.zeros(ref.shape[1])
        for tr in traces[1:]:
            spread = np.maximum(spread, np.abs(tr.post[layer] - ref).max(axis=0))
        masks.append(spread <= tol)
    return masks


def build_frontier(spec: NetworkSpec, params: Parameters, domain: SensitiveDomain,
                   x, s, y, tol: float = 0.0) -> SensitiveFrontier:
    """Locate the sensitive frontier on probe data and tabulate its gradients.

    A neuron is on the frontier when it is sensitive-invariant on the probe
    rows while some neuron of the previous layer is not.  For each frontier
    neuron the table holds the loss gradient of its weights from the
    non-invariant predecessors, with the sensitive input forced to each
    value, averaged over the probe rows sharing a true sensitive value.
    Weights reading a one-hot block are centred across the block, since an
    update keeps those neurons invariant exactly when it moves the whole
    block by the same amount.
    """
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    s = np.asarray(s, dtype=np.intp)
    y = np.asarray(y)
    m = len(domain)
    masks = neuron_invariance(spec, params, x, m, tol)
    neurons: list[tuple[int, int]] = []
    for layer in range(1, spec.n_layers + 1):
        if masks[layer - 1].all():
            continue
        neurons += [(layer, j + 1) for j in np.flatnonzero(masks[layer])]
    if not neurons:
        return SensitiveFrontier([], np.zeros((0, m)), np.zeros(0), domain)

    # per forced value: per-sample deltas and predecessor values per frontier layer
    layers = sorted({n[0] for n in neurons})
    per_value = []
    for v in range(m):
        tr = forward_inputs(spec, params, build_input(spec, x, np.full(len(x), v)))
        per_value.append({layer: (input_deltas(spec, params, tr, y, layer),
                                  np.atleast_2d(tr.post[layer - 1])) for layer in layers})

    present = [t for t in range(m) if np.any(s == t)]
    rows, trues, labels = [], [], []
    for layer in layers:
        js = np.array([j - 1 for (i, j) in neurons if i == layer])
        preds = np.flatnonzero(~masks[layer - 1])
        centre = layer == 1 and spec.encoding == "onehot"
        for t in present:
            sel = s == t
            table = np.empty((len(js), len(preds), m))
            for v in range(m):
                delta, prev = per_value[v][layer]
                table[:, :, v] = delta[sel][:, js].T @ prev[sel][:, preds] / sel.sum()
            if centre:
                table = table - table.mean(axis=1, keepdims=True)
            rows.append(table.reshape(-1, m))
            trues.append(np.full(len(js) * len(preds), t))
            labels += [f"W{layer}[{j + 1},{p + 1}]|s={t}" for j in js for p in preds]
    return SensitiveFrontier(neurons, np.vstack(rows), np.concatenate(trues), domain, labels)
