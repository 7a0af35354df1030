"""Fairness-preserving gradient descent with randomized-responded sensitive values.

Two fair modes share one loop:

``stochastic``
    Every sample's sensitive value is replaced by a randomized response,
    ``delta`` times per batch, and the resulting gradients are averaged.
``expectation``
    The per-value gradients are weighted by the response probabilities,
    which is the exact expectation of the stochastic update.

After every update the first-layer sensitive block is checked: updates
that would break the structural certificate are projected (when enabled)
or rolled back.  :func:`train_erm` is the plain SGD baseline with identical
instrumentation.
"""

from __future__ import annotations

import itertools
import logging
import math
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from .evaluation import accuracy, empirical_fairness
from .network import (GradientSet, NetworkSpec, Parameters, apply_update, backward,
                      build_input, forward_inputs, input_deltas, loss)
from .response import (GammaSolution, RRConfig, SensitiveDomain, build_frontier, sample,
                       solve_gamma)
from .verify import certificate_spread, structural_certificate

log = logging.getLogger(__name__)

MODES = ("stochastic", "expectation")


class InfeasibleGammaError(RuntimeError):
    """No privacy budget zeroes the frontier system and projection is disabled."""


class CertificateError(ValueError):
    """Training requires parameters that pass the structural certificate."""


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 0.01
    batch_size: int = 64
    epochs: int = 100
    seed: int = 0
    mode: str = "expectation"
    delta: int = 8
    gamma_schedule: str = "epoch"
    projection: bool = True
    tol_fair: float = 1e-9
    frontier_rows: int = 256

    def __post_init__(self):
        if self.lr <= 0 or self.batch_size < 1 or self.delta < 1 or self.tol_fair < 0:
            raise ValueError("need lr > 0, batch_size >= 1, delta >= 1, tol_fair >= 0")
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}")
        if self.gamma_schedule not in ("epoch", "step"):
            raise ValueError("gamma_schedule must be 'epoch' or 'step'")


@dataclass
class EpochStats:
    epoch: int
    loss: float
    gamma: float = math.nan
    residual: float = math.nan
    spread: float = 0.0
    seconds: float = 0.0
    wall: float = 0.0
    fairness_pct: float = math.nan
    accuracy_pct: float = math.nan
    steps: int = 0
    rollbacks: int = 0
    projections: int = 0

    def row(self) -> dict:
        return asdict(self)


@dataclass
class StepInfo:
    projected: bool = False
    rolled_back: bool = False
    spread: float = 0.0


@dataclass
class TrainResult:
    params: Parameters
    stats: list[EpochStats]
    gamma_reports: list[dict] = field(default_factory=list)

    def __iter__(self):
        return iter((self.params, self.stats))

    @property
    def rollbacks(self) -> int:
        return sum(s.rollbacks for s in self.stats)


def _sensitive_block(spec: NetworkSpec, grads: GradientSet) -> np.ndarray:
    start, stop = spec.sensitive_slice
    return grads.weights[0][:, start:stop]


def preserve_step(spec: NetworkSpec, params: Parameters, gradient: GradientSet, gamma: float,
                  config: TrainConfig) -> tuple[Parameters, StepInfo]:
    """Apply one update without breaking the structural certificate.

    The only parameters whose update can make a certified network depend on
    the sensitive value are the first-layer weights reading the sensitive
    encoding.  Their update must move a one-hot block uniformly, or leave a
    signed column at zero.  If the gradient violates that by more than
    ``tol_fair`` it is projected (block mean, or zero) when projection is
    on; an update that still leaves the certificate spread above
    ``tol_fair`` is rolled back.  ``gamma`` is only recorded by the caller.
    """
    info = StepInfo()
    block = _sensitive_block(spec, gradient)
    if spec.encoding == "signed":
        violation = float(np.abs(block).max())
    else:
        violation = float((block.max(axis=1) - block.min(axis=1)).max())
    if violation > config.tol_fair and config.projection:
        w0 = gradient.weights[0].copy()
        start, stop = spec.sensitive_slice
        if spec.encoding == "signed":
            w0[:, start:stop] = 0.0
        else:
            w0[:, start:stop] = block.mean(axis=1, keepdims=True)
        gradient = GradientSet([w0, *gradient.weights[1:]], gradient.biases)
        info.projected = True
    new = apply_update(params, gradient, config.lr)
    spread = float(certificate_spread(spec, new).max())
    if spread > config.tol_fair:
        info.rolled_back = True
        info.spread = float(certificate_spread(spec, params).max())
        return params, info
    info.spread = spread
    return new, info


def expectation_gradient(spec: NetworkSpec, params: Parameters, x, s, y,
                         rr: RRConfig, exact: bool = False, tied: bool | None = None,
                         matrix: np.ndarray | None = None) -> GradientSet:
    """Exact RR expectation of the mean-loss gradient over the batch.

    When the sensitive block is tied exactly the network output ignores the
    encoding, so one pass with the encoding replaced by its expected value
    gives the same gradient as summing all per-value passes.  ``exact``
    forces the per-value sum.  ``tied`` and ``matrix`` let a training loop
    pass in what it already knows.
    """
    probs = (rr.matrix() if matrix is None else matrix)[s]
    n = len(y)
    if tied is None:
        tied = float(certificate_spread(spec, params).max()) == 0.0
    if tied and not exact:
        enc = probs if spec.encoding == "onehot" else (probs @ np.array([-1.0, 1.0]))[:, None]
        tr = forward_inputs(spec, params, build_input(spec, x, enc))
        return backward(spec, params, tr, y)
    total = None
    for v in range(rr.n_values):
        tr = forward_inputs(spec, params, build_input(spec, x, np.full(n, v)))
        g = backward(spec, params, tr, y, sample_weights=probs[:, v] / n)
        total = g if total is None else total + g
    return total


def stochastic_gradient(spec: NetworkSpec, params: Parameters, x, s, y, rr: RRConfig,
                        delta: int, rng: np.random.Generator) -> GradientSet:
    """Average of ``delta`` batch gradients, each with freshly responded sensitive values."""
    total = None
    for _ in range(delta):
        released = sample(rr, s, rng)
        tr = forward_inputs(spec, params, build_input(spec, x, released))
        g = backward(spec, params, tr, y)
        total = g if total is None else total + g
    return total.scaled(1.0 / delta)


def _mean_loss(spec, params, data) -> float:
    tr = forward_inputs(spec, params, build_input(spec, data.x, data.s))
    return float(np.mean(loss(tr, data.y)))


def _epoch_record(spec, params, data, probe, epoch, **kw) -> EpochStats:
    st = EpochStats(epoch, _mean_loss(spec, params, data), **kw)
    st.spread = float(certificate_spread(spec, params).max())
    if probe is not None:
        st.fairness_pct = empirical_fairness(spec, params, probe).fairness_pct
        st.accuracy_pct = accuracy(spec, params, probe)
    return st


def solve_for_batch(spec: NetworkSpec, params: Parameters, domain: SensitiveDomain,
                    x, s, y, config: TrainConfig) -> GammaSolution:
    frontier = build_frontier(spec, params, domain, x, s, y)
    if not frontier.neurons:
        raise CertificateError("no sensitive frontier: the network is not sensitive-invariant")
    return solve_gamma(frontier, tol=config.tol_fair)


def _epochs(spec, params, data, config: TrainConfig, probe, fair: bool, result: TrainResult):
    """Train epoch by epoch, appending to ``result`` and yielding after each epoch."""
    params.check(spec)
    rng = np.random.default_rng(config.seed)
    domain = data.sensitive
    n = len(data)
    stats = result.stats
    reports = result.gamma_reports
    stats.append(_epoch_record(spec, params, data, probe, 0))
    result.params = params
    wall = 0.0
    gamma = math.nan
    residual = math.nan
    tied = float(certificate_spread(spec, params).max()) == 0.0
    for epoch in range(1, config.epochs + 1):
        t0 = time.perf_counter()
        perm = rng.permutation(n)
        rollbacks = projections = steps = 0
        for step, lo in enumerate(range(0, n, config.batch_size)):
            idx = perm[lo:lo + config.batch_size]
            x, s, y = data.x[idx], data.s[idx], data.y[idx]
            if not fair:
                tr = forward_inputs(spec, params, build_input(spec, x, s))
                params = apply_update(params, backward(spec, params, tr, y), config.lr)
                steps += 1
                continue
            if step == 0 or config.gamma_schedule == "step":
                rows = perm[:config.frontier_rows] if step == 0 else idx
                sol = solve_for_batch(spec, params, domain, data.x[rows], data.s[rows],
                                      data.y[rows], config)
                reports.append({"epoch": epoch, "step": step, **sol.as_row()})
                if not sol.feasible and not config.projection:
                    raise InfeasibleGammaError(
                        f"epoch {epoch} step {step}: no privacy budget zeroes the frontier "
                        f"system (residual {sol.residual:.3g}) and projection is disabled")
                gamma, residual = sol.gamma, sol.residual
                rr = RRConfig(gamma, domain)
                matrix = rr.matrix()
            if config.mode == "expectation":
                grad = expectation_gradient(spec, params, x, s, y, rr, tied=tied, matrix=matrix)
            else:
                grad = stochastic_gradient(spec, params, x, s, y, rr, config.delta, rng)
            params, info = preserve_step(spec, params, grad, gamma, config)
            tied = info.spread == 0.0
            rollbacks += info.rolled_back
            projections += info.projected
            steps += 1
        seconds = time.perf_counter() - t0
        wall += seconds
        stats.append(_epoch_record(spec, params, data, probe, epoch, gamma=gamma,
                                   residual=residual, seconds=seconds, wall=wall, steps=steps,
                                   rollbacks=rollbacks, projections=projections))
        log.debug("epoch %d loss %.5f gamma %.3g", epoch, stats[-1].loss, gamma)
        result.params = params
        yield epoch


def _run(spec, params, data, config: TrainConfig, probe, fair: bool) -> TrainResult:
    result = TrainResult(params, [])
    for _ in _epochs(spec, params, data, config, probe, fair, result):
        pass
    return result


def _check_start(spec, params0, config) -> None:
    cert = structural_certificate(spec, params0, tol=config.tol_fair)
    if not cert.passed:
        raise CertificateError(f"initial parameters fail the structural certificate "
                               f"(spread {cert.spread:.3g})")


def train_fair(spec: NetworkSpec, params0: Parameters, data, config: TrainConfig,
               probe=None) -> TrainResult:
    """Train from a certified-fair start; the certificate holds after every update."""
    _check_start(spec, params0, config)
    return _run(spec, params0.copy(), data, config, probe, fair=True)


def train_erm(spec: NetworkSpec, params0: Parameters, data, config: TrainConfig,
              probe=None) -> TrainResult:
    """Mini-batch SGD on the true sensitive values, no safeguards."""
    return _run(spec, params0.copy(), data, config, probe, fair=False)


def train_side_by_side(spec: NetworkSpec, params0: Parameters, data, config: TrainConfig,
                       probe=None) -> tuple[TrainResult, TrainResult]:
    """Fair and ERM training from the same start, alternating epochs.

    Results match separate :func:`train_fair` and :func:`train_erm` calls.
    Interleaving only makes the per-epoch timings of the two runs share
    whatever load the machine is under, so their ratio is a like-for-like
    comparison.
    """
    _check_start(spec, params0, config)
    fair = TrainResult(params0, [])
    erm = TrainResult(params0, [])
    runs = [_epochs(spec, params0.copy(), data, config, probe, True, fair),
            _epochs(spec, params0.copy(), data, config, probe, False, erm)]
    for _ in itertools.zip_longest(*runs):
        pass
    return fair, erm


@dataclass
class ChebyshevReport:
    """Deviation of stochastic first-layer sensitive updates from their expectation.

    Entry ``[k, c]`` monitors neuron ``k`` of the first hidden layer and the
    weight reading sensitive column ``c`` (centred across the one-hot block).
    """

    variance: np.ndarray
    delta: int
    tau: float
    bound: np.ndarray
    frequency: np.ndarray
    trials: int

    @property
    def holds(self) -> bool:
        return bool(np.all(self.frequency <= self.bound))


def _update_table(spec, params, data, lr: float) -> np.ndarray:
    """``D[n, v, k, c]``: one sample's centred sensitive-weight update if ``v`` is released."""
    m = len(data.sensitive)
    n = len(data)
    start, stop = spec.sensitive_slice
    out = np.empty((n, m, spec.layer_sizes[1], stop - start))
    for v in range(m):
        tr = forward_inputs(spec, params, build_input(spec, data.x, np.full(n, v)))
        d = input_deltas(spec, params, tr, data.y, 1)
        enc = np.atleast_2d(tr.post[0])[:, start:stop]
        out[:, v] = -lr * d[:, :, None] * enc[:, None, :]
    if spec.encoding == "onehot":
        out -= out.mean(axis=3, keepdims=True)
    return out


def chebyshev_report(spec: NetworkSpec, params: Parameters, data, gamma: float, delta: int,
                     tau: float, lr: float = 0.01, trials: int = 2000, seed: int = 0,
                     chunk_elems: int = 4_000_000) -> ChebyshevReport:
    """Monte-Carlo check of the Chebyshev bound on stochastic update deviations.

    A single sample's contribution ``D`` to a monitored weight update has,
    over uniform sampling of training rows and the randomized response, mean
    deviation zero from its response expectation and variance ``sigma^2``
    (computed exactly).  The average of ``delta`` such contributions exceeds
    ``tau`` in magnitude with probability at most ``sigma^2 / (delta tau^2)``;
    the empirical frequency comes from ``trials`` independent updates.
    """
    if delta < 2 or tau <= 0:
        raise ValueError("need delta >= 2 and tau > 0")
    table = _update_table(spec, params, data, lr)
    probs = RRConfig(gamma, data.sensitive).matrix()[data.s]
    mean = np.einsum("nv,nvkc->nkc", probs, table)
    centred = table - mean[:, None]
    variance = np.einsum("nv,nvkc->kc", probs, centred ** 2) / len(data)
    bound = variance / (delta * tau ** 2)

    rng = np.random.default_rng(seed)
    rr = RRConfig(gamma, data.sensitive)
    per_trial = delta * table.shape[2] * table.shape[3]
    step = max(1, chunk_elems // per_trial)
    exceed = np.zeros(variance.shape)
    for lo in range(0, trials, step):
        k = min(step, trials - lo)
        rows = rng.integers(0, len(data), size=(k, delta))
        released = sample(rr, data.s[rows], rng)
        avg = centred[rows, released].mean(axis=1)
        exceed += (np.abs(avg) > tau).sum(axis=0)
    return ChebyshevReport(variance, delta, tau, bound, exceed / trials, trials)
