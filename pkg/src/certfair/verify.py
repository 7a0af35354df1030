"""Global individual-fairness verification over box input domains.

Three tools, from cheapest to most exhaustive:

* :func:`structural_certificate` checks that every first-layer neuron
  reads the sensitive encoding through identical (one-hot) or zero
  (signed) weights.  Such neurons ignore the sensitive value, so by
  composition the whole network does.
* :func:`verify` runs interval propagation with branch-and-bound over the
  non-sensitive box.  Besides per-value class certification it propagates
  the *difference* between two copies of the network that share ``x`` and
  differ in the sensitive value, which proves identical logits directly.
* :func:`grid_falsify` is a brute-force search for counterexamples, used
  as an independent oracle.
"""

from __future__ import annotations

import csv
import itertools
import time
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .network import NetworkSpec, Parameters, build_input, encode_sensitive, labels_from_logits
from .network import forward_inputs
from .response import SensitiveDomain

EPS = np.finfo(np.float64).eps

VERIFIED = "Verified"
FALSIFIED = "Falsified"
UNDECIDED = "Undecided"


@dataclass
class InputDomain:
    """Box precondition over the non-sensitive features plus the sensitive set."""

    lo: np.ndarray
    hi: np.ndarray
    sensitive: SensitiveDomain
    names: list[str] = field(default_factory=list)
    integral: np.ndarray | None = None
    groups: list[list[int]] = field(default_factory=list)

    def __post_init__(self):
        self.lo = np.asarray(self.lo, dtype=np.float64).reshape(-1)
        self.hi = np.asarray(self.hi, dtype=np.float64).reshape(-1)
        if self.lo.shape != self.hi.shape:
            raise ValueError("lo and hi must have the same length")
        if not (np.isfinite(self.lo).all() and np.isfinite(self.hi).all()):
            raise ValueError("domain bounds must be finite")
        if np.any(self.lo > self.hi):
            raise ValueError("every feature needs lo <= hi")
        if self.integral is None:
            self.integral = np.zeros(self.lo.shape, dtype=bool)
        self.integral = np.asarray(self.integral, dtype=bool)
        if not self.names:
            self.names = [f"x{i}" for i in range(self.dims)]

    @property
    def dims(self) -> int:
        return self.lo.size

    def contains(self, x) -> np.ndarray:
        x = np.atleast_2d(x)
        return np.all((x >= self.lo) & (x <= self.hi), axis=1)

    def root(self) -> "Partition":
        return Partition(self.lo.copy(), self.hi.copy(), 0)


@dataclass
class Partition:
    lo: np.ndarray
    hi: np.ndarray
    depth: int = 0

    def midpoint(self, integral=None) -> np.ndarray:
        mid = (self.lo + self.hi) / 2.0
        if integral is not None and integral.any():
            mid[integral] = np.clip(np.floor(mid[integral]), self.lo[integral], self.hi[integral])
        return mid


@dataclass
class Counterexample:
    x: np.ndarray
    s1: int
    s2: int
    labels: tuple[int, int]


@dataclass
class Verdict:
    tag: str
    counterexample: Counterexample | None = None
    partitions: int = 0
    depth: int = 0
    seconds: float = 0.0
    method: str = ""

    @classmethod
    def falsified(cls, spec: NetworkSpec, params: Parameters, x, s1: int, s2: int,
                  **stats) -> "Verdict":
        """Falsified verdict; the counterexample is re-evaluated before acceptance."""
        x = np.asarray(x, dtype=np.float64)
        a, b = _labels(spec, params, np.vstack([x, x]), np.array([s1, s2]))
        if a == b:
            raise ValueError("counterexample does not change the prediction")
        return cls(FALSIFIED, Counterexample(x, int(s1), int(s2), (int(a), int(b))), **stats)

    @property
    def verified(self) -> bool:
        return self.tag == VERIFIED

    def report_row(self, dataset: str = "", accuracy: float | None = None) -> dict:
        """One row shaped like a verification results table."""
        return {
            "dataset": dataset,
            "verification": {VERIFIED: "Provably fair", FALSIFIED: "Falsified",
                             UNDECIDED: "Undecided"}[self.tag],
            "partitions": self.partitions,
            "minutes": self.seconds / 60.0,
            "seconds": self.seconds,
            "accuracy": "" if accuracy is None else accuracy,
            "method": self.method,
        }


def _labels(spec, params, x, s) -> np.ndarray:
    return labels_from_logits(forward_inputs(spec, params, build_input(spec, x, s)).output)


@dataclass
class CertificateResult:
    passed: bool
    spread: float
    per_neuron: np.ndarray

    def __bool__(self) -> bool:
        return self.passed


def certificate_spread(spec: NetworkSpec, params: Parameters) -> np.ndarray:
    """Per first-layer neuron: sensitive weight spread (one-hot) or magnitude (signed)."""
    start, stop = spec.sensitive_slice
    block = params.weights[0][:, start:stop]
    if spec.encoding == "signed":
        return np.abs(block[:, 0])
    return block.max(axis=1) - block.min(axis=1)


def structural_certificate(spec: NetworkSpec, params: Parameters,
                           tol: float | None = None) -> CertificateResult:
    if tol is None:
        tol = 1e-12 if spec.encoding == "signed" else 0.0
    per = certificate_spread(spec, params)
    spread = float(per.max()) if per.size else 0.0
    return CertificateResult(spread <= tol, spread, per)


def _affine_bounds(w: np.ndarray, b: np.ndarray, lo: np.ndarray, hi: np.ndarray):
    """Interval image of ``w @ v + b``, padded for matmul rounding."""
    wp = np.maximum(w, 0.0)
    wn = np.minimum(w, 0.0)
    low = lo @ wp.T + hi @ wn.T
    high = hi @ wp.T + lo @ wn.T
    # rounding of a length-n dot product is at most gamma_n * |w| @ |v|;
    # counted twice, once for the concrete pass and once for this one
    n = w.shape[1]
    mag = np.maximum(np.abs(lo), np.abs(hi))
    pad = 2.0 * (n * EPS / (1.0 - n * EPS)) * (mag @ np.abs(w).T)
    # adding b is monotone under round-to-nearest
    return (low - pad) + b, (high + pad) + b


def _layer_bounds(spec: NetworkSpec, params: Parameters, lo, hi, s: int, n_values: int):
    """Pre-activation bounds of every layer for a batch of boxes and fixed ``s``."""
    lo = np.atleast_2d(lo)
    hi = np.atleast_2d(hi)
    enc = np.broadcast_to(encode_sensitive(spec, np.array(s)), (lo.shape[0], spec.sensitive_width))
    a_lo = build_input(spec, lo, enc)
    a_hi = build_input(spec, hi, enc)
    bounds = []
    last = spec.n_layers - 1
    for i, (w, b) in enumerate(zip(params.weights, params.biases)):
        z_lo, z_hi = _affine_bounds(w, b, a_lo, a_hi)
        bounds.append((z_lo, z_hi))
        if i < last:
            a_lo, a_hi = np.maximum(z_lo, 0.0), np.maximum(z_hi, 0.0)
    return bounds


def propagate_intervals(spec: NetworkSpec, params: Parameters, partition: Partition,
                        s: int) -> tuple[np.ndarray, np.ndarray]:
    """Sound bounds on every logit over ``partition`` with sensitive value ``s``."""
    z_lo, z_hi = _layer_bounds(spec, params, partition.lo, partition.hi, s, 0)[-1]
    return z_lo[0], z_hi[0]


def _difference_bounds(spec: NetworkSpec, params: Parameters, bounds_a, bounds_b,
                       s_a: int, s_b: int):
    """Bounds on ``logits(x, s_a) - logits(x, s_b)`` sharing the same ``x``."""
    start, stop = spec.sensitive_slice
    d_in = encode_sensitive(spec, np.array(s_a)) - encode_sensitive(spec, np.array(s_b))
    nz = np.flatnonzero(d_in)
    w0 = params.weights[0][:, start:stop]
    # at most two nonzero terms: a single rounding, relative to the result
    d = w0[:, nz] @ d_in[nz]
    pad = EPS * np.abs(d) if nz.size <= 2 else 2 * nz.size * EPS * (np.abs(w0) @ np.abs(d_in))
    dl, du = d - pad, d + pad
    dl = np.broadcast_to(dl, bounds_a[0][0].shape)
    du = np.broadcast_to(du, bounds_a[0][0].shape)
    last = spec.n_layers - 1
    for i in range(spec.n_layers):
        if i:
            w = params.weights[i]
            dl, du = _affine_bounds(w, np.zeros(w.shape[0]), dl, du)
        if i == last:
            break
        (la, ua), (lb, ub) = bounds_a[i], bounds_b[i]
        both_on = (la >= 0) & (lb >= 0)
        both_off = (ua <= 0) & (ub <= 0)
        # relu is monotone and 1-Lipschitz
        rl = np.where(both_on, dl, np.minimum(dl, 0.0))
        ru = np.where(both_on, du, np.maximum(du, 0.0))
        dl = np.where(both_off, 0.0, rl)
        du = np.where(both_off, 0.0, ru)
    return dl, du


def _certified_label(z_lo: np.ndarray, z_hi: np.ndarray) -> np.ndarray:
    """Label proven for the whole box (0 when unproven), per row."""
    n, k = z_lo.shape
    if k == 1:
        return np.where(z_lo[:, 0] > 0, 2, np.where(z_hi[:, 0] <= 0, 1, 0))
    out = np.zeros(n, dtype=int)
    for c in range(k):
        ok = np.ones(n, dtype=bool)
        for other in range(k):
            if other == c:
                continue
            # ties resolve to the lower index
            ok &= z_lo[:, c] > z_hi[:, other] if other < c else z_lo[:, c] >= z_hi[:, other]
        out[ok & (out == 0)] = c + 1
    return out


def _probe_points(part: Partition, domain: InputDomain) -> np.ndarray:
    return np.vstack([part.midpoint(domain.integral), part.lo, part.hi])


def _find_violation(spec, params, x_rows: np.ndarray, n_values: int):
    """First ``(row, s1, s2)`` whose predictions differ, else ``None``."""
    n = x_rows.shape[0]
    labels = np.empty((n_values, n), dtype=int)
    for s in range(n_values):
        labels[s] = _labels(spec, params, x_rows, np.full(n, s))
    bad = np.flatnonzero((labels != labels[0]).any(axis=0))
    if bad.size == 0:
        return None
    r = bad[0]
    s2 = int(np.flatnonzero(labels[:, r] != labels[0, r])[0])
    return r, 0, s2


def check_partitions(spec: NetworkSpec, params: Parameters, parts: list[Partition],
                     domain: InputDomain) -> list[tuple[str, tuple | None]]:
    """Vectorised :func:`check_partition` over many boxes."""
    m = len(domain.sensitive)
    lo = np.vstack([p.lo for p in parts])
    hi = np.vstack([p.hi for p in parts])
    bounds = [_layer_bounds(spec, params, lo, hi, s, m) for s in range(m)]
    certified = np.vstack([_certified_label(*b[-1]) for b in bounds])
    same = np.ones(len(parts), dtype=bool)
    for s in range(1, m):
        dl, du = _difference_bounds(spec, params, bounds[0], bounds[s], 0, s)
        identical = np.all((dl == 0.0) & (du == 0.0), axis=1)
        agree = (certified[0] > 0) & (certified[s] == certified[0])
        same &= identical | agree
    results = []
    for idx, part in enumerate(parts):
        if same[idx]:
            results.append((VERIFIED, None))
            continue
        probes = _probe_points(part, domain)
        hit = _find_violation(spec, params, probes, m)
        if hit is not None:
            r, s1, s2 = hit
            results.append((FALSIFIED, (probes[r], s1, s2)))
        else:
            results.append((UNDECIDED, None))
    return results


def check_partition(spec: NetworkSpec, params: Parameters, partition: Partition,
                    domain: InputDomain) -> tuple[str, tuple | None]:
    """Classify one box as Verified, Falsified (with a witness) or Undecided."""
    return check_partitions(spec, params, [partition], domain)[0]


def split_partition(part: Partition, domain: InputDomain) -> list[Partition]:
    """Bisect along the widest dimension relative to the domain width.

    Integral features split into ``[lo, m]`` and ``[m + 1, hi]``.  Returns
    an empty list when the box is a single point.
    """
    width = part.hi - part.lo
    full = domain.hi - domain.lo
    rel = np.divide(width, full, out=np.zeros_like(width), where=full > 0)
    rel[domain.integral & (width < 1)] = 0.0
    if not np.any(rel > 0):
        return []
    d = int(np.argmax(rel))
    left_hi = part.hi.copy()
    right_lo = part.lo.copy()
    if domain.integral[d]:
        cut = np.floor((part.lo[d] + part.hi[d]) / 2.0)
        left_hi[d] = cut
        right_lo[d] = cut + 1
    else:
        cut = (part.lo[d] + part.hi[d]) / 2.0
        left_hi[d] = cut
        right_lo[d] = cut
    return [Partition(part.lo.copy(), left_hi, part.depth + 1),
            Partition(right_lo, part.hi.copy(), part.depth + 1)]


def _onehot_roots(domain: InputDomain) -> list[Partition]:
    roots = []
    for combo in itertools.product(*domain.groups):
        lo = domain.lo.copy()
        hi = domain.hi.copy()
        for group, active in zip(domain.groups, combo):
            lo[group] = 0.0
            hi[group] = 0.0
            lo[active] = 1.0
            hi[active] = 1.0
        roots.append(Partition(lo, hi, 0))
    return roots


def verify(spec: NetworkSpec, params: Parameters, domain: InputDomain,
           max_partitions: int = 10_000, max_seconds: float = 60.0,
           use_certificate: bool = True, exact_onehot: bool = False,
           batch: int = 64) -> Verdict:
    """Sound verdict for global individual fairness on ``domain``.

    Undecided boxes are bisected and re-queued until every box is verified,
    a counterexample turns up, or the budget runs out.
    """
    if max_partitions < 1 or max_seconds <= 0:
        raise ValueError("verification budget must be positive")
    if domain.dims != spec.n_features:
        raise ValueError(f"domain has {domain.dims} features, network expects {spec.n_features}")
    t0 = time.perf_counter()
    if use_certificate and structural_certificate(spec, params).passed:
        return Verdict(VERIFIED, partitions=1, depth=0,
                       seconds=time.perf_counter() - t0, method="certificate")
    if exact_onehot and domain.groups:
        if len(domain.groups) > 3:
            raise ValueError("exact one-hot enumeration supports at most 3 categorical features")
        queue = deque(_onehot_roots(domain))
    else:
        queue = deque([domain.root()])
    examined = 0
    depth = 0
    undecided_leaf = False
    while queue:
        if examined >= max_partitions or time.perf_counter() - t0 > max_seconds:
            return Verdict(UNDECIDED, partitions=examined, depth=depth,
                           seconds=time.perf_counter() - t0, method="intervals")
        take = min(batch, len(queue), max_partitions - examined)
        parts = [queue.popleft() for _ in range(take)]
        results = check_partitions(spec, params, parts, domain)
        examined += take
        for part, (tag, witness) in zip(parts, results):
            depth = max(depth, part.depth)
            if tag == FALSIFIED:
                x, s1, s2 = witness
                return Verdict.falsified(spec, params, x, s1, s2, partitions=examined,
                                         depth=depth, seconds=time.perf_counter() - t0,
                                         method="intervals")
            if tag == UNDECIDED:
                children = split_partition(part, domain)
                if children:
                    queue.extend(children)
                else:
                    undecided_leaf = True
    tag = UNDECIDED if undecided_leaf else VERIFIED
    return Verdict(tag, partitions=examined, depth=depth,
                   seconds=time.perf_counter() - t0, method="intervals")


def grid_falsify(spec: NetworkSpec, params: Parameters, domain: InputDomain,
                 resolution: int = 50, sample_count: int = 100_000, seed: int = 0,
                 chunk: int = 8192) -> Counterexample | None:
    """Search a grid (small dimension) or random samples for a fairness violation."""
    if resolution < 2:
        raise ValueError("resolution must be at least 2")
    m = len(domain.sensitive)
    dims = domain.dims
    if resolution ** dims <= sample_count:
        axes = [np.linspace(lo, hi, resolution) for lo, hi in zip(domain.lo, domain.hi)]
        points = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, dims)
        chunks = (points[i:i + chunk] for i in range(0, len(points), chunk))
    else:
        rng = np.random.default_rng(seed)

        def draw(n):
            pts = domain.lo + rng.random((n, dims)) * (domain.hi - domain.lo)
            for group in domain.groups:
                pts[:, group] = 0.0
                pts[np.arange(n), rng.choice(group, size=n)] = 1.0
            return pts

        chunks = (draw(min(chunk, sample_count - i)) for i in range(0, sample_count, chunk))
    for pts in chunks:
        if domain.integral.any():
            pts[:, domain.integral] = np.round(pts[:, domain.integral])
        hit = _find_violation(spec, params, pts, m)
        if hit is not None:
            r, s1, s2 = hit
            a, b = _labels(spec, params, np.vstack([pts[r], pts[r]]), np.array([s1, s2]))
            return Counterexample(pts[r].copy(), s1, s2, (int(a), int(b)))
    return None


DOMAIN_COLUMNS = ["name", "kind", "lo", "hi", "integral", "group", "values", "encoding"]


def save_domain(path, domain: InputDomain) -> Path:
    """Write a domain file: one CSV row per feature plus one sensitive row."""
    group_of = {}
    for g, members in enumerate(domain.groups):
        for idx in members:
            group_of[idx] = g
    path = Path(path)
    with open(path, "w", newline="") as fh:
        out = csv.writer(fh)
        out.writerow(DOMAIN_COLUMNS)
        for i, name in enumerate(domain.names):
            out.writerow([name, "feature", repr(float(domain.lo[i])), repr(float(domain.hi[i])),
                          int(domain.integral[i]), group_of.get(i, ""), "", ""])
        out.writerow(["sensitive", "sensitive", "", "", "", "",
                      ";".join(map(str, domain.sensitive.values)), domain.sensitive.encoding])
    return path


def load_domain(path) -> InputDomain:
    names, lo, hi, integral, groups = [], [], [], [], {}
    sensitive = None
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            if row["kind"] == "sensitive":
                sensitive = SensitiveDomain(tuple(row["values"].split(";")),
                                            row.get("encoding") or "onehot")
                continue
            if row["kind"] != "feature":
                raise ValueError(f"{path}: unknown row kind {row['kind']!r}")
            if row["group"]:
                groups.setdefault(int(row["group"]), []).append(len(names))
            names.append(row["name"])
            lo.append(float(row["lo"]))
            hi.append(float(row["hi"]))
            integral.append(row["integral"] in ("1", "true", "True"))
    if sensitive is None:
        raise ValueError(f"{path}: no sensitive row")
    return InputDomain(np.array(lo), np.array(hi), sensitive, names, np.array(integral, dtype=bool),
                       [groups[k] for k in sorted(groups)])
