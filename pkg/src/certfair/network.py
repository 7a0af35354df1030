"""Dense ReLU networks: forward traces, softmax cross-entropy and backprop.

Weights are stored as ``(out_features, in_features)`` matrices so that row
``k`` of layer ``i`` holds every incoming weight of neuron ``(i+1, k)``.
All arithmetic is float64.  Every function accepts either a single input
vector or a batch with samples along axis 0.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

ENCODINGS = ("onehot", "signed")


class ShapeError(ValueError):
    """Input or parameter dimensions do not match the network spec."""


class StaleTraceError(ValueError):
    """A trace was produced by a different parameter version."""


@dataclass(frozen=True)
class NetworkSpec:
    """Architecture of a fully connected ReLU classifier.

    ``layer_sizes[0]`` is the full input width (non-sensitive features plus
    the sensitive encoding), ``layer_sizes[-1]`` is the number of output
    logits.  The sensitive encoding occupies ``input[start:stop]``.
    """

    layer_sizes: tuple[int, ...]
    sensitive_slice: tuple[int, int]
    encoding: str = "onehot"
    activation: str = "relu"

    def __post_init__(self):
        sizes = tuple(int(n) for n in self.layer_sizes)
        object.__setattr__(self, "layer_sizes", sizes)
        object.__setattr__(self, "sensitive_slice", tuple(int(i) for i in self.sensitive_slice))
        if len(sizes) < 2 or min(sizes) < 1:
            raise ValueError(f"layer_sizes must have >= 2 positive entries, got {sizes}")
        start, stop = self.sensitive_slice
        if not 0 <= start < stop <= sizes[0]:
            raise ValueError(f"sensitive_slice {self.sensitive_slice} outside input width {sizes[0]}")
        if self.encoding not in ENCODINGS:
            raise ValueError(f"unknown encoding {self.encoding!r}")
        if self.encoding == "signed" and stop - start != 1:
            raise ValueError("signed encoding uses exactly one input column")
        if self.activation != "relu":
            raise ValueError("only relu hidden activations are supported")

    @property
    def n_layers(self) -> int:
        """Number of affine layers."""
        return len(self.layer_sizes) - 1

    @property
    def n_outputs(self) -> int:
        return self.layer_sizes[-1]

    @property
    def n_features(self) -> int:
        """Width of the non-sensitive part of the input."""
        start, stop = self.sensitive_slice
        return self.layer_sizes[0] - (stop - start)

    @property
    def sensitive_width(self) -> int:
        start, stop = self.sensitive_slice
        return stop - start

    @classmethod
    def for_features(cls, n_features: int, hidden, n_outputs: int,
                     n_sensitive: int, encoding: str = "onehot") -> "NetworkSpec":
        """Spec with the sensitive encoding appended after ``n_features`` columns."""
        width = 1 if encoding == "signed" else n_sensitive
        sizes = (n_features + width, *hidden, n_outputs)
        return cls(sizes, (n_features, n_features + width), encoding)


@dataclass
class Parameters:
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    version: int = 0

    def copy(self) -> "Parameters":
        return Parameters([w.copy() for w in self.weights],
                          [b.copy() for b in self.biases], self.version)

    def arrays(self) -> list[np.ndarray]:
        return [*self.weights, *self.biases]

    def flat(self) -> np.ndarray:
        return np.concatenate([a.ravel() for a in self.arrays()])

    def check(self, spec: NetworkSpec) -> None:
        if len(self.weights) != spec.n_layers or len(self.biases) != spec.n_layers:
            raise ShapeError("parameter layer count does not match spec")
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            expected = (spec.layer_sizes[i + 1], spec.layer_sizes[i])
            if w.shape != expected or b.shape != (expected[0],):
                raise ShapeError(f"layer {i}: got {w.shape}/{b.shape}, expected {expected}")
        if not all(np.isfinite(a).all() for a in self.arrays()):
            raise ValueError("parameters contain non-finite entries")


@dataclass
class ForwardTrace:
    """Pre- and post-activation values of every layer.

    ``post[0]`` is the network input; ``pre[i]``/``post[i]`` for ``i >= 1``
    belong to layer ``i``.  The last layer is linear so
    ``post[-1] is pre[-1]`` holds the logits.
    """

    pre: list[np.ndarray]
    post: list[np.ndarray]
    version: int
    batched: bool = field(default=False)

    @property
    def inputs(self) -> np.ndarray:
        return self.post[0]

    @property
    def output(self) -> np.ndarray:
        return self.post[-1]


@dataclass
class GradientSet:
    weights: list[np.ndarray]
    biases: list[np.ndarray]

    def arrays(self) -> list[np.ndarray]:
        return [*self.weights, *self.biases]

    def flat(self) -> np.ndarray:
        return np.concatenate([a.ravel() for a in self.arrays()])

    def scaled(self, factor: float) -> "GradientSet":
        return GradientSet([w * factor for w in self.weights], [b * factor for b in self.biases])

    def __add__(self, other: "GradientSet") -> "GradientSet":
        return GradientSet([a + b for a, b in zip(self.weights, other.weights)],
                           [a + b for a, b in zip(self.biases, other.biases)])


def zeros_like(params: Parameters) -> GradientSet:
    return GradientSet([np.zeros_like(w) for w in params.weights],
                       [np.zeros_like(b) for b in params.biases])


def encode_sensitive(spec: NetworkSpec, s, n_values: int | None = None) -> np.ndarray:
    """Encoding rows for sensitive value indices ``s``.

    One-hot mode needs the slice width to equal the number of values.  In
    signed mode index 0 maps to -1 and index 1 to +1.
    """
    s = np.asarray(s)
    width = spec.sensitive_width
    if spec.encoding == "signed":
        if np.any((s < 0) | (s > 1)):
            raise ValueError("signed encoding supports sensitive indices 0 and 1 only")
        return (2.0 * s - 1.0).astype(np.float64)[..., None]
    if np.any((s < 0) | (s >= width)):
        raise ValueError(f"sensitive index out of range for width {width}")
    return np.eye(width)[s]


def build_input(spec: NetworkSpec, x, s) -> np.ndarray:
    """Assemble network inputs from features ``x`` and sensitive values ``s``.

    ``s`` is either integer value indices or a float encoding whose last axis
    has the sensitive slice width.
    """
    x = np.asarray(x, dtype=np.float64)
    batched = x.ndim == 2
    xb = np.atleast_2d(x)
    if xb.shape[1] != spec.n_features:
        raise ShapeError(f"expected {spec.n_features} features, got {xb.shape[1]}")
    s_arr = np.asarray(s)
    if np.issubdtype(s_arr.dtype, np.integer):
        enc = encode_sensitive(spec, s_arr)
    else:
        enc = s_arr.astype(np.float64)
        if enc.shape[-1] != spec.sensitive_width:
            raise ShapeError(f"sensitive encoding width {enc.shape[-1]} != {spec.sensitive_width}")
    enc = np.broadcast_to(np.atleast_2d(enc), (xb.shape[0], spec.sensitive_width))
    start, stop = spec.sensitive_slice
    out = np.empty((xb.shape[0], spec.layer_sizes[0]))
    out[:, :start] = xb[:, :start]
    out[:, start:stop] = enc
    out[:, stop:] = xb[:, start:]
    return out if batched else out[0]


def forward_inputs(spec: NetworkSpec, params: Parameters, inputs) -> ForwardTrace:
    """Forward pass on fully assembled input rows."""
    a = np.asarray(inputs, dtype=np.float64)
    batched = a.ndim == 2
    a = np.atleast_2d(a)
    if a.shape[1] != spec.layer_sizes[0]:
        raise ShapeError(f"input width {a.shape[1]} != {spec.layer_sizes[0]}")
    pre = [a]
    post = [a]
    last = spec.n_layers - 1
    start, stop = spec.sensitive_slice
    for i, (w, b) in enumerate(zip(params.weights, params.biases)):
        if i == 0:
            # sensitive block summed on its own so tied group weights give
            # bit-identical pre-activations for every one-hot value
            z = a[:, :start] @ w[:, :start].T
            if stop < a.shape[1]:
                z += a[:, stop:] @ w[:, stop:].T
            z += a[:, start:stop] @ w[:, start:stop].T
            z += b
        else:
            z = a @ w.T + b
        a = z if i == last else np.maximum(z, 0.0)
        pre.append(z)
        post.append(a)
    if not batched:
        pre = [p[0] for p in pre]
        post = [p[0] for p in post]
    return ForwardTrace(pre, post, params.version, batched)


def forward(spec: NetworkSpec, params: Parameters, x, s) -> ForwardTrace:
    return forward_inputs(spec, params, build_input(spec, x, s))


def logits(spec: NetworkSpec, params: Parameters, x, s) -> np.ndarray:
    return forward(spec, params, x, s).output


def labels_from_logits(z: np.ndarray) -> np.ndarray:
    """Class labels in ``1..K``; ties go to the lowest index.

    A single output is a binary decision: label 2 iff the logit is > 0.
    """
    z = np.asarray(z)
    if z.shape[-1] == 1:
        return np.where(z[..., 0] > 0.0, 2, 1)
    return np.argmax(z, axis=-1) + 1


def predict(spec: NetworkSpec, params: Parameters, x, s):
    labels = labels_from_logits(logits(spec, params, x, s))
    return int(labels) if np.ndim(labels) == 0 else labels


def _log_softmax(z: np.ndarray) -> np.ndarray:
    if z.shape[-1] == 1:
        # single logit: two-class problem with logits (0, z)
        z = np.concatenate([np.zeros_like(z), z], axis=-1)
    m = z.max(axis=-1, keepdims=True)
    shifted = z - m
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def softmax(z: np.ndarray) -> np.ndarray:
    return np.exp(_log_softmax(np.asarray(z, dtype=np.float64)))


def _label_index(y, n_classes: int) -> np.ndarray:
    y = np.asarray(y)
    if np.any((y < 1) | (y > n_classes)):
        raise ValueError(f"labels must lie in 1..{n_classes}")
    return y.astype(np.intp) - 1


def loss(trace: ForwardTrace, y) -> float | np.ndarray:
    """Softmax cross-entropy; per-sample values for a batched trace."""
    z = np.atleast_2d(trace.output)
    logp = _log_softmax(z)
    idx = _label_index(np.atleast_1d(y), logp.shape[-1])
    per = -logp[np.arange(len(idx)), idx]
    return per if trace.batched else float(per[0])


def _output_delta(z: np.ndarray, y) -> np.ndarray:
    """d loss / d logits for softmax cross-entropy."""
    p = np.exp(_log_softmax(z))
    idx = _label_index(np.atleast_1d(y), p.shape[-1])
    p[np.arange(len(idx)), idx] -= 1.0
    if z.shape[-1] == 1:
        return p[:, 1:]
    return p


def backward(spec: NetworkSpec, params: Parameters, trace: ForwardTrace, y,
             sample_weights=None) -> GradientSet:
    """Exact gradient of the (weighted mean) loss over the traced batch.

    Without ``sample_weights`` the batch loss is the plain mean.  With
    weights ``w`` the objective is ``sum_i w_i loss_i``.  The ReLU
    derivative at 0 is taken as 0.
    """
    if trace.version != params.version:
        raise StaleTraceError(f"trace version {trace.version} != parameter version {params.version}")
    pre = [np.atleast_2d(p) for p in trace.pre]
    post = [np.atleast_2d(p) for p in trace.post]
    n = post[0].shape[0]
    delta = _output_delta(pre[-1], y)
    if sample_weights is None:
        delta /= n
    else:
        delta *= np.asarray(sample_weights, dtype=np.float64).reshape(n, 1)
    gw: list[np.ndarray] = [None] * spec.n_layers
    gb: list[np.ndarray] = [None] * spec.n_layers
    for i in range(spec.n_layers - 1, -1, -1):
        gw[i] = delta.T @ post[i]
        gb[i] = delta.sum(axis=0)
        if i:
            delta = (delta @ params.weights[i]) * (pre[i] > 0.0)
    return GradientSet(gw, gb)


def input_deltas(spec: NetworkSpec, params: Parameters, trace: ForwardTrace, y,
                 layer: int = 1) -> np.ndarray:
    """Per-sample d loss_i / d pre-activation of ``layer`` (1-based)."""
    pre = [np.atleast_2d(p) for p in trace.pre]
    delta = _output_delta(pre[-1], y)
    for i in range(spec.n_layers - 1, layer - 1, -1):
        delta = (delta @ params.weights[i]) * (pre[i] > 0.0)
    return delta


def subnetwork_output(spec: NetworkSpec, params: Parameters, trace: ForwardTrace,
                      i: int, j: int):
    """Value of neuron ``(i, j)``: layer ``i`` (0 = inputs), 1-based index ``j``.

    Hidden neurons report their post-activation value; output neurons report
    the logit.
    """
    if not 0 <= i <= spec.n_layers or not 1 <= j <= spec.layer_sizes[i]:
        raise IndexError(f"neuron ({i}, {j}) does not exist")
    values = trace.post[i]
    return values[..., j - 1]


def apply_update(params: Parameters, update: GradientSet, lr: float) -> Parameters:
    """New parameters ``theta - lr * update`` with the version bumped."""
    return Parameters([w - lr * g for w, g in zip(params.weights, update.weights)],
                      [b - lr * g for b, g in zip(params.biases, update.biases)],
                      params.version + 1)
