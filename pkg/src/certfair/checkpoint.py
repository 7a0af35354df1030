"""Weight checkpoint files.

Layout: a UTF-8 header of ``key value...`` lines terminated by a line
containing only ``---``, then the payload.  Header keys::

    certfair-checkpoint 1
    layer_sizes 14 64 32 2
    activation relu
    sensitive_slice 12 14
    encoding onehot
    version 0
    format binary            # or: text

The payload lists every weight matrix (layer order, row-major, shape
``(out, in)``) followed by every bias vector.  ``binary`` stores the values
as little-endian float64; ``text`` stores one ``repr`` float per line.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .network import NetworkSpec, Parameters

MAGIC = "certfair-checkpoint"


def _header(spec: NetworkSpec, params: Parameters, fmt: str) -> str:
    lines = [
        f"{MAGIC} 1",
        "layer_sizes " + " ".join(map(str, spec.layer_sizes)),
        f"activation {spec.activation}",
        "sensitive_slice {} {}".format(*spec.sensitive_slice),
        f"encoding {spec.encoding}",
        f"version {params.version}",
        f"format {fmt}",
        "---",
    ]
    return "\n".join(lines) + "\n"


def save_checkpoint(path, spec: NetworkSpec, params: Parameters, fmt: str = "binary") -> Path:
    if fmt not in ("binary", "text"):
        raise ValueError(f"unknown checkpoint format {fmt!r}")
    params.check(spec)
    path = Path(path)
    values = params.flat()
    with open(path, "wb") as fh:
        fh.write(_header(spec, params, fmt).encode())
        if fmt == "binary":
            fh.write(values.astype("<f8").tobytes())
        else:
            fh.write("".join(f"{v!r}\n" for v in values.tolist()).encode())
    return path


def load_checkpoint(path) -> tuple[NetworkSpec, Parameters]:
    raw = Path(path).read_bytes()
    marker = b"\n---\n"
    cut = raw.find(marker)
    if cut < 0:
        raise ValueError(f"{path}: missing header terminator")
    header = {}
    for line in raw[:cut].decode().splitlines():
        key, _, rest = line.strip().partition(" ")
        header[key] = rest.split()
    if header.get(MAGIC) != ["1"]:
        raise ValueError(f"{path}: not a certfair checkpoint")
    spec = NetworkSpec(tuple(int(v) for v in header["layer_sizes"]),
                       tuple(int(v) for v in header["sensitive_slice"]),
                       header["encoding"][0], header["activation"][0])
    payload = raw[cut + len(marker):]
    if header["format"][0] == "binary":
        values = np.frombuffer(payload, dtype="<f8").astype(np.float64)
    else:
        values = np.array([float(v) for v in payload.decode().split()])
    sizes = spec.layer_sizes
    shapes = [(sizes[i + 1], sizes[i]) for i in range(spec.n_layers)]
    expected = sum(a * b for a, b in shapes) + sum(sizes[1:])
    if values.size != expected:
        raise ValueError(f"{path}: expected {expected} values, found {values.size}")
    weights, offset = [], 0
    for shape in shapes:
        n = shape[0] * shape[1]
        weights.append(values[offset:offset + n].reshape(shape).copy())
        offset += n
    biases = []
    for width in sizes[1:]:
        biases.append(values[offset:offset + width].copy())
        offset += width
    params = Parameters(weights, biases, int(header["version"][0]))
    params.check(spec)
    return spec, params
