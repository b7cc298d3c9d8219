"""Fully connected tanh networks with flat-parameter-vector semantics.

A network is described by an :class:`MlpSpec`; its weights and biases live
in one flat float64 vector laid out layer by layer (weight matrix in row
order, then bias).  Two-network problems concatenate both vectors into a
single state whose layout is the ordered pair of specs.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from . import autodiff

_PVEC_MAGIC = b"PVEC1\n"


@dataclass(frozen=True)
class MlpSpec:
    """Architecture of one scalar-output feed-forward network."""

    input_dim: int
    hidden: tuple[int, ...]
    output_dim: int = 1
    activation: str = "tanh"

    def __post_init__(self):
        object.__setattr__(self, "hidden", tuple(int(w) for w in self.hidden))
        if self.input_dim < 1 or self.output_dim < 1:
            raise ValueError("input_dim and output_dim must be >= 1")
        if any(w < 1 for w in self.hidden):
            raise ValueError("hidden widths must be >= 1")
        if self.activation != "tanh":
            raise ValueError(f"unsupported activation {self.activation!r}")

    def layer_dims(self):
        """List of (fan_in, fan_out) per affine layer."""
        widths = (self.input_dim, *self.hidden, self.output_dim)
        return list(zip(widths[:-1], widths[1:]))

    @property
    def n_params(self):
        return count_params(self)

    def to_dict(self):
        return {
            "input_dim": self.input_dim,
            "hidden": list(self.hidden),
            "output_dim": self.output_dim,
            "activation": self.activation,
        }

    @staticmethod
    def from_dict(d):
        return MlpSpec(
            int(d["input_dim"]),
            tuple(d["hidden"]),
            int(d.get("output_dim", 1)),
            d.get("activation", "tanh"),
        )


def count_params(spec: MlpSpec) -> int:
    """Exact parameter count: sum over layers of fan_in*fan_out + fan_out."""
    return sum(fi * fo + fo for fi, fo in spec.layer_dims())


def layout_n_params(layout) -> int:
    if isinstance(layout, MlpSpec):
        return count_params(layout)
    return sum(count_params(s) for s in layout)


def layout_offsets(layout):
    """Start offset of each network's slice in the concatenated vector."""
    if isinstance(layout, MlpSpec):
        return (0,)
    offs, pos = [], 0
    for s in layout:
        offs.append(pos)
        pos += count_params(s)
    return tuple(offs)


@dataclass(frozen=True)
class ParameterVector:
    """Flat parameter state plus the spec(s) describing its layout."""

    values: np.ndarray
    layout: MlpSpec | tuple[MlpSpec, ...]

    def __post_init__(self):
        v = np.ascontiguousarray(np.asarray(self.values, dtype=np.float64))
        v.setflags(write=False)
        object.__setattr__(self, "values", v)
        if v.ndim != 1 or v.size != layout_n_params(self.layout):
            raise ValueError(
                f"parameter vector length {v.size} does not match layout "
                f"({layout_n_params(self.layout)} expected)"
            )


def unflatten(spec: MlpSpec, vec):
    """Per-layer (W, b) views into a flat vector; inverse of `flatten`."""
    vec = np.asarray(vec)
    out, pos = [], 0
    for fi, fo in spec.layer_dims():
        W = vec[pos : pos + fi * fo].reshape(fo, fi)
        pos += fi * fo
        b = vec[pos : pos + fo]
        pos += fo
        out.append((W, b))
    if pos != vec.size:
        raise ValueError(f"vector length {vec.size}, layout needs {pos}")
    return out


def flatten(spec: MlpSpec, layers):
    parts = []
    for (fi, fo), (W, b) in zip(spec.layer_dims(), layers):
        W = np.asarray(W, dtype=np.float64)
        b = np.asarray(b, dtype=np.float64)
        if W.shape != (fo, fi) or b.shape != (fo,):
            raise ValueError("layer shapes do not match spec")
        parts.append(W.ravel())
        parts.append(b)
    return np.concatenate(parts)


def init_params(layout, seed) -> ParameterVector:
    """Glorot-uniform weights (±sqrt(6/(fan_in+fan_out))), zero biases."""
    rng = np.random.default_rng(seed)
    specs = (layout,) if isinstance(layout, MlpSpec) else tuple(layout)
    parts = []
    for spec in specs:
        for fi, fo in spec.layer_dims():
            bound = np.sqrt(6.0 / (fi + fo))
            parts.append(rng.uniform(-bound, bound, fi * fo))
            parts.append(np.zeros(fo))
    return ParameterVector(np.concatenate(parts), layout)


def forward(spec: MlpSpec, params, x) -> float:
    """Scalar network output at one point (vectorized path)."""
    x = np.atleast_1d(np.asarray(x, dtype=np.float64))
    if x.size != spec.input_dim:
        raise ValueError(
            f"input has {x.size} coordinates, spec expects {spec.input_dim}"
        )
    return float(forward_batch(spec, params, x[None, :])[0])


def forward_batch(spec: MlpSpec, params, X) -> np.ndarray:
    """Network outputs for a batch of points X of shape (n, input_dim)."""
    vec = params.values if isinstance(params, ParameterVector) else params
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != spec.input_dim:
        raise ValueError(
            f"batch shape {X.shape} incompatible with input_dim {spec.input_dim}"
        )
    layers = unflatten(spec, vec)
    Z = X
    for W, b in layers[:-1]:
        Z = np.tanh(Z @ W.T + b)
    W, b = layers[-1]
    out = Z @ W.T + b
    return out[:, 0] if spec.output_dim == 1 else out


def forward_generic(spec: MlpSpec, param_objs, x_objs):
    """Forward pass on generic scalars (floats, Expr, DualValue).

    Slow; used to route networks through the `autodiff` graph machinery.
    Returns the scalar output (output_dim must be 1).
    """
    if spec.output_dim != 1:
        raise ValueError("forward_generic supports scalar outputs only")
    z = list(x_objs)
    pos = 0
    dims = spec.layer_dims()
    for li, (fi, fo) in enumerate(dims):
        a = []
        for o in range(fo):
            acc = param_objs[pos + fi * fo + o]  # bias
            for i in range(fi):
                acc = acc + param_objs[pos + o * fi + i] * z[i]
            a.append(acc)
        pos += fi * fo + fo
        if li < len(dims) - 1:
            z = [autodiff.tanh(v) for v in a]
        else:
            z = a
    return z[0]


def network_fn(spec: MlpSpec, params):
    """Callable x_objs -> output with parameters bound as plain floats.

    Suitable for `autodiff.input_derivative` / `mixed_input_gradient`.
    """
    vec = params.values if isinstance(params, ParameterVector) else params
    vec = [float(v) for v in np.asarray(vec)]

    def fn(x_objs):
        return forward_generic(spec, vec, x_objs)

    return fn


# -- serialization -------------------------------------------------------


def _layout_meta(layout):
    if isinstance(layout, MlpSpec):
        return {"specs": [layout.to_dict()], "single": True}
    return {"specs": [s.to_dict() for s in layout], "single": False}


def _layout_from_meta(meta):
    specs = [MlpSpec.from_dict(d) for d in meta["specs"]]
    return specs[0] if meta.get("single", len(specs) == 1) else tuple(specs)


def save_parameter_vector(path, pv: ParameterVector):
    """Binary form: magic, one JSON header line, little-endian float64 payload."""
    header = json.dumps(_layout_meta(pv.layout), sort_keys=True)
    with open(path, "wb") as f:
        f.write(_PVEC_MAGIC)
        f.write(header.encode("ascii") + b"\n")
        f.write(pv.values.astype("<f8").tobytes())


def load_parameter_vector(path) -> ParameterVector:
    with open(path, "rb") as f:
        magic = f.read(len(_PVEC_MAGIC))
        if magic != _PVEC_MAGIC:
            raise ValueError(f"{path}: not a parameter-vector file")
        header = json.loads(f.readline().decode("ascii"))
        payload = f.read()
    values = np.frombuffer(payload, dtype="<f8").astype(np.float64)
    return ParameterVector(values, _layout_from_meta(header))


def save_parameter_vector_text(path, pv: ParameterVector):
    """Debug-friendly text form (full round-trip precision)."""
    with open(path, "w") as f:
        f.write(json.dumps(_layout_meta(pv.layout), sort_keys=True) + "\n")
        for v in pv.values:
            f.write(repr(float(v)) + "\n")


def load_parameter_vector_text(path) -> ParameterVector:
    with open(path) as f:
        meta = json.loads(f.readline())
        values = np.array([float(line) for line in f if line.strip()])
    return ParameterVector(values, _layout_from_meta(meta))
