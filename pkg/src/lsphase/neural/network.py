"""Small convolutional encoder-decoder regressors with exact backprop.

One architecture family covers all four roles:

* a U-shaped body: per level two 3x3 convolutions with leaky-ReLU, 2x
  average-pool downsampling, a bottleneck convolution, then nearest-neighbor
  upsampling with convolution and skip concatenation back up;
* a linear 1x1 head producing the single-channel output;
* roles L, H and L3 add a global residual connection from the input to the
  output, and the head starts at zero so they begin as the identity;
* role S ("synthesizer") has no residual but a bypass: its body consumes the
  low-band estimate only, and the high-band estimate is concatenated
  unchanged right before the head. Its head starts as a pass-through of the
  bypassed channel, again giving a non-degenerate starting point.

All tensors are (batch, channel, height, width) float64 numpy arrays.
Gradients are hand-derived per primitive and checked against finite
differences in the test suite.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field as dc_field

import numpy as np

from ..errors import DimensionError, FormatError
from ..kernels import conv2d_backward, conv2d_forward

ROLES = ("L", "H", "S", "L3")


@dataclass(frozen=True)
class NetworkSpec:
    role: str
    widths: tuple
    kernel_size: int = 3
    leaky_slope: float = 0.1
    residual: bool = True
    bypass: bool = False

    def __post_init__(self):
        object.__setattr__(self, "widths", tuple(int(w) for w in self.widths))
        if self.role not in ROLES:
            raise DimensionError(f"unknown role {self.role!r}")
        if not self.widths or min(self.widths) < 1:
            raise DimensionError("widths must be positive")
        if self.kernel_size < 1 or self.kernel_size % 2 == 0:
            raise DimensionError("kernel size must be odd")
        if self.role == "S":
            if not self.bypass or self.residual:
                raise DimensionError("role S requires bypass=True, residual=False")
        elif self.bypass:
            raise DimensionError("bypass is reserved for role S")

    @property
    def depth(self) -> int:
        return len(self.widths)

    @property
    def input_fields(self) -> int:
        """Distinct input rasters: 2 for the synthesizer, else 1."""
        return 2 if self.bypass else 1

    @classmethod
    def for_role(cls, role: str, widths, kernel_size: int = 3,
                 leaky_slope: float = 0.1) -> "NetworkSpec":
        bypass = role == "S"
        return cls(role=role, widths=tuple(widths), kernel_size=kernel_size,
                   leaky_slope=leaky_slope, residual=not bypass, bypass=bypass)


def layer_defs(spec: NetworkSpec) -> list[tuple[str, int, int, int]]:
    """(name, in_channels, out_channels, kernel) for every convolution, in
    forward order."""
    k = spec.kernel_size
    w = spec.widths
    defs = []
    cin = 1
    for i, wi in enumerate(w):
        defs.append((f"enc{i}_a", cin, wi, k))
        defs.append((f"enc{i}_b", wi, wi, k))
        cin = wi
    defs.append(("bott", w[-1], w[-1], k))
    prev = w[-1]
    for i in reversed(range(len(w))):
        defs.append((f"dec{i}_a", prev, w[i], k))
        defs.append((f"dec{i}_b", 2 * w[i], w[i], k))
        prev = w[i]
    head_in = w[0] + 1 if spec.bypass else w[0]
    defs.append(("head", head_in, 1, 1))
    return defs


def parameter_count(spec: NetworkSpec) -> int:
    return sum(cin * cout * k * k + cout for _, cin, cout, k in layer_defs(spec))


@dataclass
class NetworkState:
    spec: NetworkSpec
    params: dict
    m: dict = dc_field(default_factory=dict)
    v: dict = dc_field(default_factory=dict)
    step: int = 0

    def param_keys(self) -> list[str]:
        return sorted(self.params)

    def copy_params(self) -> dict:
        return {k: p.copy() for k, p in self.params.items()}


def init_state(spec: NetworkSpec, seed: int) -> NetworkState:
    """Fan-in-scaled uniform weights, zero biases. The head starts at zero
    (residual roles begin as the identity); a bypass head starts as a
    pass-through of the bypassed channel."""
    rng = np.random.default_rng(seed)
    params = {}
    for name, cin, cout, k in layer_defs(spec):
        if name == "head":
            w = np.zeros((cout, cin, k, k))
            if spec.bypass:
                w[0, -1, 0, 0] = 1.0
        else:
            limit = 1.0 / np.sqrt(cin * k * k)
            w = rng.uniform(-limit, limit, size=(cout, cin, k, k))
        params[f"{name}.w"] = w
        params[f"{name}.b"] = np.zeros(cout)
    m = {key: np.zeros_like(p) for key, p in params.items()}
    v = {key: np.zeros_like(p) for key, p in params.items()}
    return NetworkState(spec=spec, params=params, m=m, v=v, step=0)


# -- primitives --------------------------------------------------------------


def _lrelu(x, slope):
    return np.where(x > 0, x, slope * x)


def _lrelu_bw(g, pre, slope):
    return g * np.where(pre > 0, 1.0, slope)


def _avgpool2(x):
    b, c, h, w = x.shape
    return x.reshape(b, c, h // 2, 2, w // 2, 2).mean(axis=(3, 5))


def _avgpool2_bw(g):
    return np.repeat(np.repeat(g, 2, axis=2), 2, axis=3) * 0.25


def _upsample2(x):
    return np.repeat(np.repeat(x, 2, axis=2), 2, axis=3)


def _upsample2_bw(g):
    b, c, h, w = g.shape
    return g.reshape(b, c, h // 2, 2, w // 2, 2).sum(axis=(3, 5))


def forward(spec: NetworkSpec, state: NetworkState, x: np.ndarray,
            aux: np.ndarray | None = None):
    """Run the network; returns (output, cache). `aux` is the bypassed
    second input and is required exactly for bypass specs."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 4 or x.shape[1] != 1:
        raise DimensionError(f"input must be (batch, 1, H, W), got {x.shape}")
    h_, w_ = x.shape[2:]
    factor = 2 ** spec.depth
    if h_ % factor or w_ % factor:
        raise DimensionError(f"spatial dims must be divisible by {factor}")
    if spec.bypass:
        if aux is None:
            raise DimensionError("bypass spec requires the aux input")
        aux = np.asarray(aux, dtype=np.float64)
        if aux.shape != x.shape:
            raise DimensionError("aux shape must match the input shape")
    elif aux is not None:
        raise DimensionError("aux given to a non-bypass spec")

    p = state.params
    slope = spec.leaky_slope
    cache = {"x": x, "aux": aux, "conv_in": {}, "pre": {}}

    def conv_act(name, h):
        cache["conv_in"][name] = h
        pre = conv2d_forward(h, p[f"{name}.w"], p[f"{name}.b"])
        cache["pre"][name] = pre
        return _lrelu(pre, slope)

    h = x
    skips = []
    for i in range(spec.depth):
        h = conv_act(f"enc{i}_a", h)
        h = conv_act(f"enc{i}_b", h)
        skips.append(h)
        h = _avgpool2(h)
    h = conv_act("bott", h)
    for i in reversed(range(spec.depth)):
        h = _upsample2(h)
        h = conv_act(f"dec{i}_a", h)
        h = np.concatenate([h, skips[i]], axis=1)
        h = conv_act(f"dec{i}_b", h)
    if spec.bypass:
        h = np.concatenate([h, aux], axis=1)
    cache["conv_in"]["head"] = h
    y = conv2d_forward(h, p["head.w"], p["head.b"])
    if spec.residual:
        y = y + x
    return y, cache


def backward(spec: NetworkSpec, state: NetworkState, cache: dict,
             gy: np.ndarray) -> dict:
    """Exact gradients of every weight and bias for the cached forward pass.
    Returns a dict keyed like `state.params`."""
    if "conv_in" not in cache or "head" not in cache["conv_in"]:
        raise DimensionError("stale or foreign forward cache")
    p = state.params
    slope = spec.leaky_slope
    grads = {}

    def conv_bw(name, g):
        dx, dw, db = conv2d_backward(cache["conv_in"][name], p[f"{name}.w"], g)
        grads[f"{name}.w"] = dw
        grads[f"{name}.b"] = db
        return dx

    def conv_act_bw(name, g):
        return conv_bw(name, _lrelu_bw(g, cache["pre"][name], slope))

    g = conv_bw("head", np.asarray(gy, dtype=np.float64))
    if spec.bypass:
        g = g[:, :-1]  # the bypassed channel needs no gradient
    skip_grads = {}
    for i in range(spec.depth):
        g = conv_act_bw(f"dec{i}_b", g)
        w_i = spec.widths[i]
        g, skip_grads[i] = g[:, :w_i], g[:, w_i:]
        g = conv_act_bw(f"dec{i}_a", g)
        g = _upsample2_bw(g)
    g = conv_act_bw("bott", g)
    for i in reversed(range(spec.depth)):
        g = _avgpool2_bw(g) + skip_grads[i]
        g = conv_act_bw(f"enc{i}_b", g)
        g = conv_act_bw(f"enc{i}_a", g)
    return grads


def predict(state: NetworkState, x: np.ndarray,
            aux: np.ndarray | None = None) -> np.ndarray:
    return forward(state.spec, state, x, aux)[0]


# -- persistence (LSNN container) --------------------------------------------

_NN_MAGIC = b"LSNN"
_NN_VERSION = 1


def save_network(state: NetworkState, path) -> None:
    """LSNN container: magic, version, JSON spec echo, then per-parameter
    float32 blobs. Optimizer moments are not persisted; a loaded state is an
    inference artifact with fresh moments."""
    spec = state.spec
    spec_doc = {
        "role": spec.role, "widths": list(spec.widths),
        "kernel_size": spec.kernel_size, "leaky_slope": spec.leaky_slope,
        "residual": spec.residual, "bypass": spec.bypass,
    }
    blob = json.dumps(spec_doc, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(_NN_MAGIC)
        fh.write(struct.pack("<I", _NN_VERSION))
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        keys = state.param_keys()
        fh.write(struct.pack("<I", len(keys)))
        for key in keys:
            arr = np.ascontiguousarray(state.params[key], dtype="<f4")
            name = key.encode()
            fh.write(struct.pack("<H", len(name)))
            fh.write(name)
            fh.write(struct.pack("<B", arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            fh.write(arr.tobytes())


def load_network(path) -> NetworkState:
    with open(path, "rb") as fh:
        data = fh.read()
    try:
        if data[:4] != _NN_MAGIC:
            raise FormatError(f"{path}: bad magic {data[:4]!r}")
        pos = 4
        version, blob_len = struct.unpack_from("<II", data, pos)
        pos += 8
        if version != _NN_VERSION:
            raise FormatError(f"{path}: unsupported version {version}")
        spec_doc = json.loads(data[pos:pos + blob_len].decode())
        pos += blob_len
        spec = NetworkSpec(role=spec_doc["role"], widths=tuple(spec_doc["widths"]),
                           kernel_size=spec_doc["kernel_size"],
                           leaky_slope=spec_doc["leaky_slope"],
                           residual=spec_doc["residual"], bypass=spec_doc["bypass"])
        (n_keys,) = struct.unpack_from("<I", data, pos)
        pos += 4
        params = {}
        for _ in range(n_keys):
            (name_len,) = struct.unpack_from("<H", data, pos)
            pos += 2
            key = data[pos:pos + name_len].decode()
            pos += name_len
            (rank,) = struct.unpack_from("<B", data, pos)
            pos += 1
            shape = struct.unpack_from(f"<{rank}I", data, pos)
            pos += 4 * rank
            count = int(np.prod(shape))
            arr = np.frombuffer(data, dtype="<f4", count=count, offset=pos)
            pos += 4 * count
            params[key] = arr.reshape(shape).astype(np.float64)
    except (struct.error, IndexError, ValueError, KeyError) as exc:
        raise FormatError(f"{path}: corrupt network container ({exc})") from exc
    expected = {f"{n}.{s}" for n, _, _, _ in layer_defs(spec) for s in ("w", "b")}
    if set(params) != expected:
        raise FormatError(f"{path}: parameter set does not match the spec echo")
    m = {key: np.zeros_like(p) for key, p in params.items()}
    v = {key: np.zeros_like(p) for key, p in params.items()}
    return NetworkState(spec=spec, params=params, m=m, v=v, step=0)
