"""Scalar energy network over (feature grid, box) pairs, with hand-rolled backprop.

Architecture: the BEV-pooled vector is concatenated with two small encoders
(two dense layers each, ReLU after both) applied to the box center height
cz and the box height h; the concatenation passes through a three-layer
dense head, ReLU after the first two layers, linear scalar output.

All math is float64 numpy. Gradients w.r.t. the 7 box coordinates
(cx, cy, cz, h, w, l, yaw) and w.r.t. all parameters are computed
analytically; a batched core serves training and scanning, and the
single-box entry points are batch-of-one wrappers so both paths produce
bit-identical values.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, NumericError
from .featuregrid import FeatureGrid
from .geometry import Box3D
from .pooling import PoolConfig, pool_bev_batch

CHECKPOINT_MAGIC = b"BOXEBMCK"
CHECKPOINT_VERSION = 1

# Column order of box coordinates everywhere in this module.
BOX_PARAMS = ("cx", "cy", "cz", "h", "w", "l", "yaw")
_BEV_COLS = np.array([0, 1, 4, 5, 6])  # cx, cy, w, l, yaw columns of a box row


@dataclass(frozen=True)
class EnergyNetDims:
    """Layer sizing. feat_len must equal grid_w * grid_l * channels."""

    feat_len: int
    enc_dim: int = 16
    head_dims: tuple[int, int] = (1024, 1024)

    @property
    def input_len(self) -> int:
        return self.feat_len + 2 * self.enc_dim


@dataclass
class DenseLayer:
    W: np.ndarray  # (out, in)
    b: np.ndarray  # (out,)


@dataclass
class EnergyNetParams:
    dims: EnergyNetDims
    enc_cz: list[DenseLayer]
    enc_h: list[DenseLayer]
    head: list[DenseLayer]

    def named_tensors(self):
        """(name, array) pairs in fixed declaration order (checkpoint layout)."""
        for group, layers in (("enc_cz", self.enc_cz), ("enc_h", self.enc_h), ("head", self.head)):
            for i, layer in enumerate(layers):
                yield f"{group}.{i}.W", layer.W
                yield f"{group}.{i}.b", layer.b

    def to_vector(self) -> np.ndarray:
        return np.concatenate([a.ravel() for _, a in self.named_tensors()])

    def from_vector(self, vec: np.ndarray) -> "EnergyNetParams":
        out = init_params(0, self.dims)
        pos = 0
        for (_, dst), (_, src) in zip(out.named_tensors(), self.named_tensors()):
            n = src.size
            dst[...] = vec[pos:pos + n].reshape(src.shape)
            pos += n
        if pos != vec.size:
            raise ConfigError(f"parameter vector has {vec.size} entries, expected {pos}")
        return out

    @property
    def n_params(self) -> int:
        return sum(a.size for _, a in self.named_tensors())

    def param_offsets(self) -> dict:
        """name -> (start, size) into the flat parameter vector."""
        out = {}
        pos = 0
        for name, arr in self.named_tensors():
            out[name] = (pos, arr.size)
            pos += arr.size
        return out


@dataclass(frozen=True)
class EnergyEval:
    value: float
    grad_box: np.ndarray | None = None  # (7,) d value / d (cx, cy, cz, h, w, l, yaw)
    grad_params: np.ndarray | None = None  # flat, checkpoint order


def init_params(seed: int, dims: EnergyNetDims) -> EnergyNetParams:
    """He fan-in normal weights, zero biases, deterministic in the seed."""
    rng = np.random.default_rng(seed)

    def dense(n_out, n_in):
        w = rng.normal(0.0, np.sqrt(2.0 / n_in), size=(n_out, n_in))
        return DenseLayer(W=w, b=np.zeros(n_out))

    e = dims.enc_dim
    h1, h2 = dims.head_dims
    return EnergyNetParams(
        dims=dims,
        enc_cz=[dense(e, 1), dense(e, e)],
        enc_h=[dense(e, 1), dense(e, e)],
        head=[dense(h1, dims.input_len), dense(h2, h1), dense(1, h2)],
    )


def _check_finite(arr: np.ndarray, where: str):
    if not np.all(np.isfinite(arr)):
        raise NumericError("non-finite activation", where=where)


def _enc_forward(layers, x: np.ndarray, where: str):
    """x: (B,) scalars -> pre/post activations of the two ReLU layers."""
    z1 = x[:, None] * layers[0].W[:, 0][None, :] + layers[0].b[None, :]
    _check_finite(z1, f"{where}.0")
    a1 = np.maximum(z1, 0.0)
    z2 = a1 @ layers[1].W.T + layers[1].b[None, :]
    _check_finite(z2, f"{where}.1")
    return z1, a1, z2, np.maximum(z2, 0.0)


def _validate(params: EnergyNetParams, grid: FeatureGrid, cfg: PoolConfig):
    expect = cfg.feature_len(grid.channels)
    if params.dims.feat_len != expect:
        raise ConfigError(
            f"network expects pooled length {params.dims.feat_len}, "
            f"pool config x grid gives {expect}"
        )


def forward_batch(params: EnergyNetParams, grid: FeatureGrid, boxes: np.ndarray, cfg: PoolConfig,
                  with_box_jac: bool = False):
    """Energies for box rows (B, 7). Returns (values (B,), cache dict)."""
    _validate(params, grid, cfg)
    boxes = np.asarray(boxes, dtype=float)
    pooled, pooled_jac = pool_bev_batch(grid, boxes[:, _BEV_COLS], cfg, with_jac=with_box_jac)
    cz1, ca1, cz2, ca2 = _enc_forward(params.enc_cz, boxes[:, 2], "enc_cz")
    hz1, ha1, hz2, ha2 = _enc_forward(params.enc_h, boxes[:, 3], "enc_h")
    h5 = np.concatenate([pooled, ca2, ha2], axis=1)
    w1, w2, w3 = params.head
    z1 = h5 @ w1.W.T + w1.b[None, :]
    _check_finite(z1, "head.0")
    a1 = np.maximum(z1, 0.0)
    z2 = a1 @ w2.W.T + w2.b[None, :]
    _check_finite(z2, "head.1")
    a2 = np.maximum(z2, 0.0)
    values = a2 @ w3.W[0] + w3.b[0]
    _check_finite(values, "head.2")
    cache = dict(
        boxes=boxes, pooled=pooled, pooled_jac=pooled_jac, h5=h5,
        cz1=cz1, ca1=ca1, cz2=cz2, hz1=hz1, ha1=ha1, hz2=hz2,
        z1=z1, a1=a1, z2=z2, a2=a2,
    )
    return values, cache


def _head_backward(params, cache, delta: np.ndarray):
    """Backprop the head with per-row output weights delta (B,). Returns
    (dh5 (B, n5), head param grads in layer order)."""
    w1, w2, w3 = params.head
    a1, a2, z1, z2, h5 = cache["a1"], cache["a2"], cache["z1"], cache["z2"], cache["h5"]
    d3 = delta  # (B,)
    dW3 = (d3 @ a2)[None, :]
    db3 = np.array([d3.sum()])
    da2 = d3[:, None] * w3.W[0][None, :]
    dz2 = da2 * (z2 > 0.0)
    dW2 = dz2.T @ a1
    db2 = dz2.sum(axis=0)
    da1 = dz2 @ w2.W
    dz1 = da1 * (z1 > 0.0)
    dW1 = dz1.T @ h5
    db1 = dz1.sum(axis=0)
    dh5 = dz1 @ w1.W
    return dh5, [(dW1, db1), (dW2, db2), (dW3, db3)]


def _enc_backward(layers, cache_z1, cache_a1, cache_z2, x: np.ndarray, dout: np.ndarray):
    """Backprop one scalar encoder. Returns (dx (B,), param grads)."""
    dz2 = dout * (cache_z2 > 0.0)
    dW2 = dz2.T @ cache_a1
    db2 = dz2.sum(axis=0)
    da1 = dz2 @ layers[1].W
    dz1 = da1 * (cache_z1 > 0.0)
    dW1 = (dz1 * x[:, None]).sum(axis=0)[:, None]
    db1 = dz1.sum(axis=0)
    dx = dz1 @ layers[0].W[:, 0]
    return dx, [(dW1, db1), (dW2, db2)]


def box_grad_batch(params: EnergyNetParams, grid: FeatureGrid, boxes: np.ndarray, cfg: PoolConfig):
    """Energies (B,) and gradients (B, 7) w.r.t. each box's coordinates."""
    values, cache = forward_batch(params, grid, boxes, cfg, with_box_jac=True)
    b = len(values)
    dh5, _ = _head_backward(params, cache, np.ones(b))
    n4 = params.dims.feat_len
    e = params.dims.enc_dim
    grad = np.zeros((b, 7))
    # pooled part -> (cx, cy, w, l, yaw)
    bev = np.einsum("bn,bnp->bp", dh5[:, :n4], cache["pooled_jac"])
    grad[:, _BEV_COLS] = bev
    grad[:, 2], _ = _enc_backward(params.enc_cz, cache["cz1"], cache["ca1"], cache["cz2"],
                                  cache["boxes"][:, 2], dh5[:, n4:n4 + e])
    grad[:, 3], _ = _enc_backward(params.enc_h, cache["hz1"], cache["ha1"], cache["hz2"],
                                  cache["boxes"][:, 3], dh5[:, n4 + e:])
    _check_finite(grad, "box gradient")
    return values, grad


def weighted_param_grad(params: EnergyNetParams, cache: dict, coeffs: np.ndarray) -> np.ndarray:
    """sum_b coeffs[b] * d f(box_b) / d theta, flat in checkpoint order."""
    n4 = params.dims.feat_len
    e = params.dims.enc_dim
    dh5, head_grads = _head_backward(params, cache, np.asarray(coeffs, dtype=float))
    _, cz_grads = _enc_backward(params.enc_cz, cache["cz1"], cache["ca1"], cache["cz2"],
                                cache["boxes"][:, 2], dh5[:, n4:n4 + e])
    _, h_grads = _enc_backward(params.enc_h, cache["hz1"], cache["ha1"], cache["hz2"],
                               cache["boxes"][:, 3], dh5[:, n4 + e:])
    parts = []
    for dw, db in (*cz_grads, *h_grads, *head_grads):
        parts.append(dw.ravel())
        parts.append(db.ravel())
    return np.concatenate(parts)


def forward(params: EnergyNetParams, grid: FeatureGrid, box: Box3D, cfg: PoolConfig) -> EnergyEval:
    """Energy of one box (value only)."""
    values, _ = forward_batch(params, grid, box.as_array()[None, :], cfg)
    return EnergyEval(value=float(values[0]))


def backward_box(params: EnergyNetParams, grid: FeatureGrid, box: Box3D, cfg: PoolConfig) -> EnergyEval:
    """Energy and its gradient w.r.t. the 7 box coordinates."""
    values, grad = box_grad_batch(params, grid, box.as_array()[None, :], cfg)
    return EnergyEval(value=float(values[0]), grad_box=grad[0])


def backward_params(params: EnergyNetParams, grid: FeatureGrid, box: Box3D, cfg: PoolConfig) -> EnergyEval:
    """Energy and its gradient w.r.t. all parameters (flat, checkpoint order)."""
    values, cache = forward_batch(params, grid, box.as_array()[None, :], cfg)
    grad = weighted_param_grad(params, cache, np.ones(1))
    _check_finite(grad, "parameter gradient")
    return EnergyEval(value=float(values[0]), grad_params=grad)


def save_checkpoint(params: EnergyNetParams, path):
    """Versioned binary checkpoint: header, named dimension table, then
    the tensors as little-endian float64 in declaration order."""
    tensors = list(params.named_tensors())
    with open(path, "wb") as f:
        f.write(CHECKPOINT_MAGIC)
        f.write(struct.pack("<II", CHECKPOINT_VERSION, len(tensors)))
        for name, arr in tensors:
            enc = name.encode()
            f.write(struct.pack("<H", len(enc)))
            f.write(enc)
            f.write(struct.pack("<B", arr.ndim))
            f.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
        for _, arr in tensors:
            f.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def load_checkpoint(path) -> EnergyNetParams:
    with open(path, "rb") as f:
        raw = f.read()
    if raw[:8] != CHECKPOINT_MAGIC:
        raise ConfigError(f"not a checkpoint file: {path}")
    version, n_tensors = struct.unpack_from("<II", raw, 8)
    if version != CHECKPOINT_VERSION:
        raise ConfigError(f"unsupported checkpoint version {version}")
    pos = 16
    table = []
    for _ in range(n_tensors):
        (name_len,) = struct.unpack_from("<H", raw, pos)
        pos += 2
        name = raw[pos:pos + name_len].decode()
        pos += name_len
        (ndim,) = struct.unpack_from("<B", raw, pos)
        pos += 1
        shape = struct.unpack_from(f"<{ndim}I", raw, pos)
        pos += 4 * ndim
        table.append((name, shape))
    arrays = {}
    for name, shape in table:
        count = int(np.prod(shape))
        arrays[name] = np.frombuffer(raw, dtype="<f8", count=count, offset=pos).reshape(shape).copy()
        pos += 8 * count
    try:
        enc_dim = arrays["enc_cz.0.W"].shape[0]
        in_len = arrays["head.0.W"].shape[1]
        dims = EnergyNetDims(
            feat_len=in_len - 2 * enc_dim,
            enc_dim=enc_dim,
            head_dims=(arrays["head.0.W"].shape[0], arrays["head.1.W"].shape[0]),
        )
        params = init_params(0, dims)
        for name, arr in params.named_tensors():
            if arrays[name].shape != arr.shape:
                raise ConfigError(f"tensor {name} has shape {arrays[name].shape}, expected {arr.shape}")
            arr[...] = arrays[name]
    except KeyError as exc:
        raise ConfigError(f"checkpoint missing tensor {exc}") from exc
    return params
