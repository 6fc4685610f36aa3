"""Small dense networks with hand-written backprop.

One implementation backs every learned component: the bias estimators,
the VO velocity refiner, and the policy / value heads. Arrays are float64
end to end; forward passes accept a single vector or a batch (rows).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

ACTIVATIONS = ("tanh", "relu", "identity", "sigmoid")


@dataclass
class MlpParams:
    """Layer weights (n_out, n_in), biases (n_out,) and activation names."""

    weights: list[np.ndarray]
    biases: list[np.ndarray]
    activations: list[str]

    def copy(self) -> "MlpParams":
        return MlpParams(
            [w.copy() for w in self.weights],
            [b.copy() for b in self.biases],
            list(self.activations),
        )

    @property
    def in_dim(self) -> int:
        return self.weights[0].shape[1]

    @property
    def out_dim(self) -> int:
        return self.weights[-1].shape[0]


@dataclass
class MlpGrads:
    weights: list[np.ndarray]
    biases: list[np.ndarray]


@dataclass
class AdamState:
    """First/second moment accumulators mirroring MlpParams, plus step count."""

    m_w: list[np.ndarray]
    v_w: list[np.ndarray]
    m_b: list[np.ndarray]
    v_b: list[np.ndarray]
    step: int = 0

    @classmethod
    def for_params(cls, params: MlpParams) -> "AdamState":
        return cls(
            [np.zeros_like(w) for w in params.weights],
            [np.zeros_like(w) for w in params.weights],
            [np.zeros_like(b) for b in params.biases],
            [np.zeros_like(b) for b in params.biases],
        )


def init_mlp(sizes: list[int], activations: list[str], rng: np.random.Generator) -> MlpParams:
    """Glorot-uniform init: weights in +-sqrt(6 / (fan_in + fan_out))."""
    if len(activations) != len(sizes) - 1:
        raise ValueError("need one activation per layer")
    for act in activations:
        if act not in ACTIVATIONS:
            raise ValueError(f"unknown activation {act!r}")
    weights, biases = [], []
    for n_in, n_out in zip(sizes[:-1], sizes[1:]):
        lim = np.sqrt(6.0 / (n_in + n_out))
        weights.append(rng.uniform(-lim, lim, size=(n_out, n_in)))
        biases.append(np.zeros(n_out))
    return MlpParams(weights, biases, list(activations))


def _apply(act: str, z: np.ndarray) -> np.ndarray:
    if act == "tanh":
        return np.tanh(z)
    if act == "relu":
        return np.maximum(z, 0.0)
    if act == "sigmoid":
        return 1.0 / (1.0 + np.exp(-z))
    return z


def _apply_deriv(act: str, z: np.ndarray, a: np.ndarray) -> np.ndarray:
    if act == "tanh":
        return 1.0 - a * a
    if act == "relu":
        return (z > 0.0).astype(float)
    if act == "sigmoid":
        return a * (1.0 - a)
    return np.ones_like(z)


def forward(params: MlpParams, x: np.ndarray) -> np.ndarray:
    """Evaluate the network on a (d,) vector or an (N, d) batch."""
    a = np.asarray(x, dtype=float)
    if a.shape[-1] != params.in_dim:
        raise ValueError(f"input dim {a.shape[-1]} != expected {params.in_dim}")
    for w, b, act in zip(params.weights, params.biases, params.activations):
        a = _apply(act, a @ w.T + b)
    return a


def backward(
    params: MlpParams, x: np.ndarray, upstream: np.ndarray
) -> tuple[MlpGrads, np.ndarray]:
    """Reverse-mode gradients of forward.

    ``upstream`` holds dL/d(output) per sample. Parameter gradients are
    summed over the batch; the returned input gradient keeps the batch
    shape.
    """
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    a = x.reshape(1, -1) if single else x
    if a.shape[1] != params.in_dim:
        raise ValueError(f"input dim {a.shape[1]} != expected {params.in_dim}")

    pre, post = [], [a]
    for w, b, act in zip(params.weights, params.biases, params.activations):
        z = post[-1] @ w.T + b
        pre.append(z)
        post.append(_apply(act, z))

    g = np.asarray(upstream, dtype=float)
    g = g.reshape(1, -1) if single else g
    if g.shape != post[-1].shape:
        raise ValueError(f"upstream shape {g.shape} != output shape {post[-1].shape}")

    grad_w = [np.empty(0)] * len(params.weights)
    grad_b = [np.empty(0)] * len(params.biases)
    for i in range(len(params.weights) - 1, -1, -1):
        dz = g * _apply_deriv(params.activations[i], pre[i], post[i + 1])
        grad_w[i] = dz.T @ post[i]
        grad_b[i] = dz.sum(axis=0)
        g = dz @ params.weights[i]
    input_grad = g[0] if single else g
    return MlpGrads(grad_w, grad_b), input_grad


def adam_step(
    params: MlpParams,
    grads: MlpGrads,
    state: AdamState,
    lr: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> None:
    """One Adam update, in place on params and state."""
    state.step += 1
    c1 = 1.0 - beta1**state.step
    c2 = 1.0 - beta2**state.step
    for p, g, m, v in (
        *zip(params.weights, grads.weights, state.m_w, state.v_w),
        *zip(params.biases, grads.biases, state.m_b, state.v_b),
    ):
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * g * g
        p -= lr * (m / c1) / (np.sqrt(v / c2) + eps)


# --- checkpoint format -------------------------------------------------
#
# One file per checkpoint: a JSON header line describing named nets and
# named plain arrays, then the concatenated float64 little-endian data.


def save_bundle(
    path,
    nets: dict[str, MlpParams],
    arrays: dict[str, np.ndarray] | None = None,
    meta: dict | None = None,
) -> None:
    arrays = arrays or {}
    header = {
        "format": "rlvio-mlp-v1",
        "nets": {
            name: {
                "shapes": [list(w.shape) for w in p.weights],
                "activations": p.activations,
            }
            for name, p in nets.items()
        },
        "arrays": {name: list(a.shape) for name, a in arrays.items()},
        "meta": meta or {},
    }
    chunks = []
    for name in header["nets"]:
        p = nets[name]
        for w, b in zip(p.weights, p.biases):
            chunks.append(np.ascontiguousarray(w, dtype="<f8"))
            chunks.append(np.ascontiguousarray(b, dtype="<f8"))
    for name in header["arrays"]:
        chunks.append(np.ascontiguousarray(arrays[name], dtype="<f8"))
    with open(path, "wb") as fh:
        fh.write(json.dumps(header, sort_keys=True).encode() + b"\n")
        for c in chunks:
            fh.write(c.tobytes())


def load_bundle(path) -> tuple[dict[str, MlpParams], dict[str, np.ndarray], dict]:
    with open(path, "rb") as fh:
        header = json.loads(fh.readline().decode())
        blob = fh.read()
    if header.get("format") != "rlvio-mlp-v1":
        raise ValueError(f"{path}: not a checkpoint file")
    data = np.frombuffer(blob, dtype="<f8")
    pos = 0

    def take(shape):
        nonlocal pos
        n = int(np.prod(shape)) if shape else 1
        out = data[pos : pos + n].reshape(shape).copy()
        pos += n
        return out

    nets = {}
    for name, spec in header["nets"].items():
        weights, biases = [], []
        for shape in spec["shapes"]:
            weights.append(take(shape))
            biases.append(take([shape[0]]))
        nets[name] = MlpParams(weights, biases, list(spec["activations"]))
    arrays = {name: take(shape) for name, shape in header["arrays"].items()}
    return nets, arrays, header.get("meta", {})
