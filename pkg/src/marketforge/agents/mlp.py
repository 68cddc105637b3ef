"""Dependency-free multilayer perceptron with exact reverse-mode gradients
and a versioned little-endian parameter-blob format."""

from __future__ import annotations

import struct
from typing import Sequence

import numpy as np

from ..errors import NoCachedForward, ShapeMismatch

ACTIVATIONS = ("tanh", "relu")

BLOB_MAGIC = b"MFNN"
BLOB_VERSION = 1


class Mlp:
    """Affine layers with tanh or relu between them; the last layer is linear.

    ``forward`` caches pre-activations so ``backward`` can return exact
    gradients of ``sum(output * upstream)`` with respect to every weight,
    bias, and the input. Batch inputs (B, in) accumulate gradients over the
    batch; the caller owns any 1/B normalization via the upstream signal.
    """

    def __init__(self, layer_sizes: Sequence[int], activation: str = "tanh", seed: int = 0):
        if len(layer_sizes) < 2:
            raise ValueError("need at least input and output sizes")
        if activation not in ACTIVATIONS:
            raise ValueError(f"activation must be one of {ACTIVATIONS}")
        self.layer_sizes = tuple(int(s) for s in layer_sizes)
        self.activation = activation
        rng = np.random.Generator(np.random.Philox(key=seed))
        self.weights: list[np.ndarray] = []
        self.biases: list[np.ndarray] = []
        for fan_in, fan_out in zip(self.layer_sizes, self.layer_sizes[1:]):
            limit = np.sqrt(6.0 / (fan_in + fan_out))
            self.weights.append(rng.uniform(-limit, limit, size=(fan_out, fan_in)))
            self.biases.append(np.zeros(fan_out))
        self._cache = None

    @property
    def n_layers(self) -> int:
        return len(self.weights)

    def _act(self, z: np.ndarray) -> np.ndarray:
        return np.tanh(z) if self.activation == "tanh" else np.maximum(z, 0.0)

    def _act_grad(self, z: np.ndarray, a: np.ndarray) -> np.ndarray:
        if self.activation == "tanh":
            return 1.0 - a * a
        return (z > 0.0).astype(np.float64)

    def forward(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        squeeze = x.ndim == 1
        if squeeze:
            x = x[None, :]
        if x.shape[1] != self.layer_sizes[0]:
            raise ShapeMismatch(f"input dim {x.shape[1]} != {self.layer_sizes[0]}")
        activations = [x]
        pre = []
        a = x
        for i in range(self.n_layers):
            z = a @ self.weights[i].T + self.biases[i]
            pre.append(z)
            a = z if i == self.n_layers - 1 else self._act(z)
            activations.append(a)
        self._cache = (activations, pre, squeeze)
        return a[0] if squeeze else a

    def backward(self, upstream: np.ndarray):
        """Gradients of sum(output * upstream) w.r.t. parameters and input.

        Returns (weight_grads, bias_grads, input_grad); batch gradients are
        summed over the batch axis.
        """
        if self._cache is None:
            raise NoCachedForward("call forward() first")
        activations, pre, squeeze = self._cache
        up = np.asarray(upstream, dtype=np.float64)
        if squeeze and up.ndim == 1:
            up = up[None, :]
        if up.shape != (activations[0].shape[0], self.layer_sizes[-1]):
            raise ShapeMismatch(f"upstream shape {up.shape} does not match output")

        grad_w = [None] * self.n_layers
        grad_b = [None] * self.n_layers
        delta = up
        for i in reversed(range(self.n_layers)):
            grad_w[i] = delta.T @ activations[i]
            grad_b[i] = delta.sum(axis=0)
            if i > 0:
                da = delta @ self.weights[i]
                delta = da * self._act_grad(pre[i - 1], activations[i])
        grad_x = delta @ self.weights[0]
        if squeeze:
            grad_x = grad_x[0]
        return grad_w, grad_b, grad_x

    # ------------------------------------------------------------- parameters

    def parameters(self) -> list[np.ndarray]:
        return list(self.weights) + list(self.biases)

    def set_parameters(self, params: Sequence[np.ndarray]) -> None:
        n = self.n_layers
        for i in range(n):
            if params[i].shape != self.weights[i].shape or params[n + i].shape != self.biases[i].shape:
                raise ShapeMismatch("parameter shapes do not match architecture")
            self.weights[i] = np.array(params[i], dtype=np.float64)
            self.biases[i] = np.array(params[n + i], dtype=np.float64)
        self._cache = None

    def clone(self) -> "Mlp":
        twin = Mlp(self.layer_sizes, self.activation, seed=0)
        twin.set_parameters([p.copy() for p in self.parameters()])
        return twin

    def copy_parameters_from(self, other: "Mlp") -> None:
        self.set_parameters([p.copy() for p in other.parameters()])


def sgd_step(net: Mlp, grad_w, grad_b, lr: float, clip_norm: float = 10.0, extra=()):
    """In-place SGD update with global gradient-norm clipping.

    ``extra`` holds (array, grad) pairs updated in the same clipped step,
    e.g. a policy's log-std vector.
    """
    total = 0.0
    for g in grad_w + grad_b + [g for _, g in extra]:
        total += float((g * g).sum())
    norm = np.sqrt(total)
    scale = 1.0 if norm <= clip_norm else clip_norm / norm
    for i in range(net.n_layers):
        net.weights[i] = net.weights[i] - lr * scale * grad_w[i]
        net.biases[i] = net.biases[i] - lr * scale * grad_b[i]
    for arr, g in extra:
        arr -= lr * scale * g
    return norm


# ------------------------------------------------------------- serialization
#
# One block per network: magic, version (u32), layer-size count (u32), the
# sizes (u32 each), then row-major float64 weight and bias matrices in layer
# order. Multi-network policies concatenate blocks.


def mlp_to_blob(net: Mlp) -> bytes:
    parts = [BLOB_MAGIC, struct.pack("<I", BLOB_VERSION), struct.pack("<I", len(net.layer_sizes))]
    parts.append(struct.pack(f"<{len(net.layer_sizes)}I", *net.layer_sizes))
    for w, b in zip(net.weights, net.biases):
        parts.append(np.ascontiguousarray(w, dtype="<f8").tobytes())
        parts.append(np.ascontiguousarray(b, dtype="<f8").tobytes())
    return b"".join(parts)


def mlp_from_blob(blob: bytes, offset: int, net: Mlp) -> int:
    """Load one block into ``net`` (shapes must match); returns the new offset."""
    if blob[offset : offset + 4] != BLOB_MAGIC:
        raise ValueError("bad magic; not a parameter blob")
    offset += 4
    (version,) = struct.unpack_from("<I", blob, offset)
    if version != BLOB_VERSION:
        raise ValueError(f"unsupported blob version {version}")
    offset += 4
    (n_sizes,) = struct.unpack_from("<I", blob, offset)
    offset += 4
    sizes = struct.unpack_from(f"<{n_sizes}I", blob, offset)
    offset += 4 * n_sizes
    if sizes != net.layer_sizes:
        raise ShapeMismatch(f"blob sizes {sizes} != architecture {net.layer_sizes}")
    params = []
    for fan_in, fan_out in zip(sizes, sizes[1:]):
        w = np.frombuffer(blob, dtype="<f8", count=fan_out * fan_in, offset=offset).reshape(fan_out, fan_in)
        offset += 8 * fan_out * fan_in
        b = np.frombuffer(blob, dtype="<f8", count=fan_out, offset=offset)
        offset += 8 * fan_out
        params.append(np.array(w))
        params.append(np.array(b))
    net.set_parameters(params[0::2] + params[1::2])
    return offset


VEC_MAGIC = b"MFVB"


def vector_to_blob(vec: np.ndarray) -> bytes:
    return VEC_MAGIC + struct.pack("<I", vec.size) + np.ascontiguousarray(vec, dtype="<f8").tobytes()


def vector_from_blob(blob: bytes, offset: int) -> tuple[np.ndarray, int]:
    if blob[offset : offset + 4] != VEC_MAGIC:
        raise ValueError("bad magic; not a vector block")
    offset += 4
    (count,) = struct.unpack_from("<I", blob, offset)
    offset += 4
    vec = np.array(np.frombuffer(blob, dtype="<f8", count=count, offset=offset))
    return vec, offset + 8 * count
