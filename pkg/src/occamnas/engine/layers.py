"""Forward and backward passes for the fixed layer grammar (NHWC, numpy).

Weights live in a flat dict keyed ``"<layer index>.<name>"``; the dtype of the
weights decides the compute dtype, so the same code runs in float32 for
training and float64 for gradient checks.
"""
from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from ..archspace import ArchDescriptor
from ..exceptions import NonFiniteActivation, NonFiniteGradient, ShapeMismatch

BN_EPSILON = 1e-6
PIXEL_SCALE = 255.0

# buffers that are part of the weights but never receive gradients
NON_TRAINABLE = ("moving_mean", "moving_var")


def init_weights(arch: ArchDescriptor, rng: np.random.Generator, dtype=np.float32) -> dict:
    """Glorot-uniform kernels, zero biases, identity input normalization."""
    weights = {}
    for i, layer in enumerate(arch.layers):
        if layer.kind == "batchnorm_input":
            ch = layer.in_channels
            weights[f"{i}.gamma"] = np.ones(ch, dtype)
            weights[f"{i}.beta"] = np.zeros(ch, dtype)
            weights[f"{i}.moving_mean"] = np.zeros(ch, dtype)
            weights[f"{i}.moving_var"] = np.ones(ch, dtype)
        elif layer.kind == "conv3x3_same":
            cin, cout = layer.in_channels, layer.units
            limit = np.sqrt(6.0 / (9 * cin + 9 * cout))
            weights[f"{i}.W"] = rng.uniform(-limit, limit, (3, 3, cin, cout)).astype(dtype)
            weights[f"{i}.b"] = np.zeros(cout, dtype)
        elif layer.kind == "dense":
            fan_in, fan_out = layer.in_shape, layer.units
            limit = np.sqrt(6.0 / (fan_in + fan_out))
            weights[f"{i}.W"] = rng.uniform(-limit, limit, (fan_in, fan_out)).astype(dtype)
            weights[f"{i}.b"] = np.zeros(fan_out, dtype)
    return weights


def expected_weight_shapes(arch: ArchDescriptor) -> dict:
    return {name: w.shape for name, w in init_weights(arch, np.random.default_rng(0)).items()}


def check_weights(arch: ArchDescriptor, weights: dict) -> None:
    expected = expected_weight_shapes(arch)
    if set(expected) != set(weights):
        raise ShapeMismatch(f"weight names {sorted(weights)} do not match architecture {sorted(expected)}")
    for name, shape in expected.items():
        if tuple(weights[name].shape) != shape:
            raise ShapeMismatch(f"{name}: expected shape {shape}, got {weights[name].shape}")


def trainable_names(weights: dict) -> list[str]:
    return [n for n in weights if n.rsplit(".", 1)[1] not in NON_TRAINABLE]


def _conv_forward(x, W, b):
    n, h, w, cin = x.shape
    cout = W.shape[-1]
    xp = np.pad(x, ((0, 0), (1, 1), (1, 1), (0, 0)))
    # (n, h, w, cin, 3, 3) -> rows of 9*cin taps ordered (cin, dy, dx)
    cols = sliding_window_view(xp, (3, 3), axis=(1, 2)).reshape(n * h * w, cin * 9)
    wmat = W.transpose(2, 0, 1, 3).reshape(cin * 9, cout)
    out = cols @ wmat + b
    return out.reshape(n, h, w, cout), cols


def _conv_backward(dout, cols, x_shape, W):
    n, h, w, cin = x_shape
    cout = W.shape[-1]
    d2 = dout.reshape(n * h * w, cout)
    dW = (cols.T @ d2).reshape(cin, 3, 3, cout).transpose(1, 2, 0, 3)
    db = d2.sum(axis=0)
    wmat = W.transpose(2, 0, 1, 3).reshape(cin * 9, cout)
    dcols = (d2 @ wmat.T).reshape(n, h, w, cin, 3, 3)
    dxp = np.zeros((n, h + 2, w + 2, cin), dtype=dout.dtype)
    for dy in range(3):
        for dx in range(3):
            dxp[:, dy:dy + h, dx:dx + w, :] += dcols[..., dy, dx]
    return dxp[:, 1:-1, 1:-1, :], dW, db


def _pool_forward(x):
    n, h, w, c = x.shape
    ho, wo = h // 2, w // 2
    win = x[:, :2 * ho, :2 * wo, :].reshape(n, ho, 2, wo, 2, c)
    win = win.transpose(0, 1, 3, 5, 2, 4).reshape(n, ho, wo, c, 4)
    arg = win.argmax(axis=-1)
    out = np.take_along_axis(win, arg[..., None], axis=-1)[..., 0]
    return out, arg


def _pool_backward(dout, arg, x_shape):
    n, h, w, c = x_shape
    ho, wo = h // 2, w // 2
    dwin = np.zeros((n, ho, wo, c, 4), dtype=dout.dtype)
    np.put_along_axis(dwin, arg[..., None], dout[..., None], axis=-1)
    dwin = dwin.reshape(n, ho, wo, c, 2, 2).transpose(0, 1, 4, 2, 5, 3).reshape(n, 2 * ho, 2 * wo, c)
    dx = np.zeros(x_shape, dtype=dout.dtype)
    dx[:, :2 * ho, :2 * wo, :] = dwin
    return dx


def softmax(z):
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def _relu_after(arch: ArchDescriptor) -> set:
    """Indices of layers followed by ReLU: every conv and the deep dense layer."""
    dense = [i for i, l in enumerate(arch.layers) if l.kind == "dense"]
    convs = [i for i, l in enumerate(arch.layers) if l.kind == "conv3x3_same"]
    return set(convs) | set(dense[:-1])


def forward(arch: ArchDescriptor, weights: dict, batch, mode: str = "infer"):
    """Run ``batch`` (n, s, s, ch) of raw pixel values through the network.

    Returns ``(probs, cache)`` where ``probs`` are the softmax outputs and
    ``cache["logits"]`` holds the pre-softmax scores. In ``"train"`` mode the
    input normalization uses batch statistics, otherwise the stored moving
    statistics.
    """
    if mode not in ("train", "infer"):
        raise ValueError(f"mode must be 'train' or 'infer', got {mode!r}")
    dtype = next(iter(weights.values())).dtype if weights else np.float64
    x = np.asarray(batch, dtype=dtype)
    expected = arch.input.hwc
    if x.ndim != 4 or x.shape[1:] != expected:
        raise ShapeMismatch(f"batch shape {x.shape} does not match input {expected}")
    relu = _relu_after(arch)
    caches = []
    for i, layer in enumerate(arch.layers):
        kind = layer.kind
        if kind == "rescale":
            x = x / dtype.type(PIXEL_SCALE)
            caches.append(None)
        elif kind == "batchnorm_input":
            if mode == "train":
                mean = x.mean(axis=(0, 1, 2))
                var = x.var(axis=(0, 1, 2))
            else:
                mean, var = weights[f"{i}.moving_mean"], weights[f"{i}.moving_var"]
            inv = 1.0 / np.sqrt(var + dtype.type(BN_EPSILON))
            xhat = (x - mean) * inv
            x = xhat * weights[f"{i}.gamma"] + weights[f"{i}.beta"]
            caches.append((xhat, inv))
        elif kind == "conv3x3_same":
            shape_in = x.shape
            x, cols = _conv_forward(x, weights[f"{i}.W"], weights[f"{i}.b"])
            caches.append((cols, shape_in))
        elif kind == "maxpool2x2_s2":
            shape_in = x.shape
            x, arg = _pool_forward(x)
            caches.append((arg, shape_in))
        elif kind == "global_avg_pool":
            caches.append(x.shape)
            x = x.mean(axis=(1, 2))
        elif kind == "dense":
            caches.append(x)
            x = x @ weights[f"{i}.W"] + weights[f"{i}.b"]
        elif kind == "softmax":
            caches.append(None)
            logits = x
            x = softmax(x)
        else:  # pragma: no cover - grammar is closed
            raise ValueError(f"unknown layer kind {kind}")
        if i in relu:
            mask = x > 0
            x = x * mask
            caches[-1] = (caches[-1], mask)
        if not np.all(np.isfinite(x)):
            raise NonFiniteActivation(f"non-finite activation after layer {i} ({kind})")
    return x, {"layers": caches, "logits": logits, "probs": x, "mode": mode}


def cross_entropy(probs, labels) -> float:
    n = probs.shape[0]
    picked = probs[np.arange(n), labels]
    return float(-np.mean(np.log(np.maximum(picked, np.finfo(probs.dtype).tiny))))


def backward(arch: ArchDescriptor, weights: dict, cache: dict, labels) -> dict:
    """Gradients of mean softmax cross-entropy w.r.t. every trainable parameter."""
    probs = cache["probs"]
    labels = np.asarray(labels)
    n = probs.shape[0]
    relu = _relu_after(arch)
    grads = {}
    # d loss / d logits = softmax - one_hot, averaged over the batch
    d = probs.copy()
    d[np.arange(n), labels] -= 1
    d /= n
    for i in range(len(arch.layers) - 1, -1, -1):
        kind = arch.layers[i].kind
        entry = cache["layers"][i]
        if i in relu:
            entry, mask = entry
            d = d * mask
        if kind == "softmax":
            continue
        if kind == "dense":
            x = entry
            grads[f"{i}.W"] = x.T @ d
            grads[f"{i}.b"] = d.sum(axis=0)
            d = d @ weights[f"{i}.W"].T
        elif kind == "global_avg_pool":
            nb, h, w, c = entry
            d = np.broadcast_to(d[:, None, None, :] / (h * w), entry).astype(d.dtype)
        elif kind == "maxpool2x2_s2":
            arg, shape_in = entry
            d = _pool_backward(d, arg, shape_in)
        elif kind == "conv3x3_same":
            cols, shape_in = entry
            d, grads[f"{i}.W"], grads[f"{i}.b"] = _conv_backward(d, cols, shape_in, weights[f"{i}.W"])
        elif kind == "batchnorm_input":
            xhat, inv = entry
            grads[f"{i}.gamma"] = (d * xhat).sum(axis=(0, 1, 2))
            grads[f"{i}.beta"] = d.sum(axis=(0, 1, 2))
            # input gradient is not needed: nothing trainable sits before this layer
            d = None
            break
        elif kind == "rescale":
            break
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise NonFiniteGradient(f"non-finite gradient for {name}")
    return grads


def predict_proba(arch: ArchDescriptor, weights: dict, images, batch_size: int = 256):
    images = np.asarray(images)
    out = []
    for start in range(0, len(images), batch_size):
        probs, _ = forward(arch, weights, images[start:start + batch_size], mode="infer")
        out.append(probs)
    if not out:
        return np.zeros((0, arch.num_classes))
    return np.concatenate(out)


def accuracy(arch: ArchDescriptor, weights: dict, images, labels, batch_size: int = 256) -> float:
    labels = np.asarray(labels)
    if len(labels) == 0:
        raise ValueError("accuracy of an empty set is undefined")
    pred = predict_proba(arch, weights, images, batch_size).argmax(axis=1)
    return float(np.count_nonzero(pred == labels)) / len(labels)
