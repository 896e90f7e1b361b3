"""Cell-wise search space: kernel schedule and architecture elaboration.

A search point ``(k, c)`` is turned into a VGG-style sequential network::

    rescale -> batchnorm_input -> conv(n_0) -> [maxpool -> conv(n_i)] * c
            -> global_avg_pool -> dense(n_c) -> dense(num_classes) -> softmax
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Union

from .exceptions import SpatiallyInfeasible

LAYER_KINDS = (
    "rescale",
    "batchnorm_input",
    "conv3x3_same",
    "maxpool2x2_s2",
    "global_avg_pool",
    "dense",
    "softmax",
)

# layers that carry trainable parameters
PARAMETERIZED = ("batchnorm_input", "conv3x3_same", "dense")

Shape = Union[tuple, int]


@dataclass(frozen=True, order=True)
class SearchPoint:
    k: int
    c: int = 0

    def __post_init__(self):
        if int(self.k) != self.k or self.k < 1:
            raise ValueError(f"k must be a positive integer, got {self.k!r}")
        if int(self.c) != self.c or self.c < 0:
            raise ValueError(f"c must be a non-negative integer, got {self.c!r}")

    def __str__(self):
        return f"({self.k},{self.c})"


@dataclass(frozen=True)
class InputShape:
    s: int
    channels: int = 3

    def __post_init__(self):
        if self.s < 1:
            raise ValueError(f"input side must be >= 1, got {self.s}")
        if self.channels not in (1, 3):
            raise ValueError(f"channels must be 1 or 3, got {self.channels}")

    @property
    def hwc(self) -> tuple[int, int, int]:
        return (self.s, self.s, self.channels)


@dataclass(frozen=True)
class LayerSpec:
    kind: str
    in_shape: Shape
    out_shape: Shape
    units: int | None = None  # kernels for conv, neurons for dense

    @property
    def in_elements(self) -> int:
        return _numel(self.in_shape)

    @property
    def out_elements(self) -> int:
        return _numel(self.out_shape)

    @property
    def in_channels(self) -> int:
        return self.in_shape[-1] if isinstance(self.in_shape, tuple) else self.in_shape

    def param_counts(self) -> tuple[int, int]:
        """(weights, bias-like parameters) held by this layer."""
        if self.kind == "conv3x3_same":
            return 9 * self.in_channels * self.units, self.units
        if self.kind == "dense":
            return self.in_shape * self.units, self.units
        if self.kind == "batchnorm_input":
            # gamma, beta, moving mean, moving variance
            return 0, 4 * self.in_channels
        return 0, 0


def _numel(shape: Shape) -> int:
    if isinstance(shape, int):
        return shape
    return math.prod(shape)


@dataclass(frozen=True)
class ArchDescriptor:
    point: SearchPoint
    input: InputShape
    num_classes: int
    layers: tuple[LayerSpec, ...] = field(repr=False)
    kernel_schedule: tuple[int, ...]

    def conv_layers(self) -> list[LayerSpec]:
        return [layer for layer in self.layers if layer.kind == "conv3x3_same"]

    def to_dict(self) -> dict:
        return {
            "point": {"k": self.point.k, "c": self.point.c},
            "input": {"s": self.input.s, "channels": self.input.channels},
            "num_classes": self.num_classes,
            "kernel_schedule": list(self.kernel_schedule),
            "layers": [
                {
                    "kind": layer.kind,
                    "in_shape": list(layer.in_shape) if isinstance(layer.in_shape, tuple) else layer.in_shape,
                    "out_shape": list(layer.out_shape) if isinstance(layer.out_shape, tuple) else layer.out_shape,
                    "units": layer.units,
                }
                for layer in self.layers
            ],
        }

    def to_json(self, **kwargs) -> str:
        return json.dumps(self.to_dict(), **kwargs)

    @classmethod
    def from_dict(cls, data: dict) -> "ArchDescriptor":
        """Rebuild from JSON and check the layer list against the grammar."""
        try:
            point = SearchPoint(int(data["point"]["k"]), int(data["point"]["c"]))
            inp = InputShape(int(data["input"]["s"]), int(data["input"]["channels"]))
            num_classes = int(data["num_classes"])
        except (KeyError, TypeError) as exc:
            raise ValueError(f"malformed architecture document: {exc}") from exc
        arch = build_architecture(point, inp, num_classes)
        if "layers" in data:
            stored = data["layers"]
            if [l.get("kind") for l in stored] != [l.kind for l in arch.layers]:
                raise ValueError("layer list does not match the architecture grammar")
            expected = arch.to_dict()["layers"]
            if stored != expected:
                raise ValueError("layer shapes do not match the point and input size")
        return arch

    @classmethod
    def from_json(cls, text: str) -> "ArchDescriptor":
        return cls.from_dict(json.loads(text))


def kernel_schedule(k: int, c: int) -> list[int]:
    """Kernel counts ``[n_0, ..., n_c]`` for ``c`` cells on top of a ``k``-kernel stem.

    Each new cell multiplies the previous count by ``1 + 2**(1 - c)`` (2, 1.5,
    1.25, ...) and rounds up.

    >>> kernel_schedule(4, 3)
    [4, 8, 12, 15]
    """
    if k < 1:
        raise ValueError("k must be >= 1; a zero-kernel stem is degenerate")
    if c < 0:
        raise ValueError("c must be >= 0")
    counts = [int(k)]
    for cell in range(1, c + 1):
        # exact rational arithmetic: multiplier is (2**(cell-1) + 1) / 2**(cell-1)
        den = 1 << (cell - 1)
        num = (den + 1) * counts[-1]
        counts.append(-(-num // den))
    return counts


def max_cells(input: InputShape) -> int:
    """Largest number of cells whose pooling layers all see a side >= 2."""
    side, cells = input.s, 0
    while side >= 2:
        side //= 2
        cells += 1
    return cells


def build_architecture(point: SearchPoint, input: InputShape, num_classes: int) -> ArchDescriptor:
    if num_classes < 2:
        raise ValueError(f"num_classes must be >= 2, got {num_classes}")
    limit = max_cells(input)
    if point.c > limit:
        raise SpatiallyInfeasible(
            f"{point.c} cells need more pooling than a {input.s}px input allows (max {limit})"
        )
    schedule = kernel_schedule(point.k, point.c)
    h = w = input.s
    ch = input.channels
    layers = [
        LayerSpec("rescale", (h, w, ch), (h, w, ch)),
        LayerSpec("batchnorm_input", (h, w, ch), (h, w, ch)),
        LayerSpec("conv3x3_same", (h, w, ch), (h, w, schedule[0]), schedule[0]),
    ]
    ch = schedule[0]
    for n in schedule[1:]:
        layers.append(LayerSpec("maxpool2x2_s2", (h, w, ch), (h // 2, w // 2, ch)))
        h, w = h // 2, w // 2
        layers.append(LayerSpec("conv3x3_same", (h, w, ch), (h, w, n), n))
        ch = n
    layers += [
        LayerSpec("global_avg_pool", (h, w, ch), ch),
        LayerSpec("dense", ch, ch, ch),
        LayerSpec("dense", ch, num_classes, num_classes),
        LayerSpec("softmax", num_classes, num_classes),
    ]
    return ArchDescriptor(point, input, num_classes, tuple(layers), tuple(schedule))
