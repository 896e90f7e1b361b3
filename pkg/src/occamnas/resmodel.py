"""Analytic RAM / Flash / MACC estimators and hardware targets.

The byte sizes model an int8 post-training-quantized deployment: int8
activations and weights, int32 bias-like parameters, plus fixed runtime
overheads. All numbers are exact integers.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

from .archspace import ArchDescriptor, max_cells
from .exceptions import UnknownPreset

KIB = 1024

# layers executed in place on their input buffer
IN_PLACE = ("rescale", "batchnorm_input", "softmax")


@dataclass(frozen=True)
class HardwareTarget:
    xi_ram: int
    xi_flash: int
    xi_macc: int
    name: str = "custom"

    def __post_init__(self):
        for attr in ("xi_ram", "xi_flash", "xi_macc"):
            if getattr(self, attr) <= 0:
                raise ValueError(f"{attr} must be strictly positive")

    def to_dict(self) -> dict:
        return asdict(self)


# name -> (RAM kiB, Flash kiB, CoreMark score)
MCU_TABLE = {
    "L0": ("STM32L010RBT6", 20, 128, 75),
    "L1": ("STM32L151UCY6DTR", 32, 256, 93),
    "L4": ("STM32L412KBU3", 40, 128, 273),
}
COREMARK_TO_MACC = 10_000


def target_preset(name: str) -> HardwareTarget:
    """MCU budget with the MACC bound set to 10**4 times the CoreMark score."""
    try:
        _, ram, flash, coremark = MCU_TABLE[name]
    except KeyError:
        raise UnknownPreset(f"unknown target preset {name!r}; choose from {sorted(MCU_TABLE)}") from None
    return HardwareTarget(ram * KIB, flash * KIB, coremark * COREMARK_TO_MACC, name)


@dataclass(frozen=True)
class SizingConfig:
    activation_bytes_per_element: int = 1
    weight_bytes: int = 1
    bias_bytes: int = 4
    per_tensor_quant_overhead: int = 8
    runtime_ram_overhead: int = 2048
    flash_graph_overhead: int = 4096

    def __post_init__(self):
        for name, value in asdict(self).items():
            if value < 0:
                raise ValueError(f"{name} must be non-negative")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class LayerFootprint:
    index: int
    kind: str
    act_in_bytes: int
    act_out_bytes: int
    weights: int
    biases: int
    macc: int
    live_bytes: int
    flash_bytes: int

    @property
    def params(self) -> int:
        return self.weights + self.biases


@dataclass(frozen=True)
class ResourceReport:
    phi_ram: int
    phi_flash: int
    phi_macc: int
    input_bytes: int
    per_layer: tuple[LayerFootprint, ...] = field(default=(), repr=False)

    @property
    def params(self) -> int:
        return sum(row.params for row in self.per_layer)

    def to_dict(self) -> dict:
        return {
            "phi_ram": self.phi_ram,
            "phi_flash": self.phi_flash,
            "phi_macc": self.phi_macc,
            "input_bytes": self.input_bytes,
            "per_layer": [asdict(row) for row in self.per_layer],
        }

    def to_json(self, **kwargs) -> str:
        return json.dumps(self.to_dict(), **kwargs)


def layer_macc(layer) -> int:
    if layer.kind == "conv3x3_same":
        h, w, cout = layer.out_shape
        return h * w * 9 * layer.in_channels * cout
    if layer.kind == "dense":
        return layer.in_shape * layer.units
    return 0


def resource_report(arch: ArchDescriptor, sizing: SizingConfig | None = None) -> ResourceReport:
    sizing = sizing or SizingConfig()
    act = sizing.activation_bytes_per_element
    input_bytes = arch.input.s * arch.input.s * arch.input.channels * act
    rows = []
    for i, layer in enumerate(arch.layers):
        a_in = layer.in_elements * act
        a_out = layer.out_elements * act
        weights, biases = layer.param_counts()
        live = a_in if layer.kind in IN_PLACE else a_in + a_out
        flash = 0
        if weights or biases:
            flash = (
                weights * sizing.weight_bytes
                + biases * sizing.bias_bytes
                + sizing.per_tensor_quant_overhead
            )
        rows.append(LayerFootprint(i, layer.kind, a_in, a_out, weights, biases,
                                   layer_macc(layer), live, flash))
    peak = max([input_bytes] + [row.live_bytes for row in rows])
    return ResourceReport(
        phi_ram=peak + sizing.runtime_ram_overhead,
        phi_flash=sum(row.flash_bytes for row in rows) + sizing.flash_graph_overhead,
        phi_macc=sum(row.macc for row in rows),
        input_bytes=input_bytes,
        per_layer=tuple(rows),
    )


def estimate_macc(arch: ArchDescriptor) -> int:
    return sum(layer_macc(layer) for layer in arch.layers)


def estimate_flash(arch: ArchDescriptor, sizing: SizingConfig | None = None) -> int:
    return resource_report(arch, sizing).phi_flash


def estimate_peak_ram(arch: ArchDescriptor, sizing: SizingConfig | None = None) -> int:
    """Two-buffer liveness: the largest input+output pair plus runtime overhead."""
    return resource_report(arch, sizing).phi_ram


def is_feasible(arch: ArchDescriptor, target: HardwareTarget,
                sizing: SizingConfig | None = None) -> tuple[bool, ResourceReport]:
    report = resource_report(arch, sizing)
    ok = (
        report.phi_ram <= target.xi_ram
        and report.phi_flash <= target.xi_flash
        and report.phi_macc <= target.xi_macc
        and arch.point.c <= max_cells(arch.input)
    )
    return ok, report


def violations(report: ResourceReport, target: HardwareTarget) -> list[str]:
    out = []
    if report.phi_ram > target.xi_ram:
        out.append("ram")
    if report.phi_flash > target.xi_flash:
        out.append("flash")
    if report.phi_macc > target.xi_macc:
        out.append("macc")
    return out


def format_report_table(rows: list[dict]) -> str:
    """Render rows with keys name/accuracy/phi_ram/phi_flash/phi_macc/search_seconds.

    Columns follow the usual TinyML result layout: Acc [%], RAM [kiB],
    Flash [kiB], MACC [k], Search Cost [hh]:[mm]. Missing values print as '-'.
    """
    header = ("Model", "Acc [%]", "RAM [kiB]", "Flash [kiB]", "MACC [k]", "Search Cost [hh]:[mm]")
    body = []
    for row in rows:
        acc = row.get("accuracy")
        secs = row.get("search_seconds")
        body.append((
            str(row.get("name", "")),
            "-" if acc is None else f"{100 * acc:.1f}",
            f"{row['phi_ram'] / KIB:.2f}",
            f"{row['phi_flash'] / KIB:.2f}",
            f"{row['phi_macc'] / 1000:,.0f}",
            "-" if secs is None else format_hhmm(secs),
        ))
    widths = [max(len(h), *(len(r[i]) for r in body)) if body else len(h) for i, h in enumerate(header)]
    lines = [" | ".join(h.ljust(w) for h, w in zip(header, widths))]
    lines.append("-+-".join("-" * w for w in widths))
    for r in body:
        lines.append(" | ".join(v.ljust(w) for v, w in zip(r, widths)))
    return "\n".join(lines)


def format_hhmm(seconds: float) -> str:
    minutes = int(seconds // 60)
    return f"{minutes // 60:02d}:{minutes % 60:02d}"
