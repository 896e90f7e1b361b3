import json

import pytest
from hypothesis import given, settings, strategies as st

from occamnas.archspace import ArchDescriptor, InputShape, SearchPoint, build_architecture, max_cells
from occamnas.exceptions import UnknownPreset
from occamnas.resmodel import (
    HardwareTarget,
    SizingConfig,
    estimate_flash,
    estimate_macc,
    estimate_peak_ram,
    format_report_table,
    is_feasible,
    resource_report,
    target_preset,
)

from .oracles import brute_force_macc, brute_force_params, liveness_peak_bytes

KIB = 1024


def arch(k, c, s=50, ch=3, classes=2):
    return build_architecture(SearchPoint(k, c), InputShape(s, ch), classes)


def test_first_conv_macc():
    conv = arch(4, 2).layers[2]
    assert conv.kind == "conv3x3_same"
    from occamnas.resmodel import layer_macc
    assert layer_macc(conv) == 270_000 == 50 * 50 * 9 * 3 * 4


def test_macc_two_cells():
    assert estimate_macc(arch(4, 2)) == 574_584
    assert brute_force_macc(4, 2, 50, 3, 2) == 574_584


def test_macc_without_layers_is_zero():
    empty = ArchDescriptor(SearchPoint(1, 0), InputShape(4, 1), 2, (), (1,))
    assert estimate_macc(empty) == 0


def test_flash_two_cells_defaults():
    # weights 1428 B; bias-like params: conv 4+8+12, input norm 4*3, dense 12+2 = 50 -> 200 B;
    # six parameterized tensors * 8 B; 4096 B graph overhead
    a = arch(4, 2)
    weights, biases = brute_force_params(4, 2, 50, 3, 2)
    assert (weights, biases) == (1428, 50)
    assert estimate_flash(a, SizingConfig()) == 1428 + 50 * 4 + 6 * 8 + 4096 == 5772


def test_flash_single_dense_without_overheads():
    from occamnas.archspace import LayerSpec

    dense = ArchDescriptor(SearchPoint(4, 0), InputShape(1, 1), 2, (LayerSpec("dense", 4, 2, 2),), (4,))
    sizing = SizingConfig(per_tensor_quant_overhead=0, runtime_ram_overhead=0, flash_graph_overhead=0)
    assert estimate_flash(dense, sizing) == 8 * 1 + 2 * 4 == 16


def test_flash_all_zero_sizing_no_params():
    from occamnas.archspace import LayerSpec

    net = ArchDescriptor(SearchPoint(1, 0), InputShape(4, 1), 2,
                         (LayerSpec("rescale", (4, 4, 1), (4, 4, 1)),), (1,))
    zero = SizingConfig(0, 0, 0, 0, 0, 0)
    assert estimate_flash(net, zero) == 0


@pytest.mark.parametrize("c", [1, 2, 3, 4, 5])
def test_peak_ram_small_50px(c):
    assert estimate_peak_ram(arch(4, c)) == 7_500 + 10_000 + 2_048 == 19_548


def test_peak_ram_identity_network():
    empty = ArchDescriptor(SearchPoint(1, 0), InputShape(10, 3), 2, (), (1,))
    assert estimate_peak_ram(empty) == 300 + 2048


def test_peak_ram_doubling_k():
    assert estimate_peak_ram(arch(8, 1)) == 7_500 + 20_000 + 2_048


@pytest.mark.parametrize("k, c, s, ch", [(4, 2, 50, 3), (8, 0, 28, 1), (3, 3, 16, 3), (64, 1, 2, 1), (5, 0, 1, 1)])
def test_peak_ram_matches_liveness_simulation(k, c, s, ch):
    assert estimate_peak_ram(arch(k, c, s, ch)) == liveness_peak_bytes(k, c, s, ch, 2) + 2048


def test_presets():
    l0, l1, l4 = (target_preset(n) for n in ("L0", "L1", "L4"))
    assert (l0.xi_ram, l0.xi_flash, l0.xi_macc) == (20 * KIB, 128 * KIB, 750_000)
    assert (l1.xi_ram, l1.xi_flash, l1.xi_macc) == (32 * KIB, 256 * KIB, 930_000)
    assert (l4.xi_ram, l4.xi_flash, l4.xi_macc) == (40 * KIB, 128 * KIB, 2_730_000)
    with pytest.raises(UnknownPreset):
        target_preset("L9")


def test_target_bounds_positive():
    with pytest.raises(ValueError):
        HardwareTarget(0, 1, 1)


def test_feasibility_examples():
    ok, report = is_feasible(arch(4, 2), target_preset("L4"))
    assert ok and report.phi_macc == 574_584
    ok, report = is_feasible(arch(4, 2), HardwareTarget(10 ** 9, 10 ** 9, 1))
    assert not ok and report.phi_macc > 1
    ok, report = is_feasible(arch(64, 0, s=224), target_preset("L0"))
    assert not ok and report.input_bytes == 150_528 > 20 * KIB


def test_report_fold_consistency_and_json():
    report = resource_report(arch(6, 3, s=40, ch=1))
    rows = report.per_layer
    assert report.phi_macc == sum(r.macc for r in rows)
    assert report.phi_flash == sum(r.flash_bytes for r in rows) + 4096
    assert report.phi_flash >= sum(r.params for r in rows)
    assert report.phi_ram == max([report.input_bytes] + [r.live_bytes for r in rows]) + 2048
    doc = json.loads(report.to_json())
    assert doc["phi_macc"] == report.phi_macc and len(doc["per_layer"]) == len(rows)


def test_report_table_columns():
    table = format_report_table([{"name": "L4", "accuracy": 0.9012, "phi_ram": 33 * KIB,
                                  "phi_flash": 44.9 * KIB, "phi_macc": 2_086_000, "search_seconds": 167 * 60}])
    header = table.splitlines()[0]
    for col in ("Acc [%]", "RAM [kiB]", "Flash [kiB]", "MACC [k]", "Search Cost [hh]:[mm]"):
        assert col in header
    assert "90.1" in table and "02:47" in table and "2,086" in table


small = st.tuples(st.integers(1, 8), st.integers(0, 3), st.integers(1, 16), st.sampled_from([1, 3]))


@settings(max_examples=60)
@given(small)
def test_oracle_equivalence_sampled(args):
    k, c, s, ch = args
    if c > max_cells(InputShape(s, ch)):
        return
    a = arch(k, c, s, ch, 3)
    assert estimate_macc(a) == brute_force_macc(k, c, s, ch, 3)
    rows = resource_report(a).per_layer
    assert (sum(r.weights for r in rows), sum(r.biases for r in rows)) == brute_force_params(k, c, s, ch, 3)


@given(st.integers(1, 32), st.integers(0, 4), st.integers(16, 64), st.sampled_from([1, 3]))
def test_monotone_in_k_and_c(k, c, s, ch):
    base = resource_report(arch(k, c, s, ch))
    wider = resource_report(arch(k + 1, c, s, ch))
    assert wider.phi_ram >= base.phi_ram
    assert wider.phi_flash >= base.phi_flash
    assert wider.phi_macc >= base.phi_macc
    if c + 1 <= max_cells(InputShape(s, ch)):
        deeper = resource_report(arch(k, c + 1, s, ch))
        assert deeper.phi_flash >= base.phi_flash
        assert deeper.phi_macc >= base.phi_macc
        assert deeper.phi_ram >= base.phi_ram


@given(st.integers(1, 16), st.integers(0, 3), st.integers(1, 10 ** 6), st.integers(1, 10 ** 6),
       st.integers(1, 10 ** 7), st.sampled_from(["xi_ram", "xi_flash", "xi_macc"]), st.integers(1, 10 ** 6))
def test_feasibility_monotone_in_target(k, c, ram, flash, macc, which, extra):
    a = arch(k, c, 20, 1)
    t = HardwareTarget(ram, flash, macc)
    bigger = HardwareTarget(**{**t.to_dict(), which: getattr(t, which) + extra})
    if is_feasible(a, t)[0]:
        assert is_feasible(a, bigger)[0]
