import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from factories import T0, compare_to_naive, random_records, rec, window_of
from rdpsense.capture import TcpFlag
from rdpsense.errors import EmptyWindow, SchemaMismatch
from rdpsense.flowstats import (
    FlowConfig,
    PacketArrays,
    bulk_stats,
    compute_flow_features,
    compute_rdp_markers,
    extract_features,
    features_matrix,
)
from rdpsense.schema import (
    BASE_ATTRIBUTES,
    BASE_SCHEMA,
    FLOW_ATTRIBUTES,
    FULL_ATTRIBUTES,
    FeatureVector,
    export_features,
    read_features,
)
from rdpsense.windowing import Window


def test_schema_counts():
    assert len(FLOW_ATTRIBUTES) == 73
    assert len(BASE_ATTRIBUTES) == 87
    assert len(FULL_ATTRIBUTES) == 128
    assert len(set(FULL_ATTRIBUTES)) == 128
    assert {"Flow IAT Mean", "FwdFrame91-93", "BwdPUSH", "dct_col", "svd19", "ica0"} <= set(FULL_ATTRIBUTES)


def test_forward_length_stats():
    w = window_of([rec(T0 + i, payload=p, frame=54 + p) for i, p in enumerate([100, 200, 300])])
    f = compute_flow_features(w)
    assert f["Fwd Pkt Len Mean"] == 200
    assert f["Fwd Pkt Len Std"] == 100


def test_flow_iat():
    w = window_of([rec(T0 + s * 1_000_000) for s in (0, 1, 3)])
    f = compute_flow_features(w)
    assert f["Flow IAT Mean"] == 1_500_000
    assert (f["Flow IAT Min"], f["Flow IAT Max"]) == (1_000_000, 2_000_000)


def test_single_packet_degenerate():
    f = compute_flow_features(window_of([rec(T0, frame=100)]))
    for name in ("Flow Byts/s", "Flow Pkts/s", "Fwd Pkts/s", "Bwd Pkts/s", "Flow IAT Mean", "Flow IAT Std", "Fwd IAT Tot"):
        assert f[name] == 0
    assert all(math.isfinite(v) for v in f.values())
    assert f["Init Bwd Win Byts"] == -1


def test_empty_window():
    with pytest.raises(EmptyWindow):
        compute_flow_features(Window(T0, 30_000_000, ()))
    with pytest.raises(EmptyWindow):
        compute_rdp_markers(Window(T0, 30_000_000, ()))


def test_inclusive_bins():
    m = compute_rdp_markers(window_of([rec(T0, frame=92)]))
    assert (m["FwdFrame91-93"], m["FwdFrame90-94"], m["FwdFrame80-91"]) == (1, 1, 0)
    m = compute_rdp_markers(window_of([rec(T0, forward=False, frame=1500)]))
    assert m["BwdFrame1280-2559"] == 1
    m = compute_rdp_markers(window_of([rec(T0, forward=False, flags=TcpFlag.PSH | TcpFlag.ACK)]))
    assert (m["BwdPUSH"], m["FwdPUSH"]) == (1, 0)


def test_udp_packets_excluded_from_tcp_only_attributes():
    w = window_of([rec(T0, flags=TcpFlag.PSH), rec(T0 + 1, udp=True, frame=200)])
    f = compute_flow_features(w)
    assert f["Tot Fwd Pkts"] == 2
    assert f["PSH Flag Cnt"] == 1
    assert compute_rdp_markers(w)["FwdPUSH"] == 1


def test_bulk_rates():
    # four 100-byte backward payloads 0.1 s apart: one bulk of 400 bytes over 0.3 s
    w = window_of([rec(T0 + i * 100_000, forward=False, payload=100, frame=154) for i in range(4)])
    b = bulk_stats(PacketArrays.from_packets(w.packets()), forward=False)
    assert b["count"] == 1
    assert b["bytes_per_bulk"] == 400 and b["pkts_per_bulk"] == 4
    assert b["byte_rate"] == pytest.approx(400 / 0.3)
    assert b["pkt_rate"] == pytest.approx(4 / 0.3)
    f = compute_flow_features(w)
    assert f["Bwd Blk Rate Avg"] == pytest.approx(400 / 0.3)
    assert f["Fwd Byts/b Avg"] == 0


def test_bulk_needs_four_packets_and_small_gaps():
    three = window_of([rec(T0 + i * 100_000, payload=10, frame=64) for i in range(3)])
    assert compute_flow_features(three)["Fwd Byts/b Avg"] == 0
    gapped = window_of([rec(T0 + i * 1_500_000, payload=10, frame=64) for i in range(6)])
    assert compute_flow_features(gapped)["Fwd Byts/b Avg"] == 0


def test_active_idle_split():
    times = [0, 1, 2, 10, 11, 30]
    w = window_of([rec(T0 + t * 1_000_000) for t in times])
    f = compute_flow_features(w)
    # segments [0..2], [10..11], [30]; idle gaps 8 s and 19 s
    assert (f["Active Min"], f["Active Max"]) == (1_000_000, 2_000_000)
    assert (f["Idle Min"], f["Idle Max"]) == (8_000_000, 19_000_000)
    cfg = FlowConfig(activity_timeout=10_000_000)
    assert compute_flow_features(w, cfg)["Idle Min"] == 19_000_000


def test_subflows():
    w = window_of([rec(T0 + t, payload=10, frame=64) for t in (0, 100, 2_000_000, 2_000_100)])
    f = compute_flow_features(w)
    assert f["Subflow Fwd Pkts"] == 2
    assert f["Subflow Fwd Byts"] == 20


def test_against_naive_reference_random_windows():
    rng = np.random.default_rng(11)
    for i in range(60):
        w = window_of(random_records(rng, udp_share=0.3 if i % 3 == 0 else 0.0))
        values = {**compute_flow_features(w), **compute_rdp_markers(w)}
        assert compare_to_naive(values, w.packets()) == []


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_invariants(seed):
    w = window_of(random_records(np.random.default_rng(seed), udp_share=0.2))
    v = extract_features(w)
    f = dict(zip(BASE_ATTRIBUTES, v.values))
    pkts = w.packets()
    assert np.all(np.isfinite(v.values))
    assert f["Tot Fwd Pkts"] + f["Tot Bwd Pkts"] == len(pkts)
    assert f["TotLen Fwd Pkts"] + f["TotLen Bwd Pkts"] == sum(p.payload_len for p in pkts)
    for prefix in ("Fwd Pkt Len", "Bwd Pkt Len", "Pkt Len", "Flow IAT", "Fwd IAT", "Bwd IAT"):
        assert f[f"{prefix} Min"] <= f[f"{prefix} Mean"] + 1e-9
        assert f[f"{prefix} Mean"] <= f[f"{prefix} Max"] + 1e-9
    assert math.isclose(f["Pkt Len Var"], f["Pkt Len Std"] ** 2, rel_tol=1e-9, abs_tol=1e-12)
    for name in BASE_ATTRIBUTES:
        if "Frame" in name:
            side = f["Tot Fwd Pkts"] if name.startswith("Fwd") else f["Tot Bwd Pkts"]
            assert 0 <= f[name] <= side
    if f["Flow Duration"] > 0:
        assert math.isclose(f["Flow Pkts/s"] * f["Flow Duration"] / 1e6, len(pkts), rel_tol=1e-9)


def test_export_features():
    assert export_features([]).count("\n") == 1
    rows = [FeatureVector(np.arange(87.0), 0, (True,) * 5), FeatureVector(np.zeros(87), 1, None)]
    text = export_features(rows)
    assert text.count("\n") == 3
    matrix, labels = read_features(text)
    assert labels is None  # one row unlabeled
    np.testing.assert_array_equal(matrix.values[0], np.arange(87.0))
    with pytest.raises(SchemaMismatch):
        export_features([FeatureVector(np.zeros(5), 0, None)])


def test_export_round_trip_full_precision():
    rng = np.random.default_rng(3)
    ws = [window_of(random_records(rng), labels=(True, False, True, False, False)) for _ in range(5)]
    matrix, labels = features_matrix(ws)
    back, back_labels = read_features(export_features([extract_features(w) for w in ws], BASE_SCHEMA))
    np.testing.assert_array_equal(back.values, matrix.values)
    np.testing.assert_array_equal(back_labels, labels)
    assert back.names == BASE_ATTRIBUTES
