"""Per-window flow-meter statistics, RDP frame-length bins and PUSH counters.

Packet lengths are payload bytes above the transport header; frame bins use
the on-wire frame length. All times are microseconds. Degenerate divisions
(zero duration, empty direction) produce 0.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .capture import Direction, PacketRecord, TcpFlag, Transport
from .errors import EmptyWindow
from .schema import BASE_SCHEMA, FRAME_BINS, FeatureMatrix, FeatureVector
from .windowing import Window


@dataclass(frozen=True)
class FlowConfig:
    activity_timeout: int = 5_000_000
    bulk_min_packets: int = 4
    bulk_max_gap: int = 1_000_000
    subflow_gap: int = 1_000_000


DEFAULT_CONFIG = FlowConfig()


@dataclass(frozen=True)
class PacketArrays:
    ts: np.ndarray
    fwd: np.ndarray
    payload: np.ndarray
    frame: np.ndarray
    header: np.ndarray
    flags: np.ndarray
    tcp: np.ndarray
    window: np.ndarray

    @classmethod
    def from_packets(cls, packets: Sequence[PacketRecord]) -> "PacketArrays":
        n = len(packets)
        cols = np.array(
            [
                (
                    p.timestamp,
                    p.direction is Direction.FORWARD,
                    p.payload_len,
                    p.frame_len,
                    p.header_len,
                    int(p.tcp_flags),
                    p.transport is Transport.TCP,
                    -1 if p.tcp_window is None else p.tcp_window,
                )
                for p in packets
            ],
            dtype=np.int64,
        ).reshape(n, 8)
        return cls(
            ts=cols[:, 0],
            fwd=cols[:, 1].astype(bool),
            payload=cols[:, 2],
            frame=cols[:, 3],
            header=cols[:, 4],
            flags=cols[:, 5],
            tcp=cols[:, 6].astype(bool),
            window=cols[:, 7],
        )

    def __len__(self) -> int:
        return len(self.ts)


def _describe(x: np.ndarray) -> tuple[float, float, float, float]:
    """(min, mean, max, unbiased std); zeros for empty input, std 0 for n <= 1."""
    if len(x) == 0:
        return 0.0, 0.0, 0.0, 0.0
    x = x.astype(float)
    std = float(np.std(x, ddof=1)) if len(x) > 1 else 0.0
    return float(x.min()), float(x.mean()), float(x.max()), std


def _ratio(num: float, den: float) -> float:
    return float(num) / den if den else 0.0


def _active_idle(ts: np.ndarray, timeout: int) -> tuple[np.ndarray, np.ndarray]:
    gaps = np.diff(ts)
    breaks = np.flatnonzero(gaps > timeout)
    idle = gaps[breaks]
    starts = np.concatenate(([0], breaks + 1))
    ends = np.concatenate((breaks, [len(ts) - 1]))
    active = ts[ends] - ts[starts]
    return active[active > 0], idle


def bulk_stats(a: PacketArrays, forward: bool, cfg: FlowConfig = DEFAULT_CONFIG) -> dict[str, float]:
    """Bulk transfer statistics for one direction.

    A bulk is a run of at least ``bulk_min_packets`` consecutive
    payload-bearing packets in one direction, uninterrupted by payload from
    the other direction, with every gap at most ``bulk_max_gap``. Both the
    byte rate and the packet rate are returned.
    """
    carrying = a.payload > 0
    ts, fwd, size = a.ts[carrying], a.fwd[carrying], a.payload[carrying]
    zero = {"count": 0.0, "bytes_per_bulk": 0.0, "pkts_per_bulk": 0.0, "byte_rate": 0.0, "pkt_rate": 0.0}
    if len(ts) == 0:
        return zero
    boundary = np.ones(len(ts), dtype=bool)
    boundary[1:] = (fwd[1:] != fwd[:-1]) | (np.diff(ts) > cfg.bulk_max_gap)
    run_id = np.cumsum(boundary) - 1
    starts = np.flatnonzero(boundary)
    lengths = np.bincount(run_id)
    run_bytes = np.bincount(run_id, weights=size)
    run_first = ts[starts]
    run_last = ts[np.concatenate((starts[1:] - 1, [len(ts) - 1]))]
    run_fwd = fwd[starts]
    bulk = (lengths >= cfg.bulk_min_packets) & (run_fwd == forward)
    count = int(bulk.sum())
    if not count:
        return zero
    nbytes = float(run_bytes[bulk].sum())
    npkts = float(lengths[bulk].sum())
    secs = float((run_last[bulk] - run_first[bulk]).sum()) / 1e6
    return {
        "count": float(count),
        "bytes_per_bulk": nbytes / count,
        "pkts_per_bulk": npkts / count,
        "byte_rate": _ratio(nbytes, secs),
        "pkt_rate": _ratio(npkts, secs),
    }


def _flow_block(a: PacketArrays, cfg: FlowConfig) -> dict[str, float]:
    f: dict[str, float] = {}
    n = len(a)
    fwd, bwd = a.fwd, ~a.fwd
    duration = int(a.ts[-1] - a.ts[0])
    secs = duration / 1e6
    f["Flow Duration"] = float(duration)

    n_fwd, n_bwd = int(fwd.sum()), int(bwd.sum())
    bytes_fwd, bytes_bwd = int(a.payload[fwd].sum()), int(a.payload[bwd].sum())
    f["Tot Fwd Pkts"] = float(n_fwd)
    f["Tot Bwd Pkts"] = float(n_bwd)
    f["TotLen Fwd Pkts"] = float(bytes_fwd)
    f["TotLen Bwd Pkts"] = float(bytes_bwd)

    for prefix, mask in (("Fwd", fwd), ("Bwd", bwd)):
        lo, mean, hi, std = _describe(a.payload[mask])
        f[f"{prefix} Pkt Len Min"] = lo
        f[f"{prefix} Pkt Len Mean"] = mean
        f[f"{prefix} Pkt Len Max"] = hi
        f[f"{prefix} Pkt Len Std"] = std
    lo, mean, hi, std = _describe(a.payload)
    f["Pkt Len Min"], f["Pkt Len Mean"], f["Pkt Len Max"], f["Pkt Len Std"] = lo, mean, hi, std
    f["Pkt Len Var"] = std * std
    f["Pkt Size Avg"] = _ratio(bytes_fwd + bytes_bwd, n)
    f["Fwd Seg Size Avg"] = _ratio(bytes_fwd, n_fwd)
    f["Bwd Seg Size Avg"] = _ratio(bytes_bwd, n_bwd)

    lo, mean, hi, std = _describe(np.diff(a.ts))
    f["Flow IAT Min"], f["Flow IAT Mean"], f["Flow IAT Max"], f["Flow IAT Std"] = lo, mean, hi, std
    for prefix, mask in (("Fwd", fwd), ("Bwd", bwd)):
        iat = np.diff(a.ts[mask])
        lo, mean, hi, std = _describe(iat)
        f[f"{prefix} IAT Min"] = lo
        f[f"{prefix} IAT Mean"] = mean
        f[f"{prefix} IAT Max"] = hi
        f[f"{prefix} IAT Std"] = std
        f[f"{prefix} IAT Tot"] = float(iat.sum())

    f["Flow Byts/s"] = _ratio(bytes_fwd + bytes_bwd, secs)
    f["Flow Pkts/s"] = _ratio(n, secs)
    f["Fwd Pkts/s"] = _ratio(n_fwd, secs)
    f["Bwd Pkts/s"] = _ratio(n_bwd, secs)

    tcp_flags = a.flags[a.tcp]
    for name, flag in (
        ("FIN Flag Cnt", TcpFlag.FIN), ("SYN Flag Cnt", TcpFlag.SYN),
        ("RST Flag Cnt", TcpFlag.RST), ("PSH Flag Cnt", TcpFlag.PSH),
        ("ACK Flag Cnt", TcpFlag.ACK), ("URG Flag Cnt", TcpFlag.URG),
        ("CWE Flag Count", TcpFlag.CWR), ("ECE Flag Cnt", TcpFlag.ECE),
    ):
        f[name] = float(np.count_nonzero(tcp_flags & int(flag)))
    for prefix, mask in (("Fwd", fwd), ("Bwd", bwd)):
        fl = a.flags[mask & a.tcp]
        f[f"{prefix} PSH Flags"] = float(np.count_nonzero(fl & int(TcpFlag.PSH)))
        f[f"{prefix} URG Flags"] = float(np.count_nonzero(fl & int(TcpFlag.URG)))
        f[f"{prefix} Header Len"] = float(a.header[mask].sum())
        first = np.flatnonzero(mask & a.tcp)
        f[f"Init {prefix} Win Byts"] = float(a.window[first[0]]) if len(first) else -1.0

    active, idle = _active_idle(a.ts, cfg.activity_timeout)
    for prefix, vals in (("Active", active), ("Idle", idle)):
        lo, mean, hi, std = _describe(vals)
        f[f"{prefix} Min"], f[f"{prefix} Mean"], f[f"{prefix} Max"], f[f"{prefix} Std"] = lo, mean, hi, std

    subflows = 1 + int(np.count_nonzero(np.diff(a.ts) > cfg.subflow_gap))
    f["Subflow Fwd Pkts"] = n_fwd / subflows
    f["Subflow Bwd Pkts"] = n_bwd / subflows
    f["Subflow Fwd Byts"] = bytes_fwd / subflows
    f["Subflow Bwd Byts"] = bytes_bwd / subflows

    for prefix, forward in (("Fwd", True), ("Bwd", False)):
        b = bulk_stats(a, forward, cfg)
        f[f"{prefix} Byts/b Avg"] = b["bytes_per_bulk"]
        f[f"{prefix} Pkts/b Avg"] = b["pkts_per_bulk"]
        f[f"{prefix} Blk Rate Avg"] = b["byte_rate"]
    return f


def _marker_block(a: PacketArrays) -> dict[str, float]:
    f: dict[str, float] = {}
    for name, side, lo, hi in FRAME_BINS:
        mask = a.fwd if side == "Fwd" else ~a.fwd
        fr = a.frame[mask]
        f[name] = float(np.count_nonzero((fr >= lo) & (fr <= hi)))
    psh = a.tcp & ((a.flags & int(TcpFlag.PSH)) != 0)
    f["FwdPUSH"] = float(np.count_nonzero(psh & a.fwd))
    f["BwdPUSH"] = float(np.count_nonzero(psh & ~a.fwd))
    return f


def _arrays(window: Window | PacketArrays) -> PacketArrays:
    a = window if isinstance(window, PacketArrays) else PacketArrays.from_packets(window.packets())
    if len(a) == 0:
        raise EmptyWindow("window contains no packets")
    return a


def compute_flow_features(window: Window | PacketArrays, cfg: FlowConfig = DEFAULT_CONFIG) -> dict[str, float]:
    return _flow_block(_arrays(window), cfg)


def compute_rdp_markers(window: Window | PacketArrays) -> dict[str, float]:
    return _marker_block(_arrays(window))


def extract_features(window: Window, cfg: FlowConfig = DEFAULT_CONFIG) -> FeatureVector:
    """Full base attribute vector for one window, ordered by ``BASE_SCHEMA``."""
    a = _arrays(window)
    merged = _flow_block(a, cfg)
    merged.update(_marker_block(a))
    values = np.array([merged[name] for name in BASE_SCHEMA.names], dtype=float)
    return FeatureVector(values, window.start, window.labels)


def features_matrix(windows: Sequence[Window], cfg: FlowConfig = DEFAULT_CONFIG) -> tuple[FeatureMatrix, np.ndarray | None]:
    vecs = [extract_features(w, cfg) for w in windows]
    values = np.array([v.values for v in vecs], dtype=float).reshape(len(vecs), len(BASE_SCHEMA))
    labels = None
    if vecs and all(v.labels is not None for v in vecs):
        labels = np.array([v.labels for v in vecs], dtype=bool)
    return FeatureMatrix(values, BASE_SCHEMA.names), labels
