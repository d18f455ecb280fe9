"""Deterministic synthetic RDP-like traces with known activity labels.

This is a test harness, not a traffic model. Each activity leaves a
scripted signature:

* typing: two forward 92-byte TCP frames per keystroke plus a backward PSH
  echo whose payload is drawn from 49..1200 bytes;
* mouse: forward 104-byte frames for moves and 97-byte frames for clicks;
* Download: backward 1280..1514-byte frames at the configured throughput;
* YouTube: periodic backward bursts of 640..1279-byte frames;
* Browsing: mouse activity, light typing and page loads of 320..639-byte
  backward frames;
* Clipboard: request/response exchanges of 140..159-byte forward and
  160..319-byte backward frames (our own construction).

With ``transport="UDP"`` the bulk traffic (download, video, page loads,
clipboard) moves to a UDP conversation on the same port pair while input
events stay on TCP.
"""

from __future__ import annotations

import csv
import io
import math
from collections import Counter
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .capture import Direction, Endpoint, PacketRecord, TcpFlag, Transport, write_pcap
from .errors import InvalidProfile
from .windowing import CLASSES, WINDOW_US, format_labels

LOCAL = Endpoint("192.168.1.10", 50123)
REMOTE = Endpoint("10.20.0.5", 3389)
EPOCH_S = 1_700_000_000
JITTER = 0.2

TCP_OVERHEAD = 54  # Ethernet + IPv4 + TCP
UDP_OVERHEAD = 42
MIN_FRAME = 60

KEY_PAYLOAD = 92 - TCP_OVERHEAD
CLICK_PAYLOAD = 97 - TCP_OVERHEAD
MOVE_PAYLOAD = 104 - TCP_OVERHEAD
ECHO_PAYLOAD_RANGE = (49, 1200)

# Sample counts per label combination (Download, Browsing, Notepad, YouTube, Clipboard)
TCP_MIXTURE = (
    (240, (1, 0, 0, 0, 0)), (240, (0, 1, 0, 0, 0)), (239, (0, 0, 1, 0, 0)),
    (243, (0, 0, 0, 1, 0)), (120, (0, 0, 0, 0, 1)), (74, (0, 1, 0, 0, 1)),
    (43, (1, 1, 0, 0, 0)), (25, (1, 0, 1, 0, 1)), (22, (1, 0, 1, 0, 0)),
    (62, (0, 0, 1, 1, 0)), (27, (1, 0, 0, 1, 0)), (63, (0, 1, 0, 1, 0)),
    (22, (0, 0, 1, 0, 1)), (15, (1, 1, 0, 0, 1)), (21, (1, 0, 1, 1, 1)),
)
UDP_MIXTURE = (
    (103, (1, 0, 0, 0, 0)), (92, (0, 1, 0, 0, 0)), (100, (0, 0, 1, 0, 0)),
    (105, (0, 0, 0, 1, 0)), (100, (0, 0, 0, 0, 1)), (42, (0, 1, 0, 0, 1)),
    (44, (0, 1, 0, 1, 0)), (42, (1, 0, 1, 0, 0)), (37, (1, 0, 1, 0, 1)),
    (39, (1, 0, 0, 1, 0)),
)


@dataclass(frozen=True)
class ActivityProfile:
    """Rates are per second and apply to every 30-second window of the trace.

    ``script`` lists extra input events as ``(seconds from trace start,
    "key" | "click" | "move")``. ``echo_payload`` fixes every echo size,
    as a password field does.
    """

    activities: tuple[str, ...]
    duration: float = 30.0
    typing_rate: float = 0.0
    mouse_move_rate: float = 0.0
    click_rate: float = 0.0
    download_throughput: float = 0.0
    video_burst_period: float = 0.0
    clipboard_event_count: int = 0
    page_load_period: float = 0.0
    seed: int = 0
    transport: str = "TCP"
    idle: bool = False
    script: tuple[tuple[float, str], ...] = ()
    echo_payload: int | None = None

    def validate(self) -> None:
        bad = [a for a in self.activities if a not in CLASSES]
        if bad:
            raise InvalidProfile(f"unknown activities {bad}")
        if self.duration <= 0:
            raise InvalidProfile("duration must be positive")
        rates = (self.typing_rate, self.mouse_move_rate, self.click_rate,
                 self.download_throughput, self.video_burst_period,
                 self.clipboard_event_count, self.page_load_period)
        if any(r < 0 for r in rates):
            raise InvalidProfile("rates must be non-negative")
        if not self.activities and not self.idle:
            raise InvalidProfile("profile needs at least one activity or idle=True")
        if self.transport not in ("TCP", "UDP"):
            raise InvalidProfile(f"transport must be TCP or UDP, got {self.transport!r}")
        if any(k not in ("key", "click", "move") or not 0 <= t < self.duration for t, k in self.script):
            raise InvalidProfile("script events must be (0 <= t < duration, key|click|move)")
        if self.echo_payload is not None and not 0 < self.echo_payload <= 1400:
            raise InvalidProfile("echo_payload must lie in 1..1400")

    @property
    def label_bits(self) -> tuple[bool, ...]:
        return tuple(c in self.activities for c in CLASSES)

    @property
    def n_windows(self) -> int:
        return max(1, math.ceil(self.duration * 1e6 / WINDOW_US))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["activities"] = list(self.activities)
        d["script"] = [list(e) for e in self.script]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ActivityProfile":
        d = dict(d)
        d["activities"] = tuple(d.get("activities", ()))
        d["script"] = tuple((float(t), str(k)) for t, k in d.get("script", ()))
        try:
            return cls(**d)
        except TypeError as exc:
            raise InvalidProfile(str(exc)) from exc


def profile_for(activities: Sequence[str], seed: int, duration: float = 30.0, transport: str = "TCP") -> ActivityProfile:
    """Draw per-activity rates from fixed ranges with ``seed``."""
    rng = np.random.default_rng([seed, 7919])
    acts = tuple(c for c in CLASSES if c in activities)
    typing = moves = clicks = 0.0
    throughput = video = page = 0.0
    clip = 0
    if "Notepad" in acts:
        typing += rng.uniform(4.0, 7.0)
    if "Browsing" in acts:
        moves += rng.uniform(3.0, 6.0)
        clicks += rng.uniform(0.2, 0.6)
        typing += rng.uniform(0.0, 0.5)
        page = rng.uniform(3.0, 6.0)
    if "Clipboard" in acts:
        clicks += rng.uniform(0.1, 0.3)
        moves += rng.uniform(0.0, 0.2)
        clip = int(rng.integers(3, 7))
    if "Download" in acts:
        throughput = rng.uniform(40_000, 100_000)
    if "YouTube" in acts:
        video = rng.uniform(0.5, 1.0)
    return ActivityProfile(
        activities=acts, duration=duration, typing_rate=typing, mouse_move_rate=moves,
        click_rate=clicks, download_throughput=throughput, video_burst_period=video,
        clipboard_event_count=clip, page_load_period=page, seed=seed,
        transport=transport, idle=not acts,
    )


class _Builder:
    """Accumulates packets as parallel lists: time (us), forward?, udp?, frame_len, payload, flags."""

    def __init__(self):
        self.rows: list[tuple[int, bool, bool, int, int, int]] = []

    def tcp(self, t, forward, payload, flags=TcpFlag.PSH | TcpFlag.ACK):
        self.rows.append((int(t), forward, False, max(MIN_FRAME, payload + TCP_OVERHEAD), payload, int(flags)))

    def tcp_frame(self, t, forward, frame, flags=TcpFlag.ACK):
        self.rows.append((int(t), forward, False, frame, frame - TCP_OVERHEAD, int(flags)))

    def ack(self, t, forward, udp=False):
        self.rows.append((int(t), forward, udp, MIN_FRAME, 0 if not udp else MIN_FRAME - UDP_OVERHEAD, 0 if udp else int(TcpFlag.ACK)))

    def bulk(self, t, forward, frame, udp, flags=TcpFlag.ACK):
        if udp:
            self.rows.append((int(t), forward, True, frame, frame - UDP_OVERHEAD, 0))
        else:
            self.rows.append((int(t), forward, False, frame, frame - TCP_OVERHEAD, int(flags)))

    def records(self) -> list[PacketRecord]:
        order = sorted(range(len(self.rows)), key=lambda i: (self.rows[i][0], i))
        out = []
        for seq, i in enumerate(order):
            t, fwd, udp, frame, payload, flags = self.rows[i]
            src, dst = (LOCAL, REMOTE) if fwd else (REMOTE, LOCAL)
            out.append(PacketRecord(
                t, src, dst, Transport.UDP if udp else Transport.TCP, frame, payload,
                TcpFlag(flags), None, None if udp else 64240,
                Direction.FORWARD if fwd else Direction.BACKWARD, seq,
            ))
        return out


def _slots(rng, n: int, start: int, span: int) -> np.ndarray:
    """``n`` event times, one per equal slot, jittered by +-20% of the slot width."""
    if n <= 0:
        return np.zeros(0, dtype=np.int64)
    width = span / n
    centers = start + (np.arange(n) + 0.5) * width
    return (centers + rng.uniform(-JITTER, JITTER, n) * width).astype(np.int64)


@dataclass
class SyntheticTrace:
    pcap: bytes
    labels: str
    truth: list[dict] = field(default_factory=list)
    profile: ActivityProfile | None = None

    @property
    def keystrokes(self) -> int:
        return sum(w["keystrokes"] for w in self.truth)

    @property
    def moves(self) -> int:
        return sum(w["moves"] for w in self.truth)

    @property
    def clicks(self) -> int:
        return sum(w["clicks"] for w in self.truth)


def _emit_key(b: _Builder, rng, t: int, spacing: float, echo_payload: int | None) -> None:
    up = int(min(0.25 * spacing, 80_000))
    b.tcp(t, True, KEY_PAYLOAD)
    b.tcp(t + max(up, 1), True, KEY_PAYLOAD)
    delay = int(min(rng.uniform(20_000, 60_000), 0.5 * spacing))
    size = echo_payload if echo_payload is not None else int(rng.integers(ECHO_PAYLOAD_RANGE[0], ECHO_PAYLOAD_RANGE[1] + 1))
    b.tcp(t + max(delay, 1), False, size)
    b.ack(t + max(delay, 1) + 500, True)


def generate_packets(profile: ActivityProfile) -> tuple[list[PacketRecord], list[dict]]:
    profile.validate()
    rng = np.random.default_rng(profile.seed)
    udp = profile.transport == "UDP"
    b = _Builder()
    t0 = EPOCH_S * 1_000_000
    total_us = int(round(profile.duration * 1e6))
    truth = []
    # events stay clear of the window edge so keystroke frame pairs never straddle windows
    margin = 300_000
    for w in range(profile.n_windows):
        ws = t0 + w * WINDOW_US
        span = min(WINDOW_US, total_us - w * WINDOW_US)
        secs = span / 1e6
        usable = max(span - margin, 1)
        counts = Counter()

        for i in range(int(math.ceil(secs))):
            b.ack(ws + i * 1_000_000, True)
            b.ack(ws + i * 1_000_000 + 5_000, False)

        n_keys = int(round(profile.typing_rate * secs))
        for t in _slots(rng, n_keys, ws, usable):
            _emit_key(b, rng, t, usable / n_keys, profile.echo_payload)
        counts["keystrokes"] += n_keys

        n_moves = int(round(profile.mouse_move_rate * secs))
        for t in _slots(rng, n_moves, ws, usable):
            b.tcp(t, True, MOVE_PAYLOAD)
        counts["moves"] += n_moves

        n_clicks = int(round(profile.click_rate * secs))
        for t in _slots(rng, n_clicks, ws, usable):
            b.tcp(t, True, CLICK_PAYLOAD)
        counts["clicks"] += n_clicks

        for offset, kind in profile.script:
            t = t0 + int(round(offset * 1e6))
            if not ws <= t < ws + span:
                continue
            if kind == "key":
                _emit_key(b, rng, t, 200_000, profile.echo_payload)
                counts["keystrokes"] += 1
            elif kind == "click":
                b.tcp(t, True, CLICK_PAYLOAD)
                counts["clicks"] += 1
            else:
                b.tcp(t, True, MOVE_PAYLOAD)
                counts["moves"] += 1

        if profile.download_throughput > 0:
            target = profile.download_throughput * secs
            sizes = []
            while sum(sizes) < target:
                sizes.extend(rng.integers(1280, 1515, 256).tolist())
            cum = np.cumsum(sizes)
            sizes = sizes[: int(np.searchsorted(cum, target)) + 1]
            for i, (t, size) in enumerate(zip(_slots(rng, len(sizes), ws, span), sizes)):
                b.bulk(t, False, size, udp, TcpFlag.ACK | (TcpFlag.PSH if i % 8 == 7 else 0))
                if i % 2 == 1:
                    b.ack(t + 200, True, udp)

        if profile.video_burst_period > 0:
            n_bursts = max(1, int(secs / profile.video_burst_period))
            for t in _slots(rng, n_bursts, ws, usable):
                n = int(rng.integers(30, 51))
                frames = rng.integers(640, 1280, n)
                for i, size in enumerate(frames):
                    b.bulk(t + i * 1_000, False, int(size), udp, TcpFlag.ACK | (TcpFlag.PSH if i == n - 1 else 0))
                    if i % 2 == 1:
                        b.ack(t + i * 1_000 + 200, True, udp)

        if profile.page_load_period > 0:
            n_loads = max(1, int(secs / profile.page_load_period))
            for t in _slots(rng, n_loads, ws, usable):
                n = int(rng.integers(15, 41))
                for i, size in enumerate(rng.integers(320, 640, n)):
                    b.bulk(t + i * 2_000, False, int(size), udp)
                    if i % 2 == 1:
                        b.ack(t + i * 2_000 + 300, True, udp)

        if profile.clipboard_event_count > 0:
            for t in _slots(rng, profile.clipboard_event_count, ws, usable):
                for i in range(25):
                    tx = t + i * 4_000
                    req = int(rng.integers(140, 160))
                    resp = int(rng.integers(160, 320))
                    b.bulk(tx, True, req, udp, TcpFlag.PSH | TcpFlag.ACK)
                    b.bulk(tx + 1_500, False, resp, udp, TcpFlag.PSH | TcpFlag.ACK)

        truth.append({"window_start_us": ws, "keystrokes": counts["keystrokes"],
                      "moves": counts["moves"], "clicks": counts["clicks"]})
    return b.records(), truth


def generate_trace(profile: ActivityProfile) -> SyntheticTrace:
    """Pcap bytes, label CSV and per-window ground truth; byte-identical per profile."""
    records, truth = generate_packets(profile)
    labels = format_labels((w["window_start_us"], profile.label_bits) for w in truth)
    return SyntheticTrace(write_pcap(records), labels, truth, profile)


def mixture_profiles(total: int, seed: int = 0, transport: str = "TCP", duration: float = 30.0) -> list[ActivityProfile]:
    """Profiles whose label combinations follow the collected sample mixture, scaled to ``total``."""
    table = TCP_MIXTURE if transport == "TCP" else UDP_MIXTURE
    weights = np.array([n for n, _ in table], dtype=float)
    exact = weights / weights.sum() * total
    counts = np.floor(exact).astype(int)
    for i in np.argsort(-(exact - counts), kind="stable")[: total - counts.sum()]:
        counts[i] += 1
    profiles = []
    k = 0
    for count, (_, bits) in zip(counts, table):
        acts = tuple(c for c, bit in zip(CLASSES, bits) if bit)
        for _ in range(count):
            profiles.append(profile_for(acts, seed * 1_000_003 + k, duration, transport))
            k += 1
    return profiles


MANIFEST_HEADER = ("Num samples",) + tuple(f"{c}?" for c in CLASSES)
INDEX_HEADER = ("trace", "labels", "windows", "activities", "seed", "transport")


def generate_corpus(profiles: Sequence[ActivityProfile], out_dir: str | Path) -> Path:
    """Write one pcap + label CSV per profile, ``traces.csv`` and ``manifest.csv``.

    The manifest counts 30-second samples per label combination.
    """
    if not profiles:
        raise InvalidProfile("empty profile list")
    for p in profiles:
        p.validate()
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    combos: Counter = Counter()
    order: list[tuple[bool, ...]] = []
    index = io.StringIO()
    iw = csv.writer(index, lineterminator="\n")
    iw.writerow(INDEX_HEADER)
    for i, p in enumerate(profiles):
        trace = generate_trace(p)
        stem = f"trace_{i:04d}"
        (out / f"{stem}.pcap").write_bytes(trace.pcap)
        (out / f"{stem}.labels.csv").write_text(trace.labels)
        iw.writerow([f"{stem}.pcap", f"{stem}.labels.csv", len(trace.truth), "+".join(p.activities) or "idle", p.seed, p.transport])
        if p.label_bits not in combos:
            order.append(p.label_bits)
        combos[p.label_bits] += len(trace.truth)
    (out / "traces.csv").write_text(index.getvalue())
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(MANIFEST_HEADER)
    for bits in order:
        w.writerow([combos[bits], *(int(b) for b in bits)])
    (out / "manifest.csv").write_text(buf.getvalue())
    return out
