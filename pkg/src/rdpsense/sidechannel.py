"""Keystroke, mouse and typing-burst inference from RDP frame sizes.

Each keystroke travels as two 92-byte forward TCP frames; mouse clicks
produce 97-byte and mouse moves 104-byte forward frames. Backward PSH
frames following a keystroke carry the screen echo.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

from .capture import Direction, PacketRecord, TcpFlag
from .errors import NoTcpConversation
from .windowing import Window

KEYSTROKE_FRAME = 92
CLICK_FRAME = 97
MOVE_FRAME = 104
BURST_GAP_US = 1_000_000
ECHO_WINDOW_US = 200_000


@dataclass
class TypingBurst:
    start: int
    end: int
    keystrokes: int
    echo_sizes: list[int] = field(default_factory=list)

    @property
    def uniform_echo(self) -> bool:
        """All echoes the same size, as when a filler character is echoed."""
        return len(self.echo_sizes) > 1 and len(set(self.echo_sizes)) == 1


@dataclass
class KeystrokeReport:
    frame_count_92: int
    keystroke_estimate: int
    residual_frame: bool
    bursts: list[TypingBurst] = field(default_factory=list)


@dataclass
class MouseReport:
    click_packets: int
    move_packets: int
    events: list[tuple[int, str]] = field(default_factory=list)


def _tcp_packets(window: Window) -> list[PacketRecord]:
    convs = window.tcp_conversations()
    if not convs:
        raise NoTcpConversation(f"window at {window.start} has no TCP conversation")
    if len(convs) == 1:
        return list(convs[0].packets)
    pkts = [p for c in convs for p in c.packets]
    pkts.sort(key=lambda r: (r.timestamp, r.seq))
    return pkts


def _forward_sized(pkts, size: int, tolerance: int) -> list[PacketRecord]:
    return [
        p for p in pkts
        if p.direction is Direction.FORWARD and abs(p.frame_len - size) <= tolerance
    ]


def count_keystrokes(window: Window, tolerance: int = 0) -> KeystrokeReport:
    n = len(_forward_sized(_tcp_packets(window), KEYSTROKE_FRAME, tolerance))
    return KeystrokeReport(n, n // 2, n % 2 == 1)


def detect_mouse_events(window: Window, tolerance: int = 0) -> MouseReport:
    pkts = _tcp_packets(window)
    events = []
    clicks = moves = 0
    for p in pkts:
        if p.direction is not Direction.FORWARD:
            continue
        if abs(p.frame_len - CLICK_FRAME) <= tolerance:
            clicks += 1
            events.append((p.timestamp, "click"))
        elif abs(p.frame_len - MOVE_FRAME) <= tolerance:
            moves += 1
            events.append((p.timestamp, "move"))
        elif abs(p.frame_len - KEYSTROKE_FRAME) <= tolerance:
            events.append((p.timestamp, "key"))
    return MouseReport(clicks, moves, events)


def segment_typing_bursts(
    window: Window,
    gap: int = BURST_GAP_US,
    echo_window: int = ECHO_WINDOW_US,
    tolerance: int = 0,
) -> KeystrokeReport:
    """Group keystrokes into bursts and attach their echo payload sizes.

    Consecutive 92-byte frames are paired into keystrokes (an unpaired
    trailing frame is reported as residual). A new burst starts when the
    gap between keystrokes exceeds ``gap`` or a click frame falls between
    them. A backward PSH frame is an echo of the most recent keystroke if
    it arrives within ``echo_window`` of it.
    """
    if gap <= 0:
        raise ValueError("gap must be positive")
    pkts = _tcp_packets(window)
    keys = _forward_sized(pkts, KEYSTROKE_FRAME, tolerance)
    n = len(keys)
    pairs = [(keys[i].timestamp, keys[i + 1].timestamp) for i in range(0, n - 1, 2)]
    clicks = [p.timestamp for p in _forward_sized(pkts, CLICK_FRAME, tolerance)]
    echoes = [
        p for p in pkts
        if p.direction is Direction.BACKWARD and p.tcp_flags & TcpFlag.PSH
    ]

    # echo assignment: sweep echoes against keystroke start times
    echo_for: list[list[int]] = [[] for _ in pairs]
    ki = -1
    for e in echoes:
        while ki + 1 < len(pairs) and pairs[ki + 1][0] <= e.timestamp:
            ki += 1
        if ki >= 0 and e.timestamp - pairs[ki][0] <= echo_window:
            echo_for[ki].append(e.payload_len)

    bursts: list[TypingBurst] = []
    ci = 0
    for i, (t_down, t_up) in enumerate(pairs):
        split = not bursts
        if bursts:
            prev = pairs[i - 1][0]
            while ci < len(clicks) and clicks[ci] <= prev:
                ci += 1
            click_between = ci < len(clicks) and clicks[ci] < t_down
            split = t_down - prev > gap or click_between
        if split:
            bursts.append(TypingBurst(t_down, t_up, 0))
        b = bursts[-1]
        b.keystrokes += 1
        b.end = max(b.end, t_up)
        b.echo_sizes.extend(echo_for[i])
    return KeystrokeReport(n, n // 2, n % 2 == 1, bursts)


def analyze_window(window: Window, gap: int = BURST_GAP_US, echo_window: int = ECHO_WINDOW_US) -> dict:
    """JSON-ready side-channel report for one window."""
    keys = segment_typing_bursts(window, gap, echo_window)
    mouse = detect_mouse_events(window)
    return {
        "window_start_us": window.start,
        "frame_count_92": keys.frame_count_92,
        "keystroke_estimate": keys.keystroke_estimate,
        "residual_frame": keys.residual_frame,
        "click_packets": mouse.click_packets,
        "move_packets": mouse.move_packets,
        "bursts": [
            {**asdict(b), "uniform_echo": b.uniform_echo} for b in keys.bursts
        ],
    }


def report_json(reports: list[dict]) -> str:
    return json.dumps(reports, indent=1, sort_keys=True)
