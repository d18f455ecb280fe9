"""Fixed-length windows over conversations, plus the label sidecar format."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field, replace
from typing import Iterable, Sequence

from .capture import Conversation, PacketRecord, Transport
from .errors import LabelSchemaError, MissingLabel

CLASSES = ("Download", "Browsing", "Notepad", "YouTube", "Clipboard")
LABEL_COLUMNS = tuple(c.lower() for c in CLASSES)
LABEL_HEADER = ("start_us",) + LABEL_COLUMNS

WINDOW_US = 30_000_000
# a final window whose last packet is more than this far from its end is partial
PARTIAL_SLACK_US = 1_000_000


@dataclass(frozen=True)
class Window:
    start: int
    length: int
    conversations: tuple[Conversation, ...]
    labels: tuple[bool, ...] | None = None
    partial: bool = False

    @property
    def end(self) -> int:
        return self.start + self.length

    def packets(self) -> list[PacketRecord]:
        """All packets of all conversations, in time then capture order."""
        if len(self.conversations) == 1:
            return list(self.conversations[0].packets)
        merged = [p for c in self.conversations for p in c.packets]
        merged.sort(key=lambda r: (r.timestamp, r.seq))
        return merged

    def packet_count(self) -> int:
        return sum(len(c) for c in self.conversations)

    def tcp_conversations(self) -> list[Conversation]:
        return [c for c in self.conversations if c.transport is Transport.TCP]


def segment_windows(
    conversations: Sequence[Conversation],
    window_len: int = WINDOW_US,
    origin: int | str = "first-packet",
) -> list[Window]:
    """Cut conversations into half-open windows ``[origin + k*len, origin + (k+1)*len)``.

    With ``origin="first-packet"`` the origin is the earliest timestamp
    rounded down to the whole second. Packets before the origin are dropped
    and windows holding no packets are omitted.
    """
    if window_len <= 0:
        raise ValueError("window_len must be positive")
    stamps = [p.timestamp for c in conversations for p in c.packets]
    if not stamps:
        return []
    if origin == "first-packet":
        t0 = min(stamps) // 1_000_000 * 1_000_000
    elif isinstance(origin, int):
        t0 = origin
    else:
        raise ValueError(f"origin must be 'first-packet' or an integer, got {origin!r}")

    buckets: dict[int, dict[int, list[PacketRecord]]] = {}
    for ci, conv in enumerate(conversations):
        for p in conv.packets:
            if p.timestamp < t0:
                continue
            k = (p.timestamp - t0) // window_len
            buckets.setdefault(k, {}).setdefault(ci, []).append(p)
    if not buckets:
        return []

    last_k = max(buckets)
    last_ts = max(stamps)
    windows = []
    for k in sorted(buckets):
        start = t0 + k * window_len
        convs = tuple(
            Conversation(conversations[ci].key, tuple(pkts))
            for ci, pkts in sorted(buckets[k].items())
        )
        partial = k == last_k and start + window_len - last_ts > PARTIAL_SLACK_US
        windows.append(Window(start, window_len, convs, partial=partial))
    return windows


@dataclass
class LabelTable:
    rows: dict[int, tuple[bool, ...]] = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.rows)


def parse_labels(text: str, source: str = "<labels>") -> LabelTable:
    """Parse a ``start_us,download,browsing,notepad,youtube,clipboard`` CSV.

    The header row is optional.
    """
    table = LabelTable()
    for lineno, row in enumerate(csv.reader(io.StringIO(text)), start=1):
        if not row or all(not cell.strip() for cell in row):
            continue
        if lineno == 1 and row[0].strip() == "start_us":
            if tuple(c.strip() for c in row) != LABEL_HEADER:
                raise LabelSchemaError(f"{source}:1: unexpected header {row}")
            continue
        if len(row) != len(LABEL_HEADER):
            raise LabelSchemaError(
                f"{source}:{lineno}: expected {len(LABEL_HEADER)} columns "
                f"(start + 5 labels), got {len(row)}"
            )
        try:
            start = int(row[0])
            bits = tuple(int(c) for c in row[1:])
        except ValueError as exc:
            raise LabelSchemaError(f"{source}:{lineno}: {exc}") from exc
        if any(b not in (0, 1) for b in bits):
            raise LabelSchemaError(f"{source}:{lineno}: label values must be 0 or 1")
        table.rows[start] = tuple(bool(b) for b in bits)
    return table


def format_labels(rows: Iterable[tuple[int, Sequence[bool]]]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(LABEL_HEADER)
    for start, bits in rows:
        if len(bits) != len(CLASSES):
            raise LabelSchemaError(f"label vector for {start} has {len(bits)} entries")
        w.writerow([start, *(int(bool(b)) for b in bits)])
    return buf.getvalue()


def attach_labels(windows: Sequence[Window], labels: str | LabelTable) -> list[Window]:
    table = parse_labels(labels) if isinstance(labels, str) else labels
    out = []
    for w in windows:
        try:
            out.append(replace(w, labels=table.rows[w.start]))
        except KeyError:
            raise MissingLabel(f"no label row for window starting at {w.start} us") from None
    return out
