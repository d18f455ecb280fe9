"""Classic pcap reading/writing, direction normalization and conversation assembly."""

from __future__ import annotations

import enum
import logging
import socket
import struct
from collections import Counter
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Iterator, NamedTuple, Sequence

from .errors import MalformedCapture, TruncatedRecord, UnknownEndpoint

log = logging.getLogger(__name__)

PCAP_MAGIC = 0xA1B2C3D4
LINKTYPE_ETHERNET = 1
GLOBAL_HEADER_LEN = 24
RECORD_HEADER_LEN = 16
ETH_HEADER_LEN = 14

ETHERTYPE_IPV4 = 0x0800
ETHERTYPE_IPV6 = 0x86DD
ETHERTYPE_VLAN = 0x8100
ETHERTYPE_QINQ = 0x88A8

IPPROTO_TCP = 6
IPPROTO_UDP = 17
UDP_HEADER_LEN = 8


class Transport(str, enum.Enum):
    TCP = "TCP"
    UDP = "UDP"


class Direction(str, enum.Enum):
    FORWARD = "Forward"
    BACKWARD = "Backward"


class TcpFlag(enum.IntFlag):
    NONE = 0
    FIN = 0x01
    SYN = 0x02
    RST = 0x04
    PSH = 0x08
    ACK = 0x10
    URG = 0x20
    ECE = 0x40
    CWR = 0x80


_FLAGS = [TcpFlag(i) for i in range(256)]


class Endpoint(NamedTuple):
    addr: str
    port: int | None = None

    @classmethod
    def parse(cls, text: str) -> "Endpoint":
        """Parse ``"10.0.0.5"`` or ``"10.0.0.5:3389"``."""
        host, _, port = text.strip().partition(":")
        try:
            socket.inet_aton(host)
        except OSError as exc:
            raise ValueError(f"not a dotted-quad IPv4 address: {host!r}") from exc
        if host.count(".") != 3:
            raise ValueError(f"not a dotted-quad IPv4 address: {host!r}")
        return cls(host, int(port) if port else None)

    def matches(self, addr: str, port: int) -> bool:
        return addr == self.addr and (self.port is None or port == self.port)


@dataclass(frozen=True, slots=True)
class PacketRecord:
    """One captured TCP or UDP frame.

    ``timestamp`` is in microseconds since the epoch, ``frame_len`` is the
    on-wire length and ``header_len`` the transport header length in bytes.
    ``seq`` is the capture order within the source file.
    """

    timestamp: int
    src: Endpoint
    dst: Endpoint
    transport: Transport
    frame_len: int
    payload_len: int
    tcp_flags: TcpFlag = TcpFlag.NONE
    header_len: int | None = None
    tcp_window: int | None = None
    direction: Direction | None = None
    seq: int = 0

    def __post_init__(self):
        if self.header_len is None:
            default = 20 if self.transport is Transport.TCP else UDP_HEADER_LEN
            object.__setattr__(self, "header_len", default)
        if not 0 <= self.payload_len <= self.frame_len:
            raise ValueError(
                f"payload_len {self.payload_len} outside [0, frame_len={self.frame_len}]"
            )
        if self.transport is Transport.UDP and self.tcp_flags:
            raise ValueError("UDP records carry no TCP flags")

    @property
    def is_forward(self) -> bool:
        return self.direction is Direction.FORWARD


class ConversationKey(NamedTuple):
    local_addr: str
    local_port: int
    remote_addr: str
    remote_port: int
    transport: Transport


@dataclass(frozen=True)
class Conversation:
    key: ConversationKey
    packets: tuple[PacketRecord, ...]

    def __len__(self) -> int:
        return len(self.packets)

    @property
    def transport(self) -> Transport:
        return self.key.transport


@dataclass
class ParsedCapture:
    """Result of :func:`parse_pcap`: accepted records plus skip accounting."""

    records: list[PacketRecord]
    skipped: int = 0
    skip_reasons: Counter = field(default_factory=Counter)

    def __iter__(self) -> Iterator[PacketRecord]:
        return iter(self.records)

    def __len__(self) -> int:
        return len(self.records)

    def __getitem__(self, i):
        return self.records[i]


def normalize_direction(record: PacketRecord, local: Endpoint) -> PacketRecord:
    """Return ``record`` with direction set relative to ``local``.

    Forward is traffic leaving the local endpoint.
    """
    if local.matches(record.src.addr, record.src.port):
        return replace(record, direction=Direction.FORWARD)
    if local.matches(record.dst.addr, record.dst.port):
        return replace(record, direction=Direction.BACKWARD)
    raise UnknownEndpoint(
        f"neither {record.src.addr}:{record.src.port} nor "
        f"{record.dst.addr}:{record.dst.port} is local endpoint {local.addr}"
    )


def _read_global_header(data: bytes) -> str:
    if len(data) < GLOBAL_HEADER_LEN:
        raise MalformedCapture(f"capture is {len(data)} bytes, shorter than the pcap header")
    (magic,) = struct.unpack_from("<I", data, 0)
    if magic == PCAP_MAGIC:
        endian = "<"
    elif magic == 0xD4C3B2A1:
        endian = ">"
    else:
        raise MalformedCapture(f"unsupported pcap magic 0x{magic:08x}")
    linktype = struct.unpack_from(endian + "I", data, 20)[0]
    if linktype != LINKTYPE_ETHERNET:
        raise MalformedCapture(f"unsupported link type {linktype}, expected Ethernet")
    return endian


def _iter_frames(data: bytes) -> Iterator[tuple[int, int, memoryview]]:
    """Yield ``(timestamp_us, orig_len, frame_bytes)`` for every record."""
    endian = _read_global_header(data)
    rec = struct.Struct(endian + "IIII")
    view = memoryview(data)
    off = GLOBAL_HEADER_LEN
    n = len(data)
    while off < n:
        if n - off < RECORD_HEADER_LEN:
            raise TruncatedRecord(f"record header at offset {off} is cut short")
        ts_sec, ts_usec, incl_len, orig_len = rec.unpack_from(data, off)
        off += RECORD_HEADER_LEN
        if incl_len > n - off:
            raise TruncatedRecord(
                f"record at offset {off - RECORD_HEADER_LEN} claims {incl_len} bytes, "
                f"{n - off} remain"
            )
        yield ts_sec * 1_000_000 + ts_usec, orig_len, view[off : off + incl_len]
        off += incl_len


def _decode_frame(ts: int, orig_len: int, frame: memoryview, local: Endpoint, seq: int) -> PacketRecord | str:
    """Decode one Ethernet frame; returns a skip reason string on rejection."""
    caplen = len(frame)
    if caplen < ETH_HEADER_LEN:
        return "short-frame"
    l3 = ETH_HEADER_LEN
    (ethertype,) = struct.unpack_from("!H", frame, 12)
    if ethertype == ETHERTYPE_VLAN:
        if caplen < l3 + 4:
            return "short-frame"
        (ethertype,) = struct.unpack_from("!H", frame, l3 + 2)
        l3 += 4
        if ethertype in (ETHERTYPE_VLAN, ETHERTYPE_QINQ):
            return "qinq"
    elif ethertype == ETHERTYPE_QINQ:
        return "qinq"
    if ethertype == ETHERTYPE_IPV6:
        return "ipv6"
    if ethertype != ETHERTYPE_IPV4:
        return "non-ip"
    if caplen < l3 + 20:
        return "short-frame"
    ver_ihl = frame[l3]
    if ver_ihl >> 4 != 4:
        return "non-ip"
    ihl = (ver_ihl & 0x0F) * 4
    if ihl < 20:
        return "bad-ip-header"
    total_len, frag, proto = struct.unpack_from("!H2xH1xB", frame, l3 + 2)
    if frag & 0x1FFF:
        return "ip-fragment"
    if proto not in (IPPROTO_TCP, IPPROTO_UDP):
        return "non-tcp-udp"
    src = socket.inet_ntoa(bytes(frame[l3 + 12 : l3 + 16]))
    dst = socket.inet_ntoa(bytes(frame[l3 + 16 : l3 + 20]))
    l4 = l3 + ihl
    if proto == IPPROTO_TCP:
        if caplen < l4 + 20:
            return "short-frame"
        sport, dport, doff, flags, window = struct.unpack_from("!HH8xBBH", frame, l4)
        thl = (doff >> 4) * 4
        if thl < 20:
            return "bad-tcp-header"
        transport = Transport.TCP
        tcp_flags = _FLAGS[flags]
        tcp_window = window
    else:
        if caplen < l4 + UDP_HEADER_LEN:
            return "short-frame"
        sport, dport = struct.unpack_from("!HH", frame, l4)
        thl = UDP_HEADER_LEN
        transport = Transport.UDP
        tcp_flags = TcpFlag.NONE
        tcp_window = None
    if total_len:
        payload = total_len - ihl - thl
    else:
        # segmentation offload captures report total length 0
        payload = orig_len - l4 - thl
    payload = max(0, min(payload, orig_len))
    if local.matches(src, sport):
        direction = Direction.FORWARD
    elif local.matches(dst, dport):
        direction = Direction.BACKWARD
    else:
        return "foreign"
    return PacketRecord(
        ts, Endpoint(src, sport), Endpoint(dst, dport), transport, orig_len, payload,
        tcp_flags, thl, tcp_window, direction, seq,
    )


def parse_pcap(data: bytes, local: Endpoint | str) -> ParsedCapture:
    """Parse a classic microsecond pcap into direction-normalized records.

    Non-IPv4, non-TCP/UDP, QinQ, non-initial fragments, frames cut below
    the transport header and frames with no local endpoint are skipped and
    counted in ``skip_reasons``.
    """
    if isinstance(local, str):
        local = Endpoint.parse(local)
    out = ParsedCapture(records=[])
    for seq, (ts, orig_len, frame) in enumerate(_iter_frames(data)):
        rec = _decode_frame(ts, orig_len, frame, local, seq)
        if isinstance(rec, str):
            out.skipped += 1
            out.skip_reasons[rec] += 1
            continue
        out.records.append(rec)
    if out.skipped:
        log.debug("skipped %d frames: %s", out.skipped, dict(out.skip_reasons))
    return out


def read_pcap(path: str | Path, local: Endpoint | str) -> ParsedCapture:
    return parse_pcap(Path(path).read_bytes(), local)


def conversation_key(record: PacketRecord) -> ConversationKey:
    if record.direction is Direction.FORWARD:
        loc, rem = record.src, record.dst
    elif record.direction is Direction.BACKWARD:
        loc, rem = record.dst, record.src
    else:
        raise ValueError("record has no direction; normalize it first")
    return ConversationKey(loc.addr, loc.port, rem.addr, rem.port, record.transport)


def assemble_conversations(records: Iterable[PacketRecord]) -> list[Conversation]:
    """Group records by canonical 5-tuple, in order of first appearance."""
    groups: dict[ConversationKey, list[PacketRecord]] = {}
    for rec in records:
        groups.setdefault(conversation_key(rec), []).append(rec)
    return [
        Conversation(key, tuple(sorted(pkts, key=lambda r: (r.timestamp, r.seq))))
        for key, pkts in groups.items()
    ]


# --- writing -------------------------------------------------------------

_SRC_MAC = bytes.fromhex("020000000001")
_DST_MAC = bytes.fromhex("020000000002")


def _ip_checksum(header: bytes) -> int:
    s = sum(struct.unpack(f"!{len(header) // 2}H", header))
    while s >> 16:
        s = (s & 0xFFFF) + (s >> 16)
    return ~s & 0xFFFF


def encode_frame(rec: PacketRecord) -> bytes:
    """Build an Ethernet/IPv4 frame of exactly ``rec.frame_len`` bytes.

    Payload bytes are zero; trailing Ethernet padding fills the gap between
    the IP datagram and ``frame_len``.
    """
    thl = rec.header_len if rec.transport is Transport.TCP else UDP_HEADER_LEN
    if rec.transport is Transport.TCP and (thl < 20 or thl > 60 or thl % 4):
        raise ValueError(f"invalid TCP header length {thl}")
    ip_total = 20 + thl + rec.payload_len
    if ETH_HEADER_LEN + ip_total > rec.frame_len:
        raise ValueError(
            f"frame_len {rec.frame_len} too small for {rec.payload_len}-byte payload"
        )
    proto = IPPROTO_TCP if rec.transport is Transport.TCP else IPPROTO_UDP
    ip = bytearray(
        struct.pack(
            "!BBHHHBBH4s4s",
            0x45, 0, ip_total, 0, 0x4000, 64, proto, 0,
            socket.inet_aton(rec.src.addr), socket.inet_aton(rec.dst.addr),
        )
    )
    struct.pack_into("!H", ip, 10, _ip_checksum(bytes(ip)))
    if rec.transport is Transport.TCP:
        l4 = struct.pack(
            "!HHIIBBHHH",
            rec.src.port, rec.dst.port, 0, 0, (thl // 4) << 4, int(rec.tcp_flags),
            rec.tcp_window or 0, 0, 0,
        ) + b"\x01" * (thl - 20)
    else:
        l4 = struct.pack("!HHHH", rec.src.port, rec.dst.port, UDP_HEADER_LEN + rec.payload_len, 0)
    frame = b"".join((_DST_MAC, _SRC_MAC, b"\x08\x00", ip, l4))
    return frame + b"\x00" * (rec.frame_len - len(frame))


def write_pcap(records: Sequence[PacketRecord] | Iterable[PacketRecord], snaplen: int = 65535) -> bytes:
    parts = [struct.pack("<IHHiIII", PCAP_MAGIC, 2, 4, 0, 0, snaplen, LINKTYPE_ETHERNET)]
    rec_hdr = struct.Struct("<IIII")
    for rec in records:
        frame = encode_frame(rec)
        sec, usec = divmod(rec.timestamp, 1_000_000)
        parts.append(rec_hdr.pack(sec, usec, len(frame), len(frame)))
        parts.append(frame)
    return b"".join(parts)
