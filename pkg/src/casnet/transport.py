"""Wire format for compressed feature frames plus lossy-channel and FC-side assembly.

Frame layout (little-endian, 20-byte header):

    offset  size  field
    0       4     magic "CASF"
    4       1     version (currently 1)
    5       2     node_id
    7       4     frame_index
    11      1     D
    12      1     F'
    13      2     rank
    15      1     flags
    16      4     CRC32 of payload

Payload: D*rank float32 (left block, row-major) then rank*F' float32
(right block, row-major).
"""

import struct
import zlib
from dataclasses import dataclass, field

import numpy as np

from .compressor import SvdFactors

MAGIC = b"CASF"
VERSION = 1
HEADER_FMT = "<4sBHIBBHBI"
HEADER_SIZE = struct.calcsize(HEADER_FMT)
assert HEADER_SIZE == 20


class TransportError(ValueError):
    """Malformed or corrupted wire data."""


def payload_nbytes(d: int, f_prime: int, rank: int) -> int:
    return 4 * (d + f_prime) * rank


def frame_nbytes(d: int, f_prime: int, rank: int) -> int:
    return HEADER_SIZE + payload_nbytes(d, f_prime, rank)


def serialize(f: SvdFactors, node_id: int, frame_index: int, flags: int = 0) -> bytes:
    """Encode one frame's factors as header + float32 payload."""
    d, fp = f.shape
    if not 0 <= node_id <= 0xFFFF:
        raise ValueError("node_id out of range")
    if not 0 <= frame_index <= 0xFFFFFFFF:
        raise ValueError("frame_index out of range")
    if d > 0xFF or fp > 0xFF:
        raise ValueError("feature dims exceed wire format limits")
    payload = (
        f.left.astype("<f4").tobytes() + f.right.astype("<f4").tobytes()
    )
    crc = zlib.crc32(payload) & 0xFFFFFFFF
    header = struct.pack(
        HEADER_FMT, MAGIC, VERSION, node_id, frame_index, d, fp, f.rank, flags, crc
    )
    return header + payload


@dataclass
class ReceivedFrame:
    node_id: int
    frame_index: int
    factors: SvdFactors
    flags: int = 0


def deserialize(buf: bytes) -> ReceivedFrame:
    """Decode one frame, verifying magic, version, shape bounds, and CRC."""
    if len(buf) < HEADER_SIZE:
        raise TransportError(f"frame truncated: {len(buf)} bytes")
    magic, version, node_id, frame_index, d, fp, rank, flags, crc = struct.unpack(
        HEADER_FMT, buf[:HEADER_SIZE]
    )
    if magic != MAGIC:
        raise TransportError(f"bad magic {magic!r}")
    if version != VERSION:
        raise TransportError(f"unsupported version {version}")
    if not 1 <= rank <= min(d, fp):
        raise TransportError(f"rank {rank} out of range for {d}x{fp}")
    need = payload_nbytes(d, fp, rank)
    payload = buf[HEADER_SIZE : HEADER_SIZE + need]
    if len(payload) != need:
        raise TransportError(f"payload truncated: {len(payload)} of {need} bytes")
    if zlib.crc32(payload) & 0xFFFFFFFF != crc:
        raise TransportError(
            f"payload CRC mismatch for node {node_id} frame {frame_index}"
        )
    left = np.frombuffer(payload[: 4 * d * rank], dtype="<f4").reshape(d, rank)
    right = np.frombuffer(payload[4 * d * rank :], dtype="<f4").reshape(rank, fp)
    return ReceivedFrame(node_id, frame_index, SvdFactors(left, right, rank), flags)


@dataclass(frozen=True)
class ChannelModel:
    """Per-frame independent drop/delay lossy channel, deterministic under jitter_seed."""

    drop_prob: float = 0.0
    max_delay_frames: int = 0
    jitter_seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.drop_prob <= 1.0:
            raise ValueError("drop_prob must be in [0, 1]")
        if self.max_delay_frames < 0:
            raise ValueError("max_delay_frames must be >= 0")


@dataclass
class FrameEvent:
    """A frame plus the query tick at which it becomes visible to the FC."""

    arrival: int
    frame: ReceivedFrame


def channel_apply(frames: list[ReceivedFrame], ch: ChannelModel) -> list[FrameEvent]:
    """Drop or delay each frame independently; sort survivors by arrival.

    Arrival tick = frame_index + delay. Frames from different nodes may
    interleave; headers keep the original indices.
    """
    rng = np.random.default_rng(ch.jitter_seed)
    events = []
    for fr in frames:
        dropped = rng.random() < ch.drop_prob
        delay = int(rng.integers(0, ch.max_delay_frames + 1))
        if dropped:
            continue
        events.append(FrameEvent(fr.frame_index + delay, fr))
    events.sort(key=lambda e: (e.arrival, e.frame.node_id, e.frame.frame_index))
    return events


@dataclass
class FrameStore:
    """Bounded reorder buffer feeding the attention window at the FC.

    Frames for query k live in [k - past_window, k]. A frame arriving after
    the last query that could use it (arrival > index + past_window) is
    discarded and counted. Queries must advance monotonically.
    """

    past_window: int
    discarded: int = 0
    delivered: int = 0
    _events: list[FrameEvent] = field(default_factory=list)
    _next_event: int = 0
    _store: dict = field(default_factory=dict)
    _cursor: int = -1

    def __post_init__(self):
        if self.past_window < 0:
            raise ValueError("past_window must be >= 0")

    def ingest(self, events: list[FrameEvent]):
        consumed = self._events[: self._next_event]
        pending = self._events[self._next_event :] + list(events)
        pending.sort(key=lambda e: (e.arrival, e.frame.node_id, e.frame.frame_index))
        self._events = consumed + pending

    def window(self, k: int) -> dict[int, list[SvdFactors | None]]:
        """Available frames at indices [k-b, k] per node; None marks a gap."""
        if k < self._cursor:
            raise ValueError("queries must be non-decreasing")
        self._cursor = k
        while self._next_event < len(self._events):
            ev = self._events[self._next_event]
            if ev.arrival > k:
                break
            self._next_event += 1
            fr = ev.frame
            if fr.frame_index + self.past_window < k:
                self.discarded += 1
                continue
            self.delivered += 1
            self._store.setdefault(fr.node_id, {})[fr.frame_index] = fr.factors
        out = {}
        for node, frames in self._store.items():
            lo = k - self.past_window
            for idx in [i for i in frames if i < lo]:
                del frames[idx]
            out[node] = [frames.get(i) for i in range(lo, k + 1)]
        return out


def fc_assemble(events: list[FrameEvent], past_window: int) -> FrameStore:
    store = FrameStore(past_window)
    store.ingest(events)
    return store


def write_casf(path, frames: list[bytes]):
    """Concatenate serialized frames into a replayable container file."""
    with open(path, "wb") as fh:
        for buf in frames:
            fh.write(buf)


def read_casf(path) -> list[ReceivedFrame]:
    """Parse a container written by write_casf, validating every frame."""
    out = []
    with open(path, "rb") as fh:
        blob = fh.read()
    pos = 0
    while pos < len(blob):
        if len(blob) - pos < HEADER_SIZE:
            raise TransportError("trailing bytes do not form a header")
        _, _, _, _, d, fp, rank, _, _ = struct.unpack(
            HEADER_FMT, blob[pos : pos + HEADER_SIZE]
        )
        total = frame_nbytes(d, fp, rank)
        out.append(deserialize(blob[pos : pos + total]))
        pos += total
    return out
