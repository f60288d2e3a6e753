"""
Binary wire protocol between agents and the fusion server.

Every message is ``magic "HAMR" | type u8 | body length u32`` followed by
the body. Integers and floats are little-endian.

HELLO (1)    agent u32, payload kind u8 (0 depth, 1 points), flags u8
             (bit0 metric poses, bit1 metric depth), fx fy cx cy k1 k2 f32,
             width u16, height u16, d_s u16 (0: no semantics)
FRAME (2)    agent u32, seq u64, timestamp u64 ns, pose 7 x f64
             (qw qx qy qz tx ty tz), payload flags u8 (bit0 depth,
             bit1 points, bit2 semantic), then
               RGB block       width u16, height u16, width*height*3 bytes
               depth block     width u16, height u16, width*height f32
            or point block     M u32, M*3 f32, M*3 bytes
             and optionally
               semantic block  width u16, height u16, d_s u16, f32 values
BYE (3)      agent u32
ALIGNED (4)  agent u32, local-to-global Sim3 as 8 x f64 (s qw qx qy qz tx ty tz)
"""

import asyncio
import struct
from dataclasses import dataclass, field
from typing import Optional, Tuple

import numpy as np

from ..exceptions import MalformedMessage, TruncatedStream
from ..geometry import SE3Pose, Sim3Transform
from ..splatmap.frames import PAYLOAD_DEPTH, PAYLOAD_POINTS, DataFrame, DeviceProfile, Intrinsics

MAGIC = b'HAMR'
HEADER = struct.Struct('<4sBI')

HELLO = 1
FRAME = 2
BYE = 3
ALIGNED = 4

FLAG_METRIC = 0x1
FLAG_METRIC_DEPTH = 0x2

PAYLOAD_DEPTH_BIT = 0x1
PAYLOAD_POINTS_BIT = 0x2
PAYLOAD_SEMANTIC_BIT = 0x4

_HELLO = struct.Struct('<IBB6fHHH')
_FRAME_HEAD = struct.Struct('<IQQ7dB')
_AGENT = struct.Struct('<I')
_ALIGNED = struct.Struct('<I8d')
_DIMS = struct.Struct('<HH')
_SEMANTIC_DIMS = struct.Struct('<HHH')
_COUNT = struct.Struct('<I')

_PAYLOAD_CODES = {PAYLOAD_DEPTH: 0, PAYLOAD_POINTS: 1}
_PAYLOAD_NAMES = {v: k for k, v in _PAYLOAD_CODES.items()}


@dataclass(frozen=True)
class Hello:
    agent_id: int
    profile: DeviceProfile
    distortion: Tuple[float, float] = (0.0, 0.0)

    type_code = HELLO


@dataclass(frozen=True, eq=False)
class FrameMessage:
    agent_id: int
    seq: int
    timestamp_ns: int
    pose: SE3Pose
    rgb: np.ndarray
    depth: Optional[np.ndarray] = None
    points: Optional[np.ndarray] = None
    point_colors: Optional[np.ndarray] = None
    semantic: Optional[np.ndarray] = None

    type_code = FRAME

    @classmethod
    def from_frame(cls, frame):
        return cls(frame.agent_id, frame.seq, frame.timestamp_ns, frame.pose, frame.rgb, frame.depth,
                   frame.points, frame.point_colors, frame.semantic)

    def to_frame(self, intrinsics):
        return DataFrame(self.agent_id, self.seq, self.timestamp_ns, self.pose, intrinsics, self.rgb,
                         self.depth, self.points, self.point_colors, self.semantic)


@dataclass(frozen=True)
class Bye:
    agent_id: int

    type_code = BYE


@dataclass(frozen=True, eq=False)
class Aligned:
    agent_id: int
    transform: Sim3Transform = field(default_factory=Sim3Transform)

    type_code = ALIGNED


def _frame_header(type_code, body):
    return HEADER.pack(MAGIC, type_code, len(body)) + body


def encode_hello(msg):
    p = msg.profile
    intr = p.intrinsics
    flags = (FLAG_METRIC if p.metric else 0) | (FLAG_METRIC_DEPTH if p.metric_depth else 0)
    return _HELLO.pack(msg.agent_id, _PAYLOAD_CODES[p.payload], flags, intr.fx, intr.fy, intr.cx, intr.cy,
                       *msg.distortion, intr.width, intr.height, p.semantic_dim)


def encode_frame(msg):
    flags = PAYLOAD_DEPTH_BIT if msg.depth is not None else PAYLOAD_POINTS_BIT
    if msg.semantic is not None:
        flags |= PAYLOAD_SEMANTIC_BIT
    rgb = np.ascontiguousarray(msg.rgb, dtype=np.uint8)
    height, width = rgb.shape[:2]
    parts = [
        _FRAME_HEAD.pack(msg.agent_id, msg.seq, msg.timestamp_ns, *msg.pose.to_array(), flags),
        _DIMS.pack(width, height), rgb.tobytes(),
    ]
    if msg.depth is not None:
        depth = np.asarray(msg.depth, dtype='<f4')
        parts += [_DIMS.pack(depth.shape[1], depth.shape[0]), depth.tobytes()]
    else:
        points = np.asarray(msg.points, dtype='<f4').reshape(-1, 3)
        colors = np.asarray(msg.point_colors, dtype=np.uint8).reshape(-1, 3)
        parts += [_COUNT.pack(len(points)), points.tobytes(), colors.tobytes()]
    if msg.semantic is not None:
        sem = np.asarray(msg.semantic, dtype='<f4')
        parts += [_SEMANTIC_DIMS.pack(sem.shape[1], sem.shape[0], sem.shape[2]), sem.tobytes()]
    return b''.join(parts)


def encode(msg):
    """Full wire bytes (header and body) of a message."""
    if isinstance(msg, Hello):
        body = encode_hello(msg)
    elif isinstance(msg, FrameMessage):
        body = encode_frame(msg)
    elif isinstance(msg, Bye):
        body = _AGENT.pack(msg.agent_id)
    elif isinstance(msg, Aligned):
        body = _ALIGNED.pack(msg.agent_id, *msg.transform.to_array())
    else:
        raise TypeError(f'cannot encode {type(msg).__name__}')
    return _frame_header(msg.type_code, body)


class _Cursor:
    def __init__(self, body):
        self.body = memoryview(body)
        self.offset = 0

    def unpack(self, st):
        if self.offset + st.size > len(self.body):
            raise MalformedMessage('message body shorter than its fields')
        values = st.unpack_from(self.body, self.offset)
        self.offset += st.size
        return values

    def array(self, dtype, count, shape):
        size = np.dtype(dtype).itemsize * count
        if self.offset + size > len(self.body):
            raise MalformedMessage('message body shorter than its payload block')
        out = np.frombuffer(self.body, dtype=dtype, count=count, offset=self.offset).reshape(shape).copy()
        self.offset += size
        return out

    def done(self):
        if self.offset != len(self.body):
            raise MalformedMessage(f'{len(self.body) - self.offset} unexpected trailing bytes in message body')


def _decode_hello(cur):
    agent_id, kind, flags, fx, fy, cx, cy, k1, k2, width, height, sem_dim = cur.unpack(_HELLO)
    if kind not in _PAYLOAD_NAMES:
        raise MalformedMessage(f'unknown payload kind {kind}')
    try:
        intr = Intrinsics(fx, fy, cx, cy, width, height)
    except ValueError as exc:
        raise MalformedMessage(str(exc)) from exc
    profile = DeviceProfile(intr, _PAYLOAD_NAMES[kind], bool(flags & FLAG_METRIC),
                            bool(flags & FLAG_METRIC_DEPTH), sem_dim)
    return Hello(agent_id, profile, (k1, k2))


def _decode_frame(cur):
    agent_id, seq, timestamp, qw, qx, qy, qz, tx, ty, tz, flags = cur.unpack(_FRAME_HEAD)
    if bool(flags & PAYLOAD_DEPTH_BIT) == bool(flags & PAYLOAD_POINTS_BIT):
        raise MalformedMessage('frame must carry exactly one of depth or points')
    try:
        pose = SE3Pose.from_array((qw, qx, qy, qz, tx, ty, tz))
    except Exception as exc:
        raise MalformedMessage(f'bad pose: {exc}') from exc
    width, height = cur.unpack(_DIMS)
    rgb = cur.array(np.uint8, width * height * 3, (height, width, 3))
    depth = points = colors = semantic = None
    if flags & PAYLOAD_DEPTH_BIT:
        dw, dh = cur.unpack(_DIMS)
        if (dw, dh) != (width, height):
            raise MalformedMessage('depth block size differs from the colour image')
        depth = cur.array('<f4', dw * dh, (dh, dw)).astype(np.float32)
    else:
        (count,) = cur.unpack(_COUNT)
        points = cur.array('<f4', count * 3, (count, 3)).astype(np.float32)
        colors = cur.array(np.uint8, count * 3, (count, 3))
    if flags & PAYLOAD_SEMANTIC_BIT:
        sw, sh, sd = cur.unpack(_SEMANTIC_DIMS)
        semantic = cur.array('<f4', sw * sh * sd, (sh, sw, sd)).astype(np.float32)
    return FrameMessage(agent_id, seq, timestamp, pose, rgb, depth, points, colors, semantic)


def decode_body(type_code, body):
    cur = _Cursor(body)
    if type_code == HELLO:
        msg = _decode_hello(cur)
    elif type_code == FRAME:
        msg = _decode_frame(cur)
    elif type_code == BYE:
        msg = Bye(*cur.unpack(_AGENT))
    elif type_code == ALIGNED:
        agent_id, *values = cur.unpack(_ALIGNED)
        try:
            msg = Aligned(agent_id, Sim3Transform.from_array(values))
        except Exception as exc:
            raise MalformedMessage(f'bad transform: {exc}') from exc
    else:
        raise MalformedMessage(f'unknown message type {type_code}')
    cur.done()
    return msg


def parse_header(data):
    magic, type_code, length = HEADER.unpack(data)
    if magic != MAGIC:
        raise MalformedMessage(f'bad magic {bytes(magic)!r}')
    return type_code, length


def decode(data, offset=0):
    """
    Decode one message from ``data`` starting at ``offset``; returns
    (message, next offset). Raises TruncatedStream when ``data`` ends early.
    """
    if len(data) - offset < HEADER.size:
        raise TruncatedStream('stream ended inside a message header')
    type_code, length = parse_header(data[offset:offset + HEADER.size])
    start = offset + HEADER.size
    if len(data) - start < length:
        raise TruncatedStream(f'stream ended inside a {length}-byte message body')
    return decode_body(type_code, data[start:start + length]), start + length


def iter_messages(data):
    """All complete messages in ``data``; a truncated tail raises TruncatedStream."""
    offset = 0
    while offset < len(data):
        msg, offset = decode(data, offset)
        yield msg


async def read_message(reader, timeout=None):
    """
    Next message from an asyncio stream, or None on a clean end of stream.
    """
    try:
        head = await asyncio.wait_for(reader.readexactly(HEADER.size), timeout)
    except asyncio.IncompleteReadError as exc:
        if not exc.partial:
            return None
        raise TruncatedStream('connection closed inside a message header') from exc
    type_code, length = parse_header(head)
    try:
        body = await asyncio.wait_for(reader.readexactly(length), timeout)
    except asyncio.IncompleteReadError as exc:
        raise TruncatedStream('connection closed inside a message body') from exc
    return decode_body(type_code, body)
