import asyncio
import os
import struct
import tempfile

import numpy as np
from django.test import SimpleTestCase

from fusion.exceptions import FormatError, MalformedMessage, TruncatedStream
from fusion.geometry import Rotation3, SE3Pose, Sim3Transform
from fusion.stream.protocol import (
    HEADER, MAGIC, Aligned, Bye, FrameMessage, Hello, decode, encode, iter_messages, read_message,
)
from fusion.stream.recordings import RecordingPaths, RecordingWriter, read_recording, read_truth, write_truth

from .fixtures import profile


def f32(values):
    return np.asarray(values, dtype=np.float32).astype(np.float64)


def random_frame(rng, agent_id, seq, payload):
    width, height = rng.integers(1, 9, size=2)
    pose = SE3Pose(Rotation3.random(rng), rng.normal(size=3))
    rgb = rng.integers(0, 256, size=(height, width, 3), dtype=np.uint8)
    depth = points = colors = semantic = None
    if payload == 'depth':
        depth = rng.uniform(0.1, 5.0, size=(height, width)).astype(np.float32)
    else:
        count = int(rng.integers(0, 30))
        points = rng.normal(size=(count, 3)).astype(np.float32)
        colors = rng.integers(0, 256, size=(count, 3), dtype=np.uint8)
    if rng.uniform() < 0.5:
        semantic = rng.normal(size=(height, width, 3)).astype(np.float32)
    return FrameMessage(agent_id, seq, int(rng.integers(0, 2 ** 62)), pose, rgb, depth, points, colors, semantic)


class ProtocolTests(SimpleTestCase):

    def assertFramesEqual(self, a, b):
        self.assertEqual((a.agent_id, a.seq, a.timestamp_ns), (b.agent_id, b.seq, b.timestamp_ns))
        np.testing.assert_allclose(a.pose.to_array(), b.pose.to_array(), atol=1e-12)
        for name in ('rgb', 'depth', 'points', 'point_colors', 'semantic'):
            left, right = getattr(a, name), getattr(b, name)
            self.assertEqual(left is None, right is None, name)
            if left is not None:
                np.testing.assert_array_equal(left, right)

    def test_seeded_frames_survive_the_wire(self):
        rng = np.random.default_rng(2024)
        data = b''
        sent = []
        for seq in range(40):
            msg = random_frame(rng, int(rng.integers(0, 2 ** 32)), seq, 'depth' if seq % 3 else 'points')
            sent.append(msg)
            data += encode(msg)
        received = list(iter_messages(data))
        self.assertEqual(len(received), len(sent))
        for a, b in zip(sent, received):
            self.assertFramesEqual(a, b)

    def test_hello_bye_and_aligned(self):
        hello = Hello(7, profile(payload='points', metric=True, semantic_dim=12), (0.25, -0.5))
        decoded, offset = decode(encode(hello))
        self.assertEqual(offset, len(encode(hello)))
        self.assertEqual(decoded.profile.payload, 'points')
        self.assertTrue(decoded.profile.metric)
        self.assertEqual(decoded.profile.semantic_dim, 12)
        self.assertEqual(decoded.distortion, (0.25, -0.5))
        np.testing.assert_array_equal(f32(hello.profile.intrinsics.fx), decoded.profile.intrinsics.fx)

        self.assertEqual(decode(encode(Bye(9)))[0], Bye(9))
        transform = Sim3Transform(1.5, Rotation3.from_rotvec([0.1, 0.2, 0.3]), [1.0, 2.0, 3.0])
        aligned, _ = decode(encode(Aligned(3, transform)))
        np.testing.assert_allclose(aligned.transform.to_array(), transform.to_array(), atol=1e-12)

    def test_bad_magic(self):
        data = bytearray(encode(Bye(1)))
        data[:4] = b'JUNK'
        with self.assertRaises(MalformedMessage):
            decode(bytes(data))

    def test_unknown_type(self):
        with self.assertRaises(MalformedMessage):
            decode(HEADER.pack(MAGIC, 99, 4) + b'\x00' * 4)

    def test_body_length_mismatch(self):
        with self.assertRaises(MalformedMessage):
            decode(HEADER.pack(MAGIC, 3, 6) + struct.pack('<I', 1) + b'\x00\x00')
        with self.assertRaises(MalformedMessage):
            decode(HEADER.pack(MAGIC, 3, 2) + b'\x00\x00')

    def test_frame_with_both_payloads(self):
        body = bytearray(encode(random_frame(np.random.default_rng(1), 1, 0, 'depth'))[HEADER.size:])
        flags_at = struct.calcsize('<IQQ7d')
        body[flags_at] |= 0x2
        with self.assertRaises(MalformedMessage):
            decode(HEADER.pack(MAGIC, 2, len(body)) + bytes(body))

    def test_truncation(self):
        data = encode(Bye(1)) + encode(Bye(2))
        with self.assertRaises(TruncatedStream):
            list(iter_messages(data[:-1]))
        with self.assertRaises(TruncatedStream):
            decode(data[:5])

    def test_async_reader(self):
        async def read_all(data):
            reader = asyncio.StreamReader()
            reader.feed_data(data)
            reader.feed_eof()
            out = []
            while (msg := await read_message(reader)) is not None:
                out.append(msg)
            return out

        self.assertEqual(asyncio.run(read_all(encode(Bye(1)) + encode(Bye(2)))), [Bye(1), Bye(2)])
        with self.assertRaises(TruncatedStream):
            asyncio.run(read_all(encode(Bye(1))[:-1]))


class RecordingTests(SimpleTestCase):

    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.addCleanup(self.tmp.cleanup)
        self.base = os.path.join(self.tmp.name, 'run')

    def test_paths_share_a_base(self):
        paths = RecordingPaths.of(self.base + '.hamr')
        self.assertEqual(paths.stream.name, 'run.hamr')
        self.assertEqual(paths.descriptors.name, 'run.hdsc')
        self.assertEqual(paths.truth.name, 'run.truth.json')

    def test_truncated_recording_keeps_complete_messages(self):
        paths = RecordingPaths.of(self.base)
        with RecordingWriter(paths.stream) as writer:
            writer(Hello(1, profile()))
            writer(Bye(1))
        with open(paths.stream, 'ab') as fh:
            fh.write(encode(Bye(2))[:-2])
        messages, truncated = read_recording(paths.stream)
        self.assertTrue(truncated)
        self.assertEqual(len(messages), 2)
        self.assertEqual(writer.messages, 2)

    def test_truth_document(self):
        path = self.base + '.truth.json'
        write_truth(path, {'transforms': {'2': Sim3Transform(2.0).to_array().tolist()}, 'seed': 1})
        self.assertEqual(read_truth(path)['transforms'][2].scale, 2.0)
        write_truth(path, {'seed': 1})
        self.assertIsNone(read_truth(path)['transforms'])
        with open(path, 'w') as fh:
            fh.write('{not json')
        with self.assertRaises(FormatError):
            read_truth(path)
