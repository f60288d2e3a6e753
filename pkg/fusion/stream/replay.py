"""
Replay of a recorded stream into a running server.
"""

import asyncio
import logging

from ..exceptions import ProtocolError
from .protocol import Aligned, FrameMessage, encode, read_message
from .recordings import read_recording
from .server import parse_bind

logger = logging.getLogger(__name__)


async def _listen(reader):
    """Log what the server sends back until it closes."""
    while True:
        try:
            msg = await read_message(reader)
        except (ProtocolError, ConnectionError) as exc:
            logger.debug('stopped listening to the server: %s', exc)
            return
        if msg is None:
            return
        if isinstance(msg, Aligned):
            logger.info('server aligned agent %s (scale %.4f)', msg.agent_id, msg.transform.scale)


async def replay(path, speed=1.0, target='127.0.0.1:7878'):
    """
    Send the messages of a recording to ``target`` keeping their frame
    timing divided by ``speed`` (0 sends as fast as possible). Returns the
    number of frames sent; a truncated file is replayed up to its last
    complete message.
    """
    if speed < 0:
        raise ValueError('speed must be non-negative')
    messages, truncated = read_recording(path)
    if truncated:
        logger.warning('%s is truncated, replaying %d complete messages', path, len(messages))
    if not messages:
        return 0
    host, port = parse_bind(target)
    reader, writer = await asyncio.open_connection(host, port)
    listener = asyncio.create_task(_listen(reader))
    loop = asyncio.get_running_loop()
    started = loop.time()
    first_ts = None
    sent = 0
    try:
        for msg in messages:
            if isinstance(msg, FrameMessage):
                first_ts = msg.timestamp_ns if first_ts is None else first_ts
                if speed > 0:
                    due = started + (msg.timestamp_ns - first_ts) / 1e9 / speed
                    delay = due - loop.time()
                    if delay > 0:
                        await asyncio.sleep(delay)
                sent += 1
            writer.write(encode(msg))
            await writer.drain()
    finally:
        writer.close()
        try:
            await writer.wait_closed()
        except ConnectionError:
            pass
        listener.cancel()
        await asyncio.gather(listener, return_exceptions=True)
    logger.info('replayed %d frames from %s', sent, path)
    return sent
