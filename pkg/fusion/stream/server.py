"""
Asyncio front-end of the fusion core.

One acceptor, one reader task per connection, a single optimiser task
that drains the ingestion queue, an alignment task on the correspondence
cadence and a stats task. Numeric work runs in worker threads so a slow
step never stalls the readers.
"""

import asyncio
import logging
import signal

from ..exceptions import FusionError, ProtocolError
from .protocol import Hello, encode, read_message

logger = logging.getLogger(__name__)

IDLE_SLEEP_S = 0.01
INGEST_BATCH = 32


def parse_bind(bind):
    host, _, port = bind.rpartition(':')
    if not host or not port.isdigit():
        raise ValueError(f'bind address must look like host:port, got {bind!r}')
    return host, int(port)


class FusionServer:

    def __init__(self, core, server_config=None, on_report=None, on_session=None):
        self.core = core
        self.config = server_config or core.config.server
        self.on_report = on_report
        self.on_session = on_session
        self._server = None
        self._tasks = []
        self._connections = set()
        self._writers = {}
        self._stopping = asyncio.Event()
        self.address = None

    async def start(self, bind=None):
        """Bind and start accepting; OSError when the address is unavailable."""
        host, port = parse_bind(bind or self.config.bind)
        self._server = await asyncio.start_server(self._handle_connection, host, port)
        self.address = self._server.sockets[0].getsockname()[:2]
        logger.info('fusion server listening on %s:%s', *self.address)
        self._tasks = [
            asyncio.create_task(self._optimizer_loop(), name='optimizer'),
            asyncio.create_task(self._alignment_loop(), name='alignment'),
            asyncio.create_task(self._stats_loop(), name='stats'),
        ]
        return self.address

    def stop(self):
        self._stopping.set()

    def install_signal_handlers(self):
        loop = asyncio.get_running_loop()
        for sig in (signal.SIGINT, signal.SIGTERM):
            try:
                loop.add_signal_handler(sig, self.stop)
            except NotImplementedError:
                logger.debug('signal handlers are not supported on this platform')

    async def run_until_stopped(self):
        await self._stopping.wait()
        await self.close()

    async def serve(self, bind=None):
        await self.start(bind)
        await self.run_until_stopped()

    async def close(self):
        if self._server is not None:
            self._server.close()
            await self._server.wait_closed()
        for task in self._tasks + list(self._connections):
            task.cancel()
        await asyncio.gather(*self._tasks, *self._connections, return_exceptions=True)
        self._tasks = []
        logger.info('fusion server stopped: %s', self.core.stats_line())

    async def _handle_connection(self, reader, writer):
        task = asyncio.current_task()
        self._connections.add(task)
        peer = writer.get_extra_info('peername')
        agents = set()
        try:
            while True:
                try:
                    msg = await read_message(reader, self.config.read_timeout_s)
                except ProtocolError as exc:
                    logger.warning('dropping connection %s: %s', peer, exc)
                    break
                except asyncio.TimeoutError:
                    logger.warning('dropping connection %s: no data for %.1f s', peer, self.config.read_timeout_s)
                    break
                if msg is None:
                    break
                try:
                    result = await self._dispatch(msg)
                except (FusionError, ValueError) as exc:
                    logger.warning('dropping connection %s: unusable %s from agent %s: %s',
                                   peer, type(msg).__name__, msg.agent_id, exc)
                    break
                if isinstance(msg, Hello):
                    agents.add(msg.agent_id)
                    self._writers[msg.agent_id] = writer
                if self.on_session is not None and result is not None and not isinstance(result, bool):
                    await self.on_session(result)
        except (ConnectionError, asyncio.IncompleteReadError) as exc:
            logger.warning('connection %s lost: %s', peer, exc)
        finally:
            for agent_id in agents:
                if self._writers.get(agent_id) is writer:
                    del self._writers[agent_id]
            writer.close()
            self._connections.discard(task)

    async def _dispatch(self, msg):
        # hellos register agents with the mapper, whose lock an optimiser step may hold
        if isinstance(msg, Hello):
            return await asyncio.to_thread(self.core.handle, msg)
        return self.core.handle(msg)

    def _work(self):
        ingested = self.core.drain_ingest(INGEST_BATCH)
        steps = self.core.config.optimizer.steps_per_frame * max(ingested, 1)
        losses = self.core.optimize(steps)
        return ingested, losses

    async def _optimizer_loop(self):
        while not self._stopping.is_set():
            ingested, losses = await asyncio.to_thread(self._work)
            if not ingested and losses is None:
                await asyncio.sleep(IDLE_SLEEP_S)

    async def _alignment_loop(self):
        cadence = self.core.config.correspondence.cadence_s
        while not self._stopping.is_set():
            await asyncio.sleep(cadence)
            job = await asyncio.to_thread(self.core.next_alignment)
            if job is None:
                continue
            await asyncio.to_thread(job.run)
            report = await asyncio.to_thread(self.core.finish_alignment, job)
            if report is None:
                continue
            if self.on_report is not None:
                await self.on_report(report)
            if self.on_session is not None:
                await self.on_session(job.agent)
            await self._send_outbox(report.agent_id)

    async def _send_outbox(self, agent_id):
        writer = self._writers.get(agent_id)
        messages = self.core.take_outbox(agent_id)
        if writer is None or not messages:
            return
        try:
            for msg in messages:
                writer.write(encode(msg))
            await writer.drain()
        except ConnectionError as exc:
            logger.warning('cannot notify agent %s: %s', agent_id, exc)

    async def _stats_loop(self):
        while not self._stopping.is_set():
            await asyncio.sleep(self.config.stats_interval_s)
            self.core.stats_line()
