"""Backing store and memory-side responder.

Stands in for the L2/main-memory side of the system: services cached and
uncached memory commands after a fixed latency and echoes the speculative
bit into every response.  The real system's L2 is a memory-side buffer that
does not participate in coherence, so no hit/miss behavior is modeled.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass

from .messages import MemCmd, MemResp, NetKind, NetMessage
from .network import Network

SUPPORTED_SIZES = (1, 2, 4, 8, 64)


class BackingStore:
    """Sparse block-addressed byte store; unwritten blocks read as zeros."""

    def __init__(self, block_bytes: int = 64):
        self.block_bytes = block_bytes
        self.blocks = {}

    def _block(self, addr: int) -> bytearray:
        blk = addr // self.block_bytes
        if blk not in self.blocks:
            self.blocks[blk] = bytearray(self.block_bytes)
        return self.blocks[blk]

    def read(self, addr: int, size: int) -> bytes:
        assert size in SUPPORTED_SIZES and addr % size == 0
        block = self._block(addr)
        off = addr % self.block_bytes
        return bytes(block[off:off + size])

    def write(self, addr: int, data: bytes):
        assert len(data) in SUPPORTED_SIZES and addr % len(data) == 0
        block = self._block(addr)
        off = addr % self.block_bytes
        block[off:off + len(data)] = data

    def load_image(self, records):
        """Preload from (address, payload bytes) records."""
        for addr, payload in records:
            for i in range(0, len(payload), self.block_bytes):
                chunk = payload[i:i + self.block_bytes]
                block = self._block(addr + i)
                off = (addr + i) % self.block_bytes
                block[off:off + len(chunk)] = chunk

    def snapshot(self):
        return {blk: bytes(data) for blk, data in self.blocks.items()
                if any(data)}


@dataclass
class MemoryConfig:
    latency: int = 20
    block_bytes: int = 64


class MemoryModel:
    """Consumes MemCmd messages and produces MemResp messages in FIFO order."""

    endpoint = "mem"

    def __init__(self, cfg: MemoryConfig = MemoryConfig(),
                 store: BackingStore = None):
        self.cfg = cfg
        self.store = store if store is not None else BackingStore(cfg.block_bytes)
        self.inflight = deque()  # (ready_time, resp_msg_dst, MemResp)

    def handle_mem_cmd(self, cmd: MemCmd) -> MemResp:
        if cmd.write:
            self.store.write(cmd.addr, cmd.data)
            # Header-only acknowledgment.
            return MemResp(addr=cmd.addr, write=True, uncached=cmd.uncached,
                           size=cmd.size, spec=cmd.spec, wp=cmd.wp,
                           lce=cmd.lce, way=cmd.way, state=cmd.state)
        size = cmd.size if cmd.uncached else self.cfg.block_bytes
        addr = cmd.addr if cmd.uncached else (
            cmd.addr - cmd.addr % self.cfg.block_bytes)
        data = self.store.read(addr, size)
        return MemResp(addr=cmd.addr, write=False, uncached=cmd.uncached,
                       size=size, data=data, spec=cmd.spec, wp=cmd.wp,
                       lce=cmd.lce, way=cmd.way, state=cmd.state)

    def tick(self, now: int, net: Network):
        for msg in net.deliver(now, self.endpoint):
            assert msg.net is NetKind.MemCmd
            resp = self.handle_mem_cmd(msg.payload)
            self.inflight.append((now + self.cfg.latency, msg.src, resp))
        while self.inflight and self.inflight[0][0] <= now:
            _, dst, resp = self.inflight.popleft()
            beats = net.beats_of(resp.data)
            net.send(NetMessage(net=NetKind.MemResp, src=self.endpoint,
                                dst=dst, payload=resp, beats=beats), now)

    def next_event(self):
        return self.inflight[0][0] if self.inflight else None
