"""Stream helpers and the structured event log shared by the RIC and the agent."""

from __future__ import annotations

import asyncio
import logging
import time

from .e2proto import E2Message, FrameBuffer, decode, encode


def now_us() -> int:
    return time.time_ns() // 1000


class EventLog:
    """Collects ``ts=.. ris=.. ev=.. seq=.. detail=..`` lines and forwards them to logging."""

    def __init__(self, name: str = "rislab.e2"):
        self.logger = logging.getLogger(name)
        self.lines: list[str] = []

    def emit(self, ris, ev: str, seq=0, detail: str = "", level: int = logging.INFO) -> str:
        detail = detail.replace("\n", " ") or "-"
        line = f"ts={now_us()} ris={ris} ev={ev} seq={seq} detail={detail}"
        self.lines.append(line)
        self.logger.log(level, line)
        return line

    def events(self, ev: str | None = None, ris=None) -> list[dict]:
        out = []
        for line in self.lines:
            head, _, detail = line.partition(" detail=")
            rec = dict(tok.split("=", 1) for tok in head.split())
            rec["detail"] = detail
            if (ev is None or rec["ev"] == ev) and (ris is None or rec["ris"] == str(ris)):
                out.append(rec)
        return out


class MessageStream:
    """Framed message I/O over an asyncio stream pair. Single owner."""

    def __init__(self, reader: asyncio.StreamReader, writer: asyncio.StreamWriter):
        self.reader = reader
        self.writer = writer
        self._frames = FrameBuffer()

    async def send(self, msg: E2Message) -> None:
        self.writer.write(encode(msg))
        await self.writer.drain()

    async def recv(self) -> E2Message | None:
        """Next message, or ``None`` on a clean end of stream."""
        while True:
            msg = self._frames.next_message()
            if msg is not None:
                return msg
            data = await self.reader.read(1 << 16)
            if not data:
                if len(self._frames):
                    decode(bytes(self._frames._buf), eof=True)
                return None
            self._frames.feed(data)

    async def close(self) -> None:
        self.writer.close()
        try:
            await self.writer.wait_closed()
        except (ConnectionError, OSError):
            pass
