"""Near-real-time controller: sessions, xApp registry and dispatch.

xApps run in-process. A handler receives the indication and an
:class:`XappContext` (session spec, powers and an xApp-local ``state``
dict) and returns a :class:`ControlRequest` or ``None``.
"""

from __future__ import annotations

import asyncio
import logging
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import e2proto as e2
from .channel import ChannelRealization
from .optimizer import (
    Codebook,
    FingerprintMismatch,
    PowerConfig,
    achievable_rate,
    optimize_iterative,
    optimize_quantized,
    select_codebook_entry,
)
from .ris import AmplitudeParams, PhaseConfig, RisSpec
from .transport import EventLog, MessageStream

log = logging.getLogger(__name__)


class DuplicateXapp(ValueError):
    pass


class SessionFault(RuntimeError):
    pass


@dataclass
class XappContext:
    ris_id: int
    spec: RisSpec
    power: PowerConfig
    state: dict = field(default_factory=dict)
    warnings: list[str] = field(default_factory=list)

    def warn(self, text: str) -> None:
        self.warnings.append(text)


Handler = Callable[[e2.Indication, XappContext], "e2.ControlRequest | None"]


@dataclass(frozen=True)
class XappDescriptor:
    name: str
    handler: Handler
    required_spec: tuple | None = None
    decimation: int = 1


class XappRegistry:
    def __init__(self, descriptors=()):
        self._apps: dict[str, XappDescriptor] = {}
        for d in descriptors:
            self.register(d)

    def register(self, descriptor: XappDescriptor) -> "XappRegistry":
        if descriptor.name in self._apps:
            raise DuplicateXapp(f"xApp {descriptor.name!r} already registered")
        self._apps[descriptor.name] = descriptor
        return self

    def get(self, name: str) -> XappDescriptor:
        try:
            return self._apps[name]
        except KeyError:
            raise KeyError(f"no xApp named {name!r}; registered: {self.names()}") from None

    def names(self) -> list[str]:
        return list(self._apps)

    def __contains__(self, name) -> bool:
        return name in self._apps


def register_xapp(registry: XappRegistry, descriptor: XappDescriptor) -> XappRegistry:
    return registry.register(descriptor)


def realization_from_indication(ind: e2.Indication) -> ChannelRealization:
    h_br, h_ru, h_bu = ind.channels()
    return ChannelRealization(h_br, h_ru, h_bu, los=bool(ind.los_flag), seed_tag=("seq", ind.seq))


def control_from_config(ind: e2.Indication, cfg: PhaseConfig) -> e2.ControlRequest:
    mode = e2.MODE_DISCRETE if cfg.bits else e2.MODE_CONTINUOUS
    return e2.ControlRequest(ind.ris_id, ind.seq, len(cfg), mode, cfg.values)


def config_from_control(ctl: e2.ControlRequest, spec: RisSpec) -> PhaseConfig:
    return PhaseConfig(np.asarray(ctl.phases), 0 if ctl.mode == e2.MODE_CONTINUOUS else spec.phase_bits)


def xapp_monitor(name: str = "monitor") -> XappDescriptor:
    """Observe-only xApp; never emits a control."""
    return XappDescriptor(name, lambda ind, ctx: None)


def xapp_quantized(name: str = "quantized") -> XappDescriptor:
    def handler(ind, ctx):
        cfg = optimize_quantized(realization_from_indication(ind), ctx.spec)
        return control_from_config(ind, cfg)

    return XappDescriptor(name, handler)


def xapp_iterative(power: PowerConfig | None = None, name: str = "iterative") -> XappDescriptor:
    def handler(ind, ctx):
        if ctx.spec.continuous:
            ctx.warn("iterative xApp needs a discrete RIS; no control")
            return None
        cfg = optimize_iterative(realization_from_indication(ind), ctx.spec, power or ctx.power)
        return control_from_config(ind, cfg)

    return XappDescriptor(name, handler)


def xapp_codebook(codebook: Codebook, power: PowerConfig | None = None, name: str = "codebook") -> XappDescriptor:
    def handler(ind, ctx):
        try:
            j, cfg, _ = select_codebook_entry(realization_from_indication(ind), codebook, ctx.spec, power or ctx.power)
        except FingerprintMismatch as exc:
            ctx.warn(str(exc))
            return None
        ctx.state["last_entry"] = j
        return control_from_config(ind, cfg)

    return XappDescriptor(name, handler, required_spec=codebook.fingerprint)


def builtin_registry(power: PowerConfig | None = None, codebook: Codebook | None = None) -> XappRegistry:
    reg = XappRegistry([xapp_monitor(), xapp_quantized(), xapp_iterative(power)])
    if codebook is not None:
        reg.register(xapp_codebook(codebook, power))
    return reg


def spec_from_setup(req: e2.SetupRequest, amp: AmplitudeParams) -> RisSpec:
    if req.rows < 1 or req.cols < 1:
        raise SessionFault(f"panel {req.rows} x {req.cols} has no elements")
    spacing = req.panel_width_m / req.cols if req.panel_width_m > 0 else req.element_aperture_m
    if not (spacing > 0 and math.isfinite(spacing)):
        spacing = 1.0
    return RisSpec(
        rows=req.rows,
        cols=req.cols,
        phase_bits=req.phase_bits,
        spacing_m=spacing,
        center=(0.0, 0.0, 0.0),
        element_aperture_m=req.element_aperture_m,
        amp=amp,
    )


@dataclass
class RicSession:
    ris_id: int
    spec: RisSpec
    period_ms: int
    xapp: str | None
    power: PowerConfig = field(default_factory=PowerConfig)
    last_seq: int = 0
    xapp_state: dict = field(default_factory=dict)
    seen: int = 0
    faulted: bool = False
    pending: dict = field(default_factory=dict)


@dataclass
class ControlRecord:
    ris_id: int
    seq: int
    method: str
    predicted_rate: float
    applied_rate: float | None = None
    status: int | None = None


def _check_control(ctl: e2.ControlRequest, session: RicSession, ind: e2.Indication) -> None:
    spec = session.spec
    if ctl.seq_echo != ind.seq:
        raise SessionFault(f"xApp echoed seq {ctl.seq_echo} for indication {ind.seq}")
    if ctl.n != spec.n_elements or len(ctl.phases) != spec.n_elements:
        raise SessionFault(f"xApp control has N={ctl.n}, session has {spec.n_elements}")
    want = e2.MODE_CONTINUOUS if spec.continuous else e2.MODE_DISCRETE
    if ctl.mode != want:
        raise SessionFault(f"xApp control mode {ctl.mode} does not match session mode {want}")
    config_from_control(ctl, spec)  # raises on invalid phases


def handle_indication(
    session: RicSession, ind: e2.Indication, xapp: XappDescriptor | None, events: EventLog | None = None
) -> e2.ControlRequest | None:
    """Dispatch one indication to the session's xApp.

    Stale sequence numbers are dropped with a warning. A wrong RIS id or
    vector length faults the session.
    """
    if ind.ris_id != session.ris_id:
        session.faulted = True
        raise SessionFault(f"indication for RIS {ind.ris_id} on session {session.ris_id}")
    if ind.seq <= session.last_seq:
        if events:
            events.emit(session.ris_id, "ind", ind.seq, f"stale seq dropped (last {session.last_seq})", logging.WARNING)
        return None
    n = session.spec.n_elements
    if ind.n != n or len(ind.h_br) != n or len(ind.h_ru) != n:
        session.faulted = True
        raise SessionFault(f"indication carries N={ind.n}, session expects {n}")
    session.last_seq = ind.seq
    session.seen += 1
    if xapp is None or (session.seen - 1) % max(1, xapp.decimation):
        return None
    ctx = XappContext(session.ris_id, session.spec, session.power, session.xapp_state)
    ctl = xapp.handler(ind, ctx)
    for w in ctx.warnings:
        if events:
            events.emit(session.ris_id, "ind", ind.seq, f"xapp {xapp.name}: {w}", logging.WARNING)
    if ctl is None:
        return None
    _check_control(ctl, session, ind)
    return ctl


class RicService:
    """Accepts agent connections and runs one serial session per connection."""

    def __init__(
        self,
        registry: XappRegistry,
        policy: dict | None = None,
        *,
        default_xapp: str | None = None,
        power: PowerConfig | None = None,
        amp: AmplitudeParams | None = None,
        report_period_ms: int = 100,
        events: EventLog | None = None,
        drain_timeout: float = 2.0,
    ):
        self.registry = registry
        self.policy = dict(policy or {})
        self.default_xapp = default_xapp
        self.power = power or PowerConfig()
        self.amp = amp or AmplitudeParams()
        self.report_period_ms = report_period_ms
        self.events = events or EventLog("rislab.ric")
        self.drain_timeout = drain_timeout
        self.sessions: dict[int, RicSession] = {}
        self.records: list[ControlRecord] = []
        self._server: asyncio.base_events.Server | None = None
        self._stopping = asyncio.Event()
        self._conns: set[asyncio.Task] = set()

    @property
    def port(self) -> int:
        return self._server.sockets[0].getsockname()[1]

    async def start(self, host: str = "127.0.0.1", port: int = 0) -> "RicService":
        self._server = await asyncio.start_server(self._on_connect, host, port)
        return self

    def set_policy(self, ris_id: int, xapp_name: str) -> None:
        self.registry.get(xapp_name)
        self.policy[ris_id] = xapp_name
        if ris_id in self.sessions:
            self.sessions[ris_id].xapp = xapp_name

    async def stop(self) -> None:
        """Stop accepting, let sessions finish in-flight control exchanges, close."""
        self._stopping.set()
        if self._server is not None:
            self._server.close()
            await self._server.wait_closed()
        if self._conns:
            await asyncio.wait(self._conns, timeout=self.drain_timeout + 1.0)
        for t in self._conns:
            t.cancel()

    async def serve_until(self, stop: asyncio.Event) -> None:
        await stop.wait()
        await self.stop()

    async def _on_connect(self, reader, writer) -> None:
        task = asyncio.current_task()
        self._conns.add(task)
        stream = MessageStream(reader, writer)
        ris_id = None
        try:
            ris_id = await self._session(stream)
        except (e2.MalformedFrame, SessionFault) as exc:
            self.events.emit(ris_id if ris_id is not None else "-", "fault", 0, str(exc), logging.ERROR)
        except (ConnectionError, asyncio.IncompleteReadError) as exc:
            self.events.emit(ris_id if ris_id is not None else "-", "fault", 0, f"connection lost: {exc}", logging.WARNING)
        finally:
            await stream.close()
            self._conns.discard(task)

    async def _recv(self, stream: MessageStream, session: RicSession | None):
        """Next message; ``None`` on EOF or once stopping with nothing in flight."""
        read = asyncio.ensure_future(stream.recv())
        stop = asyncio.ensure_future(self._stopping.wait())
        try:
            done, _ = await asyncio.wait({read, stop}, return_when=asyncio.FIRST_COMPLETED)
            if read in done:
                return read.result()
            if session is None or not session.pending:
                read.cancel()
                return None
            try:
                return await asyncio.wait_for(read, self.drain_timeout)
            except asyncio.TimeoutError:
                return None
        finally:
            stop.cancel()

    async def _session(self, stream: MessageStream) -> int | None:
        msg = await self._recv(stream, None)
        if msg is None:
            return None
        if not isinstance(msg, e2.SetupRequest):
            raise SessionFault(f"expected SetupRequest, got {type(msg).__name__}")
        ris_id = msg.ris_id
        if ris_id in self.sessions:
            await stream.send(e2.SetupResponse(ris_id, e2.STATUS_REJECTED))
            self.events.emit(ris_id, "setup", 0, "rejected: RIS already has a session", logging.WARNING)
            return ris_id
        try:
            spec = spec_from_setup(msg, self.amp)
        except (SessionFault, ValueError) as exc:
            await stream.send(e2.SetupResponse(ris_id, e2.STATUS_REJECTED))
            self.events.emit(ris_id, "setup", 0, f"rejected: {exc}", logging.WARNING)
            return ris_id
        session = RicSession(
            ris_id=ris_id,
            spec=spec,
            period_ms=self.report_period_ms,
            xapp=self.policy.get(ris_id, self.default_xapp),
            power=self.power,
        )
        self.sessions[ris_id] = session
        try:
            await stream.send(e2.SetupResponse(ris_id, e2.STATUS_OK))
            self.events.emit(ris_id, "setup", 0, f"N={spec.n_elements} b={spec.phase_bits} xapp={session.xapp}")
            await stream.send(e2.SubscriptionRequest(ris_id, session.period_ms))
            resp = await self._recv(stream, session)
            if not isinstance(resp, e2.SubscriptionResponse) or resp.status != e2.STATUS_OK:
                raise SessionFault(f"subscription not accepted: {resp!r}")
            self.events.emit(ris_id, "sub", 0, f"period_ms={session.period_ms}")
            await self._loop(stream, session)
        finally:
            del self.sessions[ris_id]
        return ris_id

    async def _loop(self, stream: MessageStream, session: RicSession) -> None:
        ris_id = session.ris_id
        while True:
            msg = await self._recv(stream, session)
            if msg is None:
                return
            if isinstance(msg, e2.Indication):
                self.events.emit(ris_id, "ind", msg.seq, f"N={msg.n} los={msg.los_flag}")
                xapp = self.registry.get(session.xapp) if session.xapp else None
                ctl = handle_indication(session, msg, xapp, self.events)
                if ctl is None:
                    continue
                cfg = config_from_control(ctl, session.spec)
                predicted = achievable_rate(realization_from_indication(msg), cfg, session.spec.amp, session.power)
                rec = ControlRecord(ris_id, ctl.seq_echo, xapp.name, predicted)
                self.records.append(rec)
                session.pending[ctl.seq_echo] = rec
                await stream.send(ctl)
                self.events.emit(ris_id, "ctl", ctl.seq_echo, f"xapp={xapp.name} mode={ctl.mode} predicted={predicted!r}")
            elif isinstance(msg, e2.ControlAck):
                rec = session.pending.pop(msg.seq_echo, None)
                if rec is not None:
                    rec.status = msg.status
                    rec.applied_rate = msg.applied_rate
                if msg.status == e2.ACK_OK:
                    self.events.emit(ris_id, "ack", msg.seq_echo, f"status=0 applied={msg.applied_rate!r}")
                else:
                    self.events.emit(ris_id, "ack", msg.seq_echo, f"status={msg.status}", logging.WARNING)
            else:
                raise SessionFault(f"unexpected {type(msg).__name__} in steady state")


async def serve(
    host: str,
    port: int,
    registry: XappRegistry,
    policy: dict | None = None,
    **kwargs,
) -> RicService:
    """Bind and start a :class:`RicService`; returns the running handle."""
    return await RicService(registry, policy, **kwargs).start(host, port)
