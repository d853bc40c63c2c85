"""E2 node: embeds the channel simulator and the live RIS phase state.

Hold rule: the realization drawn for indication ``k`` stays in force until
the next tick, so a control echoing ``k`` is rate-measured on exactly the
channel it was computed from. A control echoing an older ``seq`` is still
applied, measured on the current realization, and flagged as stale.
"""

from __future__ import annotations

import asyncio
import logging
from dataclasses import dataclass, field

import numpy as np

from . import e2proto as e2
from .channel import ChannelRealization, LinkParams, generate_realization, substream
from .optimizer import PowerConfig, achievable_rate
from .ris import PhaseConfig, RisSpec
from .scenario import InfScenario
from .transport import EventLog, MessageStream, now_us

BACKOFF_CAP_S = 30.0


class AgentError(RuntimeError):
    pass


@dataclass
class AgentState:
    scenario: InfScenario
    spec: RisSpec
    link: LinkParams
    power: PowerConfig
    ris_id: int = 1
    seed: int = 0
    report_period_ms: int = 100
    freeze: bool = False
    phase: PhaseConfig | None = None
    realization: ChannelRealization | None = None
    seq: int = 0
    last_stale: bool = False
    applied: list = field(default_factory=list)

    def __post_init__(self):
        if self.phase is None:
            self.phase = PhaseConfig.zeros(self.spec.n_elements, self.spec.phase_bits)

    def rng_for(self, seq: int) -> np.random.Generator:
        return substream(self.seed, seq, f"agent/{self.ris_id}")


def setup_request(state: AgentState) -> e2.SetupRequest:
    spec = state.spec
    return e2.SetupRequest(
        ris_id=state.ris_id,
        rows=spec.rows,
        cols=spec.cols,
        phase_bits=spec.phase_bits,
        element_aperture_m=spec.element_aperture_m,
        panel_width_m=spec.panel_width_m,
        panel_height_m=spec.panel_height_m,
        fc_hz=state.link.fc_hz,
    )


def tick(state: AgentState) -> e2.Indication:
    """Advance ``seq``, redraw the channel (unless frozen) and report it."""
    state.seq += 1
    if not (state.freeze and state.realization is not None):
        state.realization = generate_realization(
            state.scenario, None, state.spec, state.link, state.rng_for(state.seq), seed_tag=(state.seed, state.seq)
        )
    ch = state.realization
    return e2.Indication(
        ris_id=state.ris_id,
        seq=state.seq,
        n=ch.n_elements,
        h_br=ch.h_br,
        h_ru=ch.h_ru,
        h_bu=ch.h_bu,
        los_flag=int(ch.los),
        timestamp_us=now_us(),
    )


def apply_control(state: AgentState, ctl: e2.ControlRequest) -> e2.ControlAck:
    """Validate and apply a phase command; the ack carries the measured rate."""
    spec = state.spec

    def reject(status):
        return e2.ControlAck(ctl.ris_id, ctl.seq_echo, status, 0.0)

    if ctl.ris_id != state.ris_id:
        return reject(e2.ACK_UNKNOWN_RIS)
    if ctl.mode == e2.MODE_BEAM:
        return reject(e2.ACK_UNSUPPORTED_MODE)
    want = e2.MODE_CONTINUOUS if spec.continuous else e2.MODE_DISCRETE
    if ctl.mode != want:
        return reject(e2.ACK_UNSUPPORTED_MODE)
    if ctl.n != spec.n_elements or len(ctl.phases) != spec.n_elements:
        return reject(e2.ACK_BAD_LENGTH)
    try:
        cfg = PhaseConfig(np.asarray(ctl.phases), spec.phase_bits)
    except ValueError:
        return reject(e2.ACK_BAD_LENGTH)
    if state.realization is None:
        return reject(e2.ACK_BAD_LENGTH)
    state.phase = cfg
    state.last_stale = ctl.seq_echo != state.seq
    rate = achievable_rate(state.realization, cfg, spec.amp, state.power)
    state.applied.append((ctl.seq_echo, rate, state.last_stale))
    return e2.ControlAck(state.ris_id, ctl.seq_echo, e2.ACK_OK, rate)


@dataclass
class AgentRun:
    indications: int = 0
    controls: int = 0
    acks: list = field(default_factory=list)
    reconnects: int = 0


async def _connect(host, port, retries, base_delay, events, ris_id, stop):
    attempt = 0
    while True:
        try:
            return await asyncio.open_connection(host, port)
        except OSError as exc:
            if retries is not None and attempt >= retries:
                raise ConnectionError(f"RIC at {host}:{port} unreachable after {attempt + 1} attempts") from exc
            delay = min(base_delay * 2**attempt, BACKOFF_CAP_S)
            events.emit(ris_id, "fault", 0, f"connect failed ({exc}); retry in {delay:g}s", logging.WARNING)
            attempt += 1
            if stop is not None and stop.is_set():
                raise ConnectionError("stopped while reconnecting") from exc
            await asyncio.sleep(delay)


async def run_agent(
    host: str,
    port: int,
    state: AgentState,
    *,
    periods: int | None = None,
    max_retries: int | None = None,
    base_delay: float = 0.5,
    stop: asyncio.Event | None = None,
    events: EventLog | None = None,
    drain_timeout: float = 2.0,
) -> AgentRun:
    """Connect to the RIC and run the report/control loop.

    Runs ``periods`` report periods (forever when ``None``) or until ``stop``
    is set. Connection loss triggers reconnection with exponential backoff
    capped at 30 s; ``state`` carries over.
    """
    events = events or EventLog("rislab.agent")
    run = AgentRun()
    while True:
        reader, writer = await _connect(host, port, max_retries, base_delay, events, state.ris_id, stop)
        stream = MessageStream(reader, writer)
        try:
            done = await _session(stream, state, run, periods, stop, events, drain_timeout)
        except (ConnectionError, asyncio.IncompleteReadError) as exc:
            events.emit(state.ris_id, "fault", state.seq, f"connection lost: {exc}", logging.WARNING)
            done = False
        finally:
            await stream.close()
        if done or (stop is not None and stop.is_set()):
            return run
        run.reconnects += 1
        if max_retries is not None and run.reconnects > max_retries:
            raise ConnectionError("giving up after repeated connection loss")


async def _session(stream, state, run, periods, stop, events, drain_timeout) -> bool:
    ris_id = state.ris_id
    await stream.send(setup_request(state))
    resp = await stream.recv()
    if resp is None:
        raise ConnectionError("RIC closed during setup")
    if not isinstance(resp, e2.SetupResponse) or resp.status != e2.STATUS_OK:
        raise AgentError(f"setup rejected: {resp!r}")
    events.emit(ris_id, "setup", 0, "accepted")
    sub = await stream.recv()
    if sub is None:
        raise ConnectionError("RIC closed before subscribing")
    if not isinstance(sub, e2.SubscriptionRequest) or sub.ris_id != ris_id:
        raise AgentError(f"expected SubscriptionRequest, got {sub!r}")
    if sub.report_period_ms > 0:
        state.report_period_ms = sub.report_period_ms
    await stream.send(e2.SubscriptionResponse(ris_id, e2.STATUS_OK))
    events.emit(ris_id, "sub", 0, f"period_ms={state.report_period_ms}")

    loop = asyncio.get_running_loop()
    period = state.report_period_ms / 1000.0
    boundary = loop.time()
    while periods is None or run.indications < periods:
        if stop is not None and stop.is_set():
            return True
        ind = tick(state)
        await stream.send(ind)
        run.indications += 1
        events.emit(ris_id, "ind", ind.seq, f"los={ind.los_flag}")
        boundary += period
        last = periods is not None and run.indications >= periods
        # the last period waits for its control so the final ack is flushed
        deadline = max(boundary, loop.time() + drain_timeout) if last else boundary
        while True:
            remaining = deadline - loop.time()
            if remaining <= 0:
                break
            try:
                msg = await asyncio.wait_for(stream.recv(), remaining)
            except asyncio.TimeoutError:
                break
            if msg is None:
                raise ConnectionError("RIC closed the connection")
            if not isinstance(msg, e2.ControlRequest):
                events.emit(ris_id, "fault", state.seq, f"unexpected {type(msg).__name__}", logging.WARNING)
                continue
            run.controls += 1
            ack = apply_control(state, msg)
            await stream.send(ack)
            run.acks.append(ack)
            stale = " stale" if (ack.status == e2.ACK_OK and state.last_stale) else ""
            events.emit(ris_id, "ack", ack.seq_echo, f"status={ack.status} applied={ack.applied_rate!r}{stale}")
            if last and msg.seq_echo == state.seq:
                break
    return True
