import asyncio
import math

import numpy as np
import pytest

from rislab import e2proto as e2
from rislab.agent import AgentState, apply_control, run_agent, setup_request, tick
from rislab.channel import LinkParams
from rislab.optimizer import (
    PowerConfig,
    achievable_rate,
    brute_force_optimum,
    build_codebook,
    optimize_quantized,
)
from rislab.ric import (
    DuplicateXapp,
    RicService,
    RicSession,
    SessionFault,
    XappDescriptor,
    XappRegistry,
    builtin_registry,
    config_from_control,
    handle_indication,
    realization_from_indication,
    spec_from_setup,
    xapp_codebook,
    xapp_iterative,
    xapp_monitor,
    xapp_quantized,
)
from rislab.ris import AmplitudeParams, PhaseConfig, RisSpec
from rislab.scenario import InfVariant
from rislab.transport import EventLog, MessageStream

from .conftest import random_channel

POWER = PowerConfig()
CENTER = (75.0, 30.0, 6.0)


def panel(rows=4, cols=4, bits=1):
    return RisSpec.for_frequency(rows, cols, bits, 28e9, CENTER)


def agent(scenario, spec=None, **kw):
    return AgentState(scenario, spec or panel(), LinkParams(), POWER, **kw)


def session_for(spec, ris_id=1):
    return RicSession(ris_id, spec, 100, None, POWER)


def indication(ch, seq=1, ris_id=1):
    return e2.Indication(ris_id, seq, ch.n_elements, ch.h_br, ch.h_ru, ch.h_bu, int(ch.los), 0)


def test_registry_order_and_duplicates():
    reg = XappRegistry()
    reg.register(xapp_quantized())
    assert reg.names() == ["quantized"]
    with pytest.raises(DuplicateXapp):
        reg.register(xapp_quantized())
    assert builtin_registry().names() == ["monitor", "quantized", "iterative"]
    with pytest.raises(KeyError):
        reg.get("nope")


def test_quantized_xapp_output_shape(rng):
    spec = panel(bits=2)
    ch = random_channel(rng, spec.n_elements)
    ctl = handle_indication(session_for(spec), indication(ch), xapp_quantized())
    assert ctl.n == 16 and ctl.mode == e2.MODE_DISCRETE and ctl.seq_echo == 1
    assert all(0 <= v < 4 for v in ctl.phases)
    assert config_from_control(ctl, spec) == optimize_quantized(ch, spec)


def test_monitor_advances_sequence(rng):
    spec = panel()
    sess = session_for(spec)
    for seq in (1, 2, 5):
        assert handle_indication(sess, indication(random_channel(rng, 16), seq), xapp_monitor()) is None
    assert sess.last_seq == 5


def test_stale_indication_dropped(rng):
    spec = panel()
    sess = session_for(spec)
    log = EventLog("test.ric")
    handle_indication(sess, indication(random_channel(rng, 16), 3), xapp_quantized(), log)
    assert handle_indication(sess, indication(random_channel(rng, 16), 3), xapp_quantized(), log) is None
    assert handle_indication(sess, indication(random_channel(rng, 16), 2), xapp_quantized(), log) is None
    assert sess.last_seq == 3
    assert len([e for e in log.events("ind") if "stale" in e["detail"]]) == 2


def test_wrong_length_or_ris_faults(rng):
    spec = panel()
    with pytest.raises(SessionFault):
        handle_indication(session_for(spec), indication(random_channel(rng, 15)), xapp_quantized())
    with pytest.raises(SessionFault):
        handle_indication(session_for(spec), indication(random_channel(rng, 16), ris_id=2), xapp_quantized())


def test_decimation(rng):
    spec = panel()
    app = XappDescriptor("every3", xapp_quantized().handler, decimation=3)
    sess = session_for(spec)
    out = [handle_indication(sess, indication(random_channel(rng, 16), s), app) for s in range(1, 8)]
    assert [c is not None for c in out] == [True, False, False, True, False, False, True]


def test_bad_xapp_control_faults(rng):
    spec = panel()
    bad = XappDescriptor("bad", lambda ind, ctx: e2.ControlRequest(ind.ris_id, ind.seq, 3, 0, [0, 0, 0]))
    with pytest.raises(SessionFault):
        handle_indication(session_for(spec), indication(random_channel(rng, 16)), bad)


def test_quantized_xapp_matches_direct_call(scenario):
    state = agent(scenario)
    ind = tick(state)
    ctl = handle_indication(session_for(state.spec), ind, xapp_quantized())
    assert config_from_control(ctl, state.spec) == optimize_quantized(state.realization, state.spec)


def test_codebook_xapp_picks_an_entry(scenario):
    spec = panel()
    positions = [(60, 20, 1.5), (60, 30, 1.5), (66, 25, 1.5), (66, 35, 1.5), (72, 20, 1.5), (72, 30, 1.5), (72, 40, 1.5)]
    book = build_codebook(spec, scenario, positions, POWER)
    state = agent(scenario, spec)
    app = xapp_codebook(book, POWER)
    for _ in range(10):
        ctl = handle_indication(session_for(spec), tick(state), app)
        assert config_from_control(ctl, spec) in book.configs


def test_codebook_xapp_fingerprint_mismatch_warns(scenario):
    book = build_codebook(panel(bits=2), scenario, [(66, 25, 1.5)], POWER)
    state = agent(scenario)
    log = EventLog("test.ric")
    assert handle_indication(session_for(state.spec), tick(state), xapp_codebook(book), log) is None
    assert any("b (codebook 2 vs ris 1)" in e["detail"] for e in log.events("ind"))


def test_iterative_xapp_single_element(rng):
    spec = RisSpec.for_frequency(1, 1, 1, 28e9, CENTER)
    for _ in range(20):
        ch = random_channel(rng, 1)
        ctl = handle_indication(session_for(spec), indication(ch), xapp_iterative(POWER))
        assert config_from_control(ctl, spec) == brute_force_optimum(ch, spec, POWER)[0]


def test_spec_from_setup_round_trip(scenario):
    spec = panel(8, 8, 2)
    req = setup_request(agent(scenario, spec))
    back = spec_from_setup(req, spec.amp)
    assert back.fingerprint == spec.fingerprint
    assert back.spacing_m == pytest.approx(spec.spacing_m)


def test_setup_request_large_panel(scenario):
    req = setup_request(agent(scenario, panel(80, 80, 1)))
    assert (req.rows, req.cols, req.phase_bits) == (80, 80, 1)
    assert req.fc_hz == 28e9
    assert req.panel_width_m == pytest.approx(80 * 299792458 / 28e9 / 2)


def test_first_tick_and_freeze(scenario):
    state = agent(scenario, freeze=True)
    a, b = tick(state), tick(state)
    assert (a.seq, b.seq) == (1, 2)
    assert (a.h_br, a.h_ru, a.h_bu) == (b.h_br, b.h_ru, b.h_bu)
    live = agent(scenario)
    c, d = tick(live), tick(live)
    assert c.h_bu != d.h_bu


def test_ticks_reproducible_per_seed(scenario):
    a, b = agent(scenario, seed=4), agent(scenario, seed=4)
    for _ in range(3):
        x, y = tick(a), tick(b)
        assert (x.h_br, x.h_bu) == (y.h_br, y.h_bu)


def test_hh_always_los(scenario):
    hh = scenario.__class__(InfVariant.HH, scenario.layout.__class__(75, 50, 10, 0.0, 0.0), scenario.placement)
    state = agent(hh)
    assert all(tick(state).los_flag == 1 for _ in range(50))


def test_apply_control_statuses(scenario):
    state = agent(scenario)
    ind = tick(state)
    before = state.phase
    n = state.spec.n_elements
    cases = [
        (e2.ControlRequest(1, 1, n - 1, 0, [0] * (n - 1)), e2.ACK_BAD_LENGTH),
        (e2.ControlRequest(1, 1, n, 0, [2] + [0] * (n - 1)), e2.ACK_BAD_LENGTH),
        (e2.ControlRequest(1, 1, n, 2), e2.ACK_UNSUPPORTED_MODE),
        (e2.ControlRequest(1, 1, n, 1, [0.0] * n), e2.ACK_UNSUPPORTED_MODE),
        (e2.ControlRequest(9, 1, n, 0, [0] * n), e2.ACK_UNKNOWN_RIS),
    ]
    for ctl, status in cases:
        ack = apply_control(state, ctl)
        assert (ack.status, ack.applied_rate) == (status, 0.0)
        assert state.phase == before
    ctl = handle_indication(session_for(state.spec), ind, xapp_quantized())
    predicted = achievable_rate(realization_from_indication(ind), config_from_control(ctl, state.spec), state.spec.amp, POWER)
    first = apply_control(state, ctl)
    second = apply_control(state, ctl)
    assert first.status == e2.ACK_OK
    assert math.isclose(first.applied_rate, predicted, rel_tol=1e-9)
    assert first == second
    assert state.phase == config_from_control(ctl, state.spec)


def test_stale_control_applied_on_current_channel(scenario):
    state = agent(scenario)
    ind1 = tick(state)
    ctl = handle_indication(session_for(state.spec), ind1, xapp_quantized())
    tick(state)
    ack = apply_control(state, ctl)
    assert ack.status == e2.ACK_OK and state.last_stale
    cfg = config_from_control(ctl, state.spec)
    assert ack.applied_rate == pytest.approx(achievable_rate(state.realization, cfg, state.spec.amp, POWER))


def test_agent_without_ric_never_reports(scenario):
    async def go():
        server = await asyncio.start_server(lambda r, w: None, "127.0.0.1", 0)
        port = server.sockets[0].getsockname()[1]
        server.close()
        await server.wait_closed()
        state = agent(scenario)
        log = EventLog("test.agent")
        with pytest.raises(ConnectionError):
            await run_agent("127.0.0.1", port, state, periods=1, max_retries=2, base_delay=0.01, events=log)
        return state, log

    state, log = asyncio.run(go())
    assert state.seq == 0
    assert len(log.events("fault")) == 2
    assert not log.events("ind")


async def _closed_loop(scenario, xapp="quantized", periods=10, ris_ids=(1,)):
    ric = await RicService(builtin_registry(POWER), default_xapp=xapp, report_period_ms=10).start()
    states = [agent(scenario, ris_id=r, seed=r) for r in ris_ids]
    runs = await asyncio.gather(
        *(run_agent("127.0.0.1", ric.port, s, periods=periods, max_retries=0) for s in states)
    )
    await ric.stop()
    return ric, states, runs


def test_closed_loop_ten_periods(scenario):
    ric, (state,), (run,) = asyncio.run(_closed_loop(scenario))
    assert run.indications == 10 and state.seq == 10
    assert run.controls <= 10 and len(ric.records) == run.controls
    assert all(a.status == e2.ACK_OK for a in run.acks)
    for rec in ric.records:
        assert rec.status == 0
        assert math.isclose(rec.predicted_rate, rec.applied_rate, rel_tol=1e-9)
    assert not ric.events.events("fault")


def test_two_agents_are_isolated(scenario):
    ric, states, runs = asyncio.run(_closed_loop(scenario, periods=5, ris_ids=(1, 2)))
    for r in (1, 2):
        seqs = [rec.seq for rec in ric.records if rec.ris_id == r]
        assert seqs == sorted(seqs) and set(seqs) <= set(range(1, 6)) and len(seqs) >= 4
    assert not ric.events.events("fault")


def test_monitor_policy_sends_no_controls(scenario):
    ric, _, (run,) = asyncio.run(_closed_loop(scenario, xapp="monitor", periods=3))
    assert run.indications == 3 and run.controls == 0 and not ric.records


def test_unsupported_ack_is_not_fatal(scenario):
    state = agent(scenario)

    async def go():
        ric = await RicService(builtin_registry(POWER), default_xapp="quantized").start()
        reader, writer = await asyncio.open_connection("127.0.0.1", ric.port)
        s = MessageStream(reader, writer)
        await s.send(setup_request(state))
        assert (await s.recv()).status == 0
        sub = await s.recv()
        await s.send(e2.SubscriptionResponse(sub.ris_id, 0))
        await s.send(tick(state))
        ctl = await s.recv()
        await s.send(e2.ControlAck(1, ctl.seq_echo, e2.ACK_UNSUPPORTED_MODE, 0.0))
        await s.send(tick(state))
        ctl2 = await s.recv()
        await s.close()
        await ric.stop()
        return ric, ctl, ctl2

    ric, ctl, ctl2 = asyncio.run(go())
    assert (ctl.seq_echo, ctl2.seq_echo) == (1, 2)
    assert [e["detail"] for e in ric.events.events("ack")] == ["status=2"]
    assert ric.records[0].status == 2
    assert not [e for e in ric.events.events("fault") if "lost" not in e["detail"]]


def test_duplicate_ris_rejected_and_malformed_isolated(scenario):
    state = agent(scenario)

    async def go():
        ric = await RicService(builtin_registry(POWER), default_xapp="monitor").start()
        r1, w1 = await asyncio.open_connection("127.0.0.1", ric.port)
        s1 = MessageStream(r1, w1)
        await s1.send(setup_request(state))
        await s1.recv()
        await s1.recv()
        await s1.send(e2.SubscriptionResponse(1, 0))
        r2, w2 = await asyncio.open_connection("127.0.0.1", ric.port)
        s2 = MessageStream(r2, w2)
        await s2.send(setup_request(state))
        dup = await s2.recv()
        r3, w3 = await asyncio.open_connection("127.0.0.1", ric.port)
        w3.write(b"\x00\x00garbage!")
        await w3.drain()
        assert await r3.read() == b""
        await s1.send(tick(state))
        await asyncio.sleep(0.05)
        alive = 1 in ric.sessions
        for s in (s1, s2):
            await s.close()
        w3.close()
        await ric.stop()
        return ric, dup, alive

    ric, dup, alive = asyncio.run(go())
    assert dup.status == e2.STATUS_REJECTED
    assert alive
    assert any("bad magic" in e["detail"] for e in ric.events.events("fault"))


def test_agent_reconnects_with_state(scenario):
    state = agent(scenario)

    async def go():
        ric = await RicService(builtin_registry(POWER), default_xapp="quantized", report_period_ms=10).start()
        port = ric.port
        stop = asyncio.Event()
        task = asyncio.create_task(run_agent("127.0.0.1", port, state, base_delay=0.02, stop=stop))
        while state.seq < 3:
            await asyncio.sleep(0.01)
        await ric.stop()
        seq_at_drop = state.seq
        ric2 = await RicService(builtin_registry(POWER), default_xapp="quantized", report_period_ms=10).start(port=port)
        while not ric2.records:
            await asyncio.sleep(0.01)
        stop.set()
        run = await task
        await ric2.stop()
        return seq_at_drop, ric2, run

    seq_at_drop, ric2, run = asyncio.run(asyncio.wait_for(go(), 20))
    assert run.reconnects >= 1
    assert ric2.records[0].seq > seq_at_drop - 1
