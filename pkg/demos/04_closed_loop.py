"""Run the controller and one RIS agent over loopback TCP.

The agent reports a fresh channel every period; the controller's xApp
answers with a phase configuration and the agent acknowledges with the
rate it measured on the same channel.
"""

import asyncio

from rislab.agent import run_agent
from rislab.harness import agent_state, parse_config, ric_service
from rislab.transport import EventLog


async def main():
    cfg = parse_config("ris.rows = 16\nris.cols = 16\ne2.period_ms = 50\n")
    events = EventLog("demo")
    ric = ric_service(cfg, events)
    await ric.start()
    state = agent_state(cfg)
    run = await run_agent("127.0.0.1", ric.port, state, periods=8, events=events)
    await ric.stop()

    print(f"{run.indications} indications, {run.controls} controls")
    for rec in ric.records:
        print(f"  seq {rec.seq:2d}  {rec.method:9s} predicted {rec.predicted_rate:.4f}  applied {rec.applied_rate:.4f}")
    print("\nlast log lines:")
    for line in events.lines[-4:]:
        print(" ", line)


if __name__ == "__main__":
    asyncio.run(main())
