"""Demo 5: the live gateway and an operator session over the wire protocol.

Boots the websocket gateway in accelerated closed-loop mode (one control
tick every 0.1 wall seconds), connects a client, lowers a gantry's maximum
limit, injects an incident, and watches the decisions react. This is the
same protocol the browser console speaks; here the client is scripted.
"""

import json
import tempfile
import time

from starlette.testclient import TestClient

from vslcontrol.corridor import build_i24_westbound
from vslcontrol.gateway import GatewayService, build_app, wire_message
from vslcontrol.guards import GuardConfig
from vslcontrol.policy import load_policy
from vslcontrol.sim import build_testing_scenario


def main():
    corridor = build_i24_westbound()
    policy = load_policy("artifacts/trained_policy.vslw")
    _, sim_config = build_testing_scenario(mainline_vphpl=1500.0, noise_sigma_mph=1.0)

    with tempfile.TemporaryDirectory() as logdir:
        service = GatewayService(corridor, policy, GuardConfig(), "closed_loop", logdir,
                                 sim_config=sim_config, max_ticks=120)
        app = build_app(service, tick_interval_s=0.1)
        client = TestClient(app)
        with client, client.websocket_connect("/ws") as ws:
            snap = ws.receive_json()
            print(f"snapshot: corridor {snap['payload']['corridor']['name']}, "
                  f"mode {snap['payload']['mode']}, tick {snap['payload']['tick']}")

            print("\nlowering G10's maximum to 45 mph...")
            ws.send_text(json.dumps(wire_message(
                "MaxLimitOverride", 1, {"gantry_id": "G10", "max_limit": 45})))

            print("injecting a 30-minute incident at MM 59.0 (capacity 30%)...")
            ws.send_text(json.dumps(wire_message(
                "IncidentCommand", 2,
                {"id": "DEMO", "milepost": 59.0, "duration_s": 1800.0,
                 "capacity_fraction": 0.3})))

            acks = 0
            batches = 0
            deadline = time.time() + 30.0
            while time.time() < deadline and batches < 60:
                msg = ws.receive_json()
                if msg["type"] in ("Ack", "Error"):
                    acks += 1
                    print(f"  {msg['type']}: {msg['payload']}")
                elif msg["type"] == "DecisionBatch":
                    batches += 1
                    if batches % 15 == 0:
                        finals = {d["gantry"]: d["final"]
                                  for d in msg["payload"]["decisions"]}
                        attr = {d["gantry"]: d["attr"] for d in msg["payload"]["decisions"]}
                        print(f"  tick {msg['payload']['tick']:>3}: "
                              f"G10={finals['G10']} ({attr['G10']}), "
                              f"G13={finals['G13']} ({attr['G13']}), "
                              f"G16={finals['G16']} ({attr['G16']})")
            print(f"\nsaw {batches} decision batches, {acks} command responses")
            print("G10 is pinned at or below 45 by the override (attribution MSLC); "
                  "gantries near MM 59 drop as the incident queue forms.")
        service.close()


if __name__ == "__main__":
    main()
