"""Closed-loop load against the gateway's signed trapdoor endpoint: success rate vs concurrency."""

import argparse
import asyncio
import json
import sys

import httpx
import numpy as np

from pcbe.gateway import GatewayConfig, Signer, create_app, measure_load
from pcbe.secure_match import build_trapdoor, gen_key


def main() -> int:
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--levels", default="10,50,100,200,500,1000")
    p.add_argument("--requests", type=int, default=3, help="requests per client")
    p.add_argument("--max-inflight", type=int, default=256)
    p.add_argument("-n", type=int, default=100, help="dictionary size")
    args = p.parse_args()
    secrets = {"target": b"t" * 20}
    app = create_app(GatewayConfig(n=args.n, secrets=secrets, max_inflight=args.max_inflight))
    signer = Signer("target", secrets["target"])
    headers, _ = signer.sign("POST", "/v1/session", json.dumps({"k": 5}).encode())

    async def open_session():
        async with httpx.AsyncClient(transport=httpx.ASGITransport(app=app), base_url="http://gw") as c:
            r = await c.post("/v1/session", headers=headers, content=json.dumps({"k": 5}).encode())
            return r.json()["session_id"]

    sid = asyncio.run(open_session())
    body = build_trapdoor(np.ones(args.n), gen_key(args.n, seed=0)).to_bytes()
    path = f"/v1/session/{sid}/trapdoor"

    def make(w, i):
        h, _ = signer.sign("POST", path, body)
        return "POST", path, h, {}, body

    print("concurrency,success_rate")
    for level in (int(x) for x in args.levels.split(",")):
        print(f"{level},{asyncio.run(measure_load(app, level, args.requests, make)):.4f}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
