"""Drive the scene tools over JSON-RPC, the way an external agent would.

The server runs as a child process speaking newline-delimited JSON-RPC on stdin/stdout.
This script plays the agent by hand: start a scene, place a few things, ask both critics
for feedback, and fix what they report.
"""

import json

from sage_forge.protocol import StdioClient, ToolCallError


def main():
    with StdioClient() as c:
        tools = c.request("tools/list")["tools"]
        print("tools:", ", ".join(t["name"] for t in tools))

        init = c.call("scene_init", {"prompt": "a living room", "seed": 2, "room_sizes": [[4.0, 4.0]]})
        print("room:", init["rooms"][0]["bounds"], "| proposed:", len(init["required"]) + len(init["furnishings"]))

        placed = c.call("asset_place", {"requests": [
            {"key": "sofa", "description": "a grey three-seat sofa", "category": "sofa", "constraints": "edge"},
            {"key": "table", "description": "a low oak coffee table", "category": "coffee table",
             "constraints": "near(sofa, 0.6), facing(sofa)"},
            {"key": "mug", "description": "a white mug", "category": "mug", "constraints": "on(coffee table)"},
        ]})
        print("placed:", [(p["key"], p["parent"]) for p in placed["placed"]], "failed:", placed["failed"])

        fb = c.call("visual_critic")
        print("layout critic wants:", [a["category"] for a in fb["add"]], "| satisfied:", fb["satisfied"])
        added = c.call("asset_place", {"requests": fb["add"]})
        print("added:", [p["category"] for p in added["placed"]], "failed:", [f["key"] for f in added["failed"]])

        # A category phrase names an object only when it is unambiguous.
        for ref in ("pillow", "coffee table"):
            try:
                out = c.call("asset_remove", {"targets": [ref]})
                print(f"remove '{ref}': removed {out['removed']}, re-settled {out['resettled']}")
            except ToolCallError as exc:
                print(f"remove '{ref}': {exc.kind}, candidates {exc.data.get('candidates', [])}")

        report = c.call("physics_critic")
        print("physics critic:", json.dumps({k: report[k] for k in ("num_objects", "collision_ratio",
                                                                     "stability_ratio", "offenders")}))


if __name__ == "__main__":
    main()
