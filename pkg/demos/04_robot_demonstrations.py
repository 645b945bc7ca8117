"""From a scene to robot training data: navigate, pick, navigate, place.

The robot base plans over an occupancy grid (furniture inflated by the base radius) with
RRT-Connect; the arm is a free-flying gripper limited to a reach radius around the base.
Each episode is replayed and rejected if the gripper or the held object touches anything
or if the object does not come to rest near its target.
"""

import argparse
import tempfile
from pathlib import Path

from sage_forge.actions import generate_episodes, rasterize_occupancy, write_episodes
from sage_forge.orchestrator import run_generation

PROMPT = "navigate to a table with a coke can, pick it up, move to another desk, and place the can on it"


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--episodes", type=int, default=5)
    ap.add_argument("--out", default=tempfile.mkdtemp(prefix="sage_forge_actions_"))
    a = ap.parse_args()

    scene = run_generation(PROMPT, 1, room_sizes=[(4.5, 4.5)]).scene
    grid = rasterize_occupancy(scene)
    print(f"scene: {len(scene.objects)} objects; grid {grid.shape[1]} x {grid.shape[0]} cells, "
          f"{(~grid.cells).sum()} free")
    for row in grid.cells[::-2]:
        print("   " + "".join("#" if c else "." for c in row[::2]))

    episodes = generate_episodes(scene, a.episodes, seed=0)
    for e in episodes:
        d = e.demo
        steps = sum(len(s.waypoints) for s in d.stages)
        print(f"  spawn ({e.spawn[0]:.2f}, {e.spawn[1]:.2f}): "
              + (f"ok, {steps} waypoints" if d.success else f"rejected ({d.failure_reason})"))
    summary = write_episodes(episodes, Path(a.out) / "episodes.jsonl")
    print(f"\n{summary['passed']}/{summary['episodes']} passed; written to {a.out}/episodes.jsonl")


if __name__ == "__main__":
    main()
