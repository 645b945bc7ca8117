"""Turn one scene into many: new poses, new assets of the same kind, new rooms around them.

Configuration variants move the task objects to other valid spots. Category variants
swap in a differently described asset of the same category on the same parent. Layout
variants keep the task objects' assets and regenerate everything else. Every variant is
re-checked for collisions and stability before it is kept.
"""

import argparse
import tempfile

from sage_forge.augmentation import augment, write_variants
from sage_forge.orchestrator import run_generation


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--count", type=int, default=3)
    ap.add_argument("--out", default=tempfile.mkdtemp(prefix="sage_forge_aug_"))
    a = ap.parse_args()

    base = run_generation("a bedroom with a mug on the nightstand", 1).scene
    mug = next(o for o in base.objects.values() if o.category == "mug")
    print(f"base scene: {len(base.objects)} objects; mug {mug.id} '{mug.description}' at "
          f"({mug.pose.position[0]:.2f}, {mug.pose.position[1]:.2f})")

    variants = augment(base, count=a.count, seed=7)
    for v in variants:
        if not v.passed:
            print(f"  {v.level:13s} #{v.index}: dropped ({v.reason})")
            continue
        m = v.scene.objects[mug.id]
        room = v.scene.plan.rooms[0]
        x0, y0, x1, y1 = room.bounds
        print(f"  {v.level:13s} #{v.index}: '{m.description}' at ({m.pose.position[0]:.2f}, {m.pose.position[1]:.2f}), "
              f"room {x1 - x0:.1f} x {y1 - y0:.1f} m, {len(v.scene.objects)} objects")
    path = write_variants(variants, a.out, base)
    print(f"\nmanifest: {path}")


if __name__ == "__main__":
    main()
