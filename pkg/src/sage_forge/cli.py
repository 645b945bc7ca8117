"""Command-line entry point: one subcommand per pipeline stage."""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

from . import actions, augmentation, physics
from .orchestrator import Budget, EpisodeLog, RemotePolicy, replay, run_generation, scripted_policy_step
from .protocol import PORT_ENV, InProcessClient, ServerConfig, StdioClient, run_server
from .scene import validate_scene
from .scene_io import load, save
from .tools import build_server

REMOTE_ENV = "SAGE_FORGE_REMOTE_URL"

log = logging.getLogger("sage_forge")


class UsageError(Exception):
    pass


def _dump(obj) -> str:
    return json.dumps(obj, indent=1, sort_keys=True) + "\n"


def _room_size(text: str) -> tuple[float, float]:
    try:
        w, d = (float(v) for v in text.lower().split("x"))
    except ValueError:
        raise argparse.ArgumentTypeError(f"room size must look like 4.0x3.5, got {text!r}") from None
    if w <= 0 or d <= 0:
        raise argparse.ArgumentTypeError("room sizes must be positive")
    return w, d


def _at_least(lo: int):
    def parse(text: str) -> int:
        v = int(text)
        if v < lo:
            raise argparse.ArgumentTypeError(f"must be >= {lo}")
        return v

    parse.__name__ = "int"
    return parse


_positive = _at_least(1)


# ---------------------------------------------------------------------------
# Commands


def cmd_generate(a) -> int:
    if a.mode == "remote":
        url = a.remote_url or os.environ.get(REMOTE_ENV)
        if not url:
            raise UsageError(f"--mode remote needs --remote-url or {REMOTE_ENV}")
        policy = RemotePolicy(url)
    else:
        policy = scripted_policy_step
    client = StdioClient() if a.transport == "stdio" else InProcessClient(build_server())
    try:
        res = run_generation(
            a.task, a.seed, policy=policy, budget=Budget(max_iterations=a.max_iterations), client=client,
            visual_critic=not a.no_visual_critic, physics_critic=not a.no_physics_critic,
            room_types=tuple(a.room_type or ()), room_sizes=tuple(a.room_size or ()),
        )
    finally:
        client.close()
    out = Path(a.out)
    save(res.scene, out)
    log_path = Path(a.log) if a.log else out.with_suffix(".log.jsonl")
    res.log.save(log_path)
    m = res.metrics
    summary = {"scene": str(out), "log": str(log_path), "reason": res.reason, "iterations": res.iterations,
               "given_up": res.given_up, "num_objects": m["num_objects"],
               "collision_ratio": m["collision_ratio"], "stability_ratio": m["stability_ratio"]}
    sys.stdout.write(_dump(summary))
    return 0


def cmd_augment(a) -> int:
    base = load(a.scene)
    levels = tuple(x.strip() for x in a.levels.split(",") if x.strip())
    bad = [x for x in levels if x not in augmentation.LEVELS]
    if bad:
        raise UsageError(f"unknown level(s) {', '.join(bad)}; choose from {', '.join(augmentation.LEVELS)}")
    variants = augmentation.augment(base, levels, a.count, a.seed, jobs=a.jobs)
    manifest = augmentation.write_variants(variants, a.out, base)
    passed = sum(v.passed for v in variants)
    sys.stdout.write(_dump({"manifest": str(manifest), "variants": len(variants), "passed": passed}))
    return 0


def cmd_validate(a) -> int:
    scene = load(a.scene)
    issues = [{"kind": v.kind, "subject": v.subject, "detail": v.detail} for v in validate_scene(scene)]
    sys.stdout.write(_dump({"valid": not issues, "violations": issues}))
    return 0 if not issues else 1


def cmd_metrics(a) -> int:
    m = physics.metrics_report(load(a.scene))
    sys.stdout.write(_dump({k: m[k] for k in ("num_objects", "collision_ratio", "stability_ratio")}))
    return 0


def _episodes_for(job):
    path, count, seed = job
    return actions.generate_episodes(load(path), count, seed)


def cmd_gen_actions(a) -> int:
    jobs = [(p, a.count, a.seed + i) for i, p in enumerate(a.scenes)]
    if a.jobs > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=a.jobs) as pool:
            batches = list(pool.map(_episodes_for, jobs))
    else:
        batches = [_episodes_for(j) for j in jobs]
    episodes = [e for b in batches for e in b]
    summary = actions.write_episodes(episodes, a.out)
    sys.stdout.write(_dump({"episodes": str(a.out), **summary}))
    return 0


def cmd_serve(a) -> int:
    config = ServerConfig(a.transport, a.host, a.port, a.log)
    return run_server(build_server(), config)


def cmd_replay(a) -> int:
    scene = replay(EpisodeLog.load(a.log), strict=not a.no_strict)
    if a.out:
        save(scene, a.out)
    sys.stdout.write(_dump({"num_objects": len(scene.objects), "scene": a.out or ""}))
    return 0


# ---------------------------------------------------------------------------
# Parser


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="sage-forge", description="Simulation-ready indoor scene generation, "
                                "augmentation and robot demonstration synthesis.")
    p.add_argument("--config", help="JSON file of option defaults, keyed by option name")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", metavar="COMMAND", required=True)

    g = sub.add_parser("generate", help="generate a scene from a task prompt")
    g.add_argument("--task", required=True, help="task prompt, e.g. 'bedroom with a mug on the nightstand'")
    g.add_argument("--seed", type=int, default=0, help="generation seed (default 0)")
    g.add_argument("--out", required=True, help="scene JSON path; meshes are written next to it")
    g.add_argument("--log", help="episode log path (default: <out>.log.jsonl)")
    g.add_argument("--room-type", action="append", help="room type; repeat for connected multi-room plans")
    g.add_argument("--room-size", action="append", type=_room_size, help="WIDTHxDEPTH in meters, per room")
    g.add_argument("--no-visual-critic", action="store_true", help="skip the layout critique rounds")
    g.add_argument("--no-physics-critic", action="store_true", help="skip settling checks and the physics pass")
    g.add_argument("--max-iterations", type=_at_least(0), default=Budget().max_iterations,
                   help="tool-call budget after scene_init (default %(default)s)")
    g.add_argument("--mode", choices=("scripted", "remote"), default="scripted", help="agent policy")
    g.add_argument("--remote-url", help=f"policy endpoint for --mode remote (or {REMOTE_ENV})")
    g.add_argument("--transport", choices=("inproc", "stdio"), default="inproc",
                   help="reach the tool server in-process or through a child process over stdio")
    g.set_defaults(func=cmd_generate)

    au = sub.add_parser("augment", help="write configuration/category/layout variants of a scene")
    au.add_argument("scene", help="base scene JSON")
    au.add_argument("--out", required=True, help="output directory")
    au.add_argument("--levels", default=",".join(augmentation.LEVELS), help="comma-separated (default %(default)s)")
    au.add_argument("--count", type=_positive, default=5, help="variants per level")
    au.add_argument("--seed", type=int, default=0, help="augmentation seed (default 0)")
    au.add_argument("--jobs", type=_positive, default=1, help="worker processes (default 1)")
    au.set_defaults(func=cmd_augment)

    v = sub.add_parser("validate", help="check scene invariants; exit 1 on any violation")
    v.add_argument("scene", help="scene JSON")
    v.set_defaults(func=cmd_validate)

    m = sub.add_parser("metrics", help="print object count, collision ratio and stability ratio")
    m.add_argument("scene", help="scene JSON")
    m.set_defaults(func=cmd_metrics)

    ga = sub.add_parser("gen-actions", help="synthesize mobile pick-and-place demonstrations")
    ga.add_argument("scenes", nargs="+", help="scene JSON files with task objects")
    ga.add_argument("--out", required=True, help="episodes JSONL path")
    ga.add_argument("--count", type=_positive, default=10, help="episodes per scene")
    ga.add_argument("--seed", type=int, default=0, help="spawn and planner seed (default 0)")
    ga.add_argument("--jobs", type=_positive, default=1, help="worker processes (default 1)")
    ga.set_defaults(func=cmd_gen_actions)

    s = sub.add_parser("serve", help="run the tool server")
    s.add_argument("--transport", choices=("stdio", "tcp"), default="stdio")
    s.add_argument("--host", default="127.0.0.1")
    s.add_argument("--port", type=int, help=f"TCP port (default: ${PORT_ENV} or 8765)")
    s.add_argument("--log", help="write the tool-call log here on exit")
    s.set_defaults(func=cmd_serve)

    r = sub.add_parser("replay", help="re-issue a logged generation and check every result")
    r.add_argument("log", help="episode log written by generate")
    r.add_argument("--out", help="write the replayed scene here")
    r.add_argument("--no-strict", action="store_true", help="do not fail on result mismatches")
    r.set_defaults(func=cmd_replay)
    return p


def _apply_config(parser: argparse.ArgumentParser, argv: list[str]) -> None:
    """Option defaults from --config, applied to the chosen subcommand."""
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("--config")
    known, _ = pre.parse_known_args(argv)
    if not known.config:
        return
    try:
        cfg = json.loads(Path(known.config).read_text(encoding="utf-8"))
    except (OSError, ValueError) as exc:
        raise UsageError(f"cannot read config {known.config}: {exc}") from exc
    if not isinstance(cfg, dict):
        raise UsageError("config must be a JSON object")
    defaults = {k.replace("-", "_"): val for k, val in cfg.items()}
    for action in parser._subparsers._group_actions:
        for subparser in action.choices.values():
            subparser.set_defaults(**defaults)


def run_cli(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        _apply_config(parser, argv)
        a = parser.parse_args(argv)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"sage-forge: error: {exc}", file=sys.stderr)
        return 2
    except SystemExit as exc:  # argparse: --help exits 0, usage errors exit 2
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if a.verbose else logging.WARNING, stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return a.func(a)
    except UsageError as exc:
        print(f"sage-forge: error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001 - every runtime failure maps to exit code 1
        log.debug("command failed", exc_info=True)
        print(f"sage-forge: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


def main() -> None:
    sys.exit(run_cli())
