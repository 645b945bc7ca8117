"""Agent loop: a policy picks tool calls, the tool server edits the scene, critics close the loop."""

from __future__ import annotations

import hashlib
import json
import logging
import time
import urllib.request
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable

from .placement import format_constraints, parse_constraints, relax_constraints
from .protocol import InProcessClient, ToolCallError
from .scene import Scene
from .scene_io import atomic_write, loads
from .tools import build_server

log = logging.getLogger(__name__)

HEIGHT_SHRINK = 0.8
PHYSICS_RESERVE = 3  # calls kept back so the physics pass always runs


class ReplayMismatch(RuntimeError):
    pass


@dataclass(frozen=True)
class Budget:
    max_iterations: int = 40
    max_retries: int = 3
    max_critic_rounds: int = 4
    max_physics_rounds: int = 3


@dataclass(frozen=True)
class CallTool:
    tool: str
    arguments: dict

    def to_dict(self) -> dict:
        return {"action": "call", "tool": self.tool, "arguments": self.arguments}


@dataclass(frozen=True)
class Terminate:
    reason: str

    def to_dict(self) -> dict:
        return {"action": "terminate", "reason": self.reason}


def decision_from_dict(d: dict):
    if d.get("action") == "terminate":
        return Terminate(d.get("reason", ""))
    return CallTool(d["tool"], d.get("arguments", {}))


@dataclass
class AgentState:
    prompt: str
    seed: int = 0
    room_types: tuple[str, ...] = ()
    room_sizes: tuple = ()
    visual_critic: bool = True
    physics_critic: bool = True
    budget: Budget = field(default_factory=Budget)
    phase: str = "init"
    iteration: int = 0
    stages: list = field(default_factory=list)
    queue: list = field(default_factory=list)
    moves: list = field(default_factory=list)
    removes: list = field(default_factory=list)
    requests: dict = field(default_factory=dict)
    attempts: dict = field(default_factory=dict)
    given_up: list = field(default_factory=list)
    placed: dict = field(default_factory=dict)  # key -> object id
    moved: list = field(default_factory=list)
    critic_rounds: int = 0
    physics_rounds: int = 0
    last_physics: dict = field(default_factory=dict)
    keep: dict | None = None
    fixed_requests: list | None = None


def retry_request(req: dict, failures: int) -> dict:
    """First retry relaxes constraints to on() only; later retries also shrink the asset by 20% each."""
    out = dict(req)
    if failures >= 1:
        out["constraints"] = format_constraints(relax_constraints(parse_constraints(req.get("constraints", ""))))
    if failures >= 2:
        out["height_scale"] = round(HEIGHT_SHRINK ** (failures - 1), 6)
    return out


def _pending(state: AgentState, reqs: list[dict]) -> list[dict]:
    out = []
    for r in reqs:
        if r["key"] in state.given_up or r["key"] in state.placed:
            continue
        state.requests.setdefault(r["key"], r)
        out.append(retry_request(state.requests[r["key"]], state.attempts.get(r["key"], 0)))
    return out


def scripted_policy_step(state: AgentState):
    """Deterministic policy: place, critique, apply feedback, physics pass, stop."""
    if state.phase == "init":
        args = {"prompt": state.prompt, "seed": state.seed, "physics": state.physics_critic}
        if state.room_types:
            args["room_types"] = list(state.room_types)
        if state.room_sizes:
            args["room_sizes"] = [list(s) for s in state.room_sizes]
        if state.keep:
            args["keep"] = state.keep
        return CallTool("scene_init", args)
    if state.iteration >= state.budget.max_iterations:
        return Terminate("BudgetExhausted")
    remaining = state.budget.max_iterations - state.iteration
    if state.physics_critic and remaining <= PHYSICS_RESERVE and state.phase not in ("physics", "physics_apply"):
        state.queue, state.moves, state.removes = [], [], []
        state.phase = "physics"
    if state.phase == "place":
        while not state.queue and state.stages:
            state.queue = _pending(state, state.stages.pop(0))
        if state.queue:
            return CallTool("asset_place", {"requests": state.queue})
        state.phase = "critic"
    if state.phase == "apply":
        if state.removes:
            return CallTool("asset_remove", {"targets": state.removes})
        if state.moves:
            m = state.moves[0]
            return CallTool("asset_move", {"target": m["object_id"], "constraints": m["constraints"]})
        if state.queue:
            return CallTool("asset_place", {"requests": state.queue})
        state.phase = "critic"
    if state.phase == "critic":
        if state.visual_critic and state.critic_rounds < state.budget.max_critic_rounds:
            return CallTool("visual_critic", {})
        state.phase = "physics"
    if state.phase == "physics_apply":
        if state.removes:
            return CallTool("asset_remove", {"targets": state.removes})
        state.phase = "physics"
    if state.phase == "physics":
        if state.physics_critic and state.physics_rounds < state.budget.max_physics_rounds:
            return CallTool("physics_critic", {})
        return Terminate("Satisfied")
    return Terminate("Satisfied")


def _record_placement(state: AgentState, result: dict, retry_now: bool) -> list[dict]:
    retries = []
    for p in result["placed"]:
        state.placed[p["key"]] = p["id"]
    for f in result["failed"]:
        key = f["key"]
        state.attempts[key] = state.attempts.get(key, 0) + 1
        if state.attempts[key] > state.budget.max_retries:
            if key not in state.given_up:
                state.given_up.append(key)
            log.info("giving up on %s (%s)", key, f["reason"])
        elif retry_now and key in state.requests:
            retries.append(retry_request(state.requests[key], state.attempts[key]))
    return retries


def observe(state: AgentState, decision, result: Any = None, error: ToolCallError | None = None) -> None:
    """Fold one tool outcome into the agent state."""
    if not isinstance(decision, CallTool):
        return
    tool = decision.tool
    if tool != "scene_init":
        state.iteration += 1
    if error is not None:
        log.info("tool %s failed: %s", tool, error)
        if tool == "asset_move" and state.moves:
            state.moved.append(state.moves.pop(0)["object_id"])
        elif tool == "asset_remove":
            state.removes = []
        elif tool == "scene_init":
            raise error
        return
    if tool == "scene_init":
        if state.fixed_requests is not None:
            state.stages = [list(state.fixed_requests)]
        else:
            # One batch: the planner places supports before what rests on them, required objects first within a class.
            state.stages = [result["required"] + result["furnishings"]]
        state.phase = "place"
    elif tool == "asset_place":
        retries = _record_placement(state, result, retry_now=state.phase == "place")
        state.queue = retries
        for req in retries:
            state.requests.setdefault(req["key"], req)
    elif tool == "asset_remove":
        gone = set(result["removed"])
        state.placed = {k: v for k, v in state.placed.items() if v not in gone}
        state.removes = []
    elif tool == "asset_move":
        state.moved.append(state.moves.pop(0)["object_id"])
    elif tool == "visual_critic":
        state.critic_rounds += 1
        adds = [a for a in result["add"] if a["key"] not in state.given_up]
        for a in adds:
            a.setdefault("room_id", "")
            if not a["room_id"]:
                a.pop("room_id")
        state.queue = _pending(state, adds)
        state.moves = [m for m in result["move"] if m["object_id"] not in state.moved]
        state.removes = list(result["remove"])
        state.phase = "apply" if (state.queue or state.moves or state.removes) else "physics"
    elif tool == "physics_critic":
        state.physics_rounds += 1
        state.last_physics = result
        if result["offenders"] and state.physics_rounds < state.budget.max_physics_rounds:
            state.removes = list(result["offenders"])
            state.phase = "physics_apply"
        else:
            state.physics_rounds = state.budget.max_physics_rounds


# ---------------------------------------------------------------------------
# Episode log


def digest(obj: Any) -> str:
    return hashlib.sha256(json.dumps(obj, sort_keys=True, separators=(",", ":")).encode("utf-8")).hexdigest()


@dataclass
class EpisodeLog:
    entries: list[dict] = field(default_factory=list)

    def record(self, decision, result=None, error: ToolCallError | None = None) -> None:
        entry = {"step": len(self.entries), "decision": decision.to_dict()}
        if error is not None:
            entry["error"] = {"code": error.code, "message": str(error), "data": error.data}
        elif result is not None:
            entry["digest"] = digest(result)
        self.entries.append(entry)

    def dumps(self) -> str:
        return "".join(json.dumps(e, sort_keys=True) + "\n" for e in self.entries)

    def save(self, path: str | Path) -> None:
        atomic_write(Path(path), self.dumps())

    @classmethod
    def load(cls, path: str | Path) -> "EpisodeLog":
        lines = Path(path).read_text(encoding="utf-8").splitlines()
        return cls([json.loads(x) for x in lines if x.strip()])


@dataclass
class GenerationResult:
    scene: Scene
    scene_text: str
    meshes: dict
    log: EpisodeLog
    reason: str
    iterations: int
    given_up: list
    metrics: dict
    seconds: float


Policy = Callable[[AgentState], Any]


class RemotePolicy:
    """Policy served by an HTTP endpoint: POSTs the observation, expects a decision object back.

    The endpoint receives {"state": {...}} and must answer with either
    {"action": "call", "tool": ..., "arguments": {...}} or {"action": "terminate", "reason": ...}.
    """

    def __init__(self, url: str, timeout: float = 60.0):
        self.url = url
        self.timeout = timeout

    def __call__(self, state: AgentState):
        body = json.dumps({"state": observation(state)}).encode("utf-8")
        req = urllib.request.Request(self.url, body, {"Content-Type": "application/json"})
        with urllib.request.urlopen(req, timeout=self.timeout) as resp:
            return decision_from_dict(json.loads(resp.read()))


def observation(state: AgentState) -> dict:
    return {
        "prompt": state.prompt,
        "phase": state.phase,
        "iteration": state.iteration,
        "placed": dict(state.placed),
        "given_up": list(state.given_up),
        "last_physics": state.last_physics,
    }


def run_generation(
    prompt: str,
    seed: int = 0,
    policy: Policy = scripted_policy_step,
    budget: Budget | None = None,
    client=None,
    visual_critic: bool = True,
    physics_critic: bool = True,
    room_types: tuple[str, ...] = (),
    room_sizes: tuple = (),
    keep: dict | None = None,
    fixed_requests: list | None = None,
) -> GenerationResult:
    """Run the agent loop to termination and return the exported scene."""
    budget = budget or Budget()
    client = client or InProcessClient(build_server())
    state = AgentState(prompt, seed, tuple(room_types), tuple(room_sizes), visual_critic, physics_critic, budget,
                       keep=keep, fixed_requests=fixed_requests)
    episode = EpisodeLog()
    t0 = time.perf_counter()
    while True:
        decision = policy(state)
        if isinstance(decision, Terminate):
            episode.record(decision)
            reason = decision.reason
            break
        try:
            result = client.call(decision.tool, decision.arguments)
            error = None
        except ToolCallError as exc:
            result, error = None, exc
        episode.record(decision, result, error)
        observe(state, decision, result, error)
    exported = client.call("scene_export", {})
    scene = loads(exported["scene"], exported["meshes"])
    metrics = client.call("scene_metrics", {})
    return GenerationResult(scene, exported["scene"], exported["meshes"], episode, reason, state.iteration,
                            list(state.given_up), metrics, time.perf_counter() - t0)


def replay(episode: EpisodeLog | str | Path, client=None, strict: bool = True) -> Scene:
    """Re-issue the logged tool calls on a fresh server and check each result digest."""
    if not isinstance(episode, EpisodeLog):
        episode = EpisodeLog.load(episode)
    client = client or InProcessClient(build_server())
    for e in episode.entries:
        d = e["decision"]
        if d["action"] != "call":
            continue
        try:
            result = client.call(d["tool"], d.get("arguments", {}))
        except ToolCallError as exc:
            if "error" not in e and strict:
                raise ReplayMismatch(f"step {e['step']}: {exc}") from exc
            continue
        if strict and e.get("digest") != digest(result):
            raise ReplayMismatch(f"step {e['step']}: result differs from the log")
    exported = client.call("scene_export", {})
    return loads(exported["scene"], exported["meshes"])
