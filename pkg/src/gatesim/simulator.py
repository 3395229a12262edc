"""Closed-loop rollouts: dynamics + observation + policy + crossing scoring.

A rollout holds the control constant between policy ticks (zero-order hold),
integrates the platform dynamics at its fixed dt, and checks every dynamics
transition for a crossing of the current target gate's plane. Success rate
and mean gate error summarize batches of rollouts.
"""

from __future__ import annotations

import io
import json
import math
from dataclasses import dataclass, field

import numpy as np

from .dynamics import platform_dynamics
from .policies import FullStateObs, MaskObs
from .render import DEFAULT_CAMERA, PinholeCamera, camera_pose, gate_mask
from .tracks import Gate, Track, gate_axes

SUCCESS = "success"
FRAME_COLLISION = "frame_collision"
MISS = "miss"
TIMEOUT = "timeout"
ARENA_EXIT = "arena_exit"

HISTORY_LEN = 4

STATE_COLUMNS = {
    "uav": ["x", "y", "z", "yaw", "pitch"],
    "quad": ["x", "y", "z", "vx", "vy", "vz", "roll", "pitch", "yaw", "p", "q", "r"],
}


@dataclass(frozen=True)
class SimConfig:
    """Loop timing, camera, and scoring knobs; None picks platform defaults."""

    dt: float | None = None
    tick_hz: float = 50.0
    timeout: float | None = None
    camera: PinholeCamera = DEFAULT_CAMERA
    success_threshold: float | None = None
    record_trajectory: bool = True

    def resolve_dt(self, dynamics) -> float:
        return self.dt if self.dt is not None else dynamics.params.dt


@dataclass
class GateRecord:
    index: int
    outcome: str
    crossed: bool = False
    t_cross: float | None = None
    point: np.ndarray | None = None
    error: float | None = None


@dataclass
class Rollout:
    platform: str
    track_name: str
    times: np.ndarray
    states: np.ndarray
    controls: np.ndarray
    gates: list
    terminal: str
    duration: float

    @property
    def success_count(self) -> int:
        return sum(1 for g in self.gates if g.outcome == SUCCESS)

    @property
    def all_success(self) -> bool:
        return all(g.outcome == SUCCESS for g in self.gates)


def signed_gate_distance(gate: Gate, t: float, position: np.ndarray) -> float:
    center, yaw = gate.pose_at(t)
    normal, _, _ = gate_axes(yaw)
    return float(normal @ (position - center))


def detect_crossing(gate: Gate, t0: float, p0: np.ndarray, t1: float, p1: np.ndarray):
    """Negative-to-positive plane transit between two states, or None.

    Returns (t_cross, p_prime, error): the interpolated crossing time, the
    crossing point projected exactly onto the gate plane (evaluated at
    t_cross for moving gates, refined by bisection), and the in-plane
    distance to the gate center. Transits against the normal are ignored.
    """
    d0 = signed_gate_distance(gate, t0, p0)
    d1 = signed_gate_distance(gate, t1, p1)
    if not (d0 < 0.0 <= d1):
        return None
    if gate.moving:
        lo, hi = 0.0, 1.0
        for _ in range(48):
            mid = 0.5 * (lo + hi)
            pm = p0 + mid * (p1 - p0)
            if signed_gate_distance(gate, t0 + mid * (t1 - t0), pm) < 0.0:
                lo = mid
            else:
                hi = mid
        s = 0.5 * (lo + hi)
    else:
        s = d0 / (d0 - d1)
    t_cross = t0 + s * (t1 - t0)
    p = p0 + s * (p1 - p0)
    center, yaw = gate.pose_at(t_cross)
    normal, lateral, up = gate_axes(yaw)
    p_prime = p - (normal @ (p - center)) * normal
    q = p_prime - center
    error = math.hypot(float(q @ lateral), float(q @ up))
    return t_cross, p_prime, error


def classify_crossing(error: float, gate: Gate, vehicle_half_width: float,
                      success_threshold: float | None = None) -> str:
    """Scalar-error taxonomy: clean pass, ring strike, or flew past outside."""
    threshold = (
        success_threshold
        if success_threshold is not None
        else gate.success_threshold(vehicle_half_width)
    )
    if error <= threshold:
        return SUCCESS
    if error <= gate.collision_bound(vehicle_half_width):
        return FRAME_COLLISION
    return MISS


def jittered_initial_pose(track: Track, rng: np.random.Generator,
                          pos_jitter: float = 0.3, yaw_jitter: float = 0.1):
    """The track's start pose with bounded position/yaw perturbation."""
    pos, yaw = track.initial_pose()
    pos = pos + rng.uniform(-pos_jitter, pos_jitter, size=3)
    pos = np.clip(pos, track.arena.lo + 0.2, track.arena.hi - 0.2)
    return pos, yaw + rng.uniform(-yaw_jitter, yaw_jitter)


def _observe(policy, dynamics, track, t, state, target, camera, history):
    if policy.observes == "mask":
        pitch = float(state[4]) if dynamics.platform == "uav" else 0.0
        pose = camera_pose(dynamics.position(state), dynamics.yaw(state), pitch)
        mask = gate_mask(list(track.gates), camera, pose, t=t)
        return MaskObs(mask, history.copy())
    return FullStateObs(t, state.copy(), track.gates, target)


def rollout(
    policy,
    track: Track,
    config: SimConfig | None = None,
    rng: np.random.Generator | None = None,
    init_state: np.ndarray | None = None,
) -> Rollout:
    """Run one episode; terminal on last-gate success, ring strike, arena
    exit, or timeout. A miss advances the target gate without terminating."""
    if policy.platform not in ("any", track.platform):
        raise ValueError(
            f"policy for {policy.platform!r} cannot fly a {track.platform!r} track"
        )
    config = config or SimConfig()
    dynamics = platform_dynamics(track.platform)
    dt = config.resolve_dt(dynamics)
    tick_period = 1.0 / config.tick_hz
    steps_per_tick = max(1, round(tick_period / dt))
    if abs(steps_per_tick * dt - tick_period) > 1e-9:
        raise ValueError(f"tick rate {config.tick_hz} Hz is not a multiple of dt {dt}")
    timeout = config.timeout if config.timeout is not None else track.timeout()

    policy.reset(rng if rng is not None else np.random.default_rng(0))
    if init_state is None:
        pos, yaw = track.initial_pose()
        state = dynamics.initial_state(pos, yaw)
    else:
        state = np.asarray(init_state, dtype=np.float64).copy()

    n_gates = len(track.gates)
    records = [GateRecord(i, outcome=TIMEOUT) for i in range(n_gates)]
    history = np.zeros((HISTORY_LEN, dynamics.control_dim))
    times = [0.0]
    states = [state.copy()]
    controls = []
    t = 0.0
    target = 0
    terminal = None

    while terminal is None:
        obs = _observe(policy, dynamics, track, t, state, target, config.camera, history)
        control = np.asarray(policy.evaluate(obs), dtype=np.float64)
        history = np.roll(history, -1, axis=0)
        history[-1] = control

        for _ in range(steps_per_tick):
            new_state = dynamics.step(state, control, dt)
            t_new = t + dt
            p0 = dynamics.position(state).copy()
            p1 = dynamics.position(new_state).copy()

            # the same transition can cross several coincident gate planes
            while target < n_gates:
                hit = detect_crossing(track.gates[target], t, p0, t_new, p1)
                if hit is None:
                    break
                t_cross, p_prime, error = hit
                outcome = classify_crossing(
                    error, track.gates[target], track.vehicle_half_width,
                    config.success_threshold,
                )
                records[target] = GateRecord(target, outcome, True, t_cross, p_prime, error)
                if outcome == FRAME_COLLISION:
                    terminal = FRAME_COLLISION
                    break
                target += 1
                if target == n_gates and outcome == SUCCESS:
                    terminal = SUCCESS

            state = new_state
            t = t_new
            if config.record_trajectory:
                times.append(t)
                states.append(state.copy())
                controls.append(control.copy())
            if terminal is None and not track.arena.contains(dynamics.position(state)):
                terminal = ARENA_EXIT
            if terminal is not None:
                break
        if terminal is None and t >= timeout - 1e-12:
            terminal = TIMEOUT

    for rec in records:
        if not rec.crossed:
            rec.outcome = terminal if terminal in (ARENA_EXIT, TIMEOUT) else TIMEOUT
    return Rollout(
        platform=track.platform,
        track_name=track.name,
        times=np.asarray(times),
        states=np.asarray(states),
        controls=np.asarray(controls) if controls else np.zeros((0, dynamics.control_dim)),
        gates=records,
        terminal=terminal,
        duration=t,
    )


def metrics(rollouts) -> dict:
    """SR over all gates; MGE over successful crossings only (None if SR=0)."""
    rollouts = list(rollouts)
    if not rollouts:
        raise ValueError("metrics needs at least one rollout")
    total = sum(len(r.gates) for r in rollouts)
    errors = [g.error for r in rollouts for g in r.gates if g.outcome == SUCCESS]
    sr = len(errors) / total
    mge = float(np.mean(errors)) if errors else None
    return {"sr": sr, "mge": mge, "gates": total, "successes": len(errors)}


# ---------------------------------------------------------------------------
# Deterministic text outputs
# ---------------------------------------------------------------------------


def trajectory_csv(roll: Rollout) -> str:
    cols = STATE_COLUMNS[roll.platform]
    n_u = roll.controls.shape[1] if len(roll.controls) else 0
    out = io.StringIO()
    out.write(",".join(["t"] + cols + [f"u{i}" for i in range(n_u)]) + "\n")
    for i, t in enumerate(roll.times):
        row = [repr(float(t))] + [repr(float(v)) for v in roll.states[i]]
        if i > 0 and len(roll.controls):
            row += [repr(float(v)) for v in roll.controls[i - 1]]
        elif n_u:
            row += [""] * n_u
        out.write(",".join(row) + "\n")
    return out.getvalue()


def events_csv(rollouts) -> str:
    out = io.StringIO()
    out.write("rollout,gate_idx,outcome,t_cross,error\n")
    for ri, roll in enumerate(rollouts):
        for g in roll.gates:
            t_c = repr(float(g.t_cross)) if g.t_cross is not None else ""
            err = repr(float(g.error)) if g.error is not None else ""
            out.write(f"{ri},{g.index},{g.outcome},{t_c},{err}\n")
    return out.getvalue()


def summary_json(rollouts, extra: dict | None = None) -> str:
    m = metrics(rollouts)
    payload = dict(m)
    payload["terminals"] = sorted(r.terminal for r in rollouts)
    if extra:
        payload.update(extra)
    return json.dumps(payload, indent=2, sort_keys=True)
