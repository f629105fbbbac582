"""Social-force trajectories for speakers walking around a microphone array.

Each speaker is a unit mass driven toward a random goal and repelled by the
four walls (exponential potentials), the array (elliptical potential) and the
other speakers (elliptical potential oriented by the relative velocity).
The ODE is integrated with semi-implicit Euler steps and resampled onto the
STFT frame grid.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass

import numpy as np


class MotionError(RuntimeError):
    pass


@dataclass(frozen=True)
class SfmParams:
    tau: float = 1.0
    B_wall: float = 0.2
    eps_wall: float = 0.5
    eps_array: float = 0.5
    B_array: float = 0.2
    A_social: float = 2.1
    B_social: float = 0.3
    dt_aniso: float = 2.0
    goal_radius: float = 0.5
    goal_min_distance: float = 1.0
    goal_max_turn_deg: float = 90.0
    speed_mean: float = 1.34
    speed_std: float = 0.26
    euler_step: float = 0.01
    max_speed_factor: float = 1.3

    def __post_init__(self):
        for name, value in asdict(self).items():
            if name == "speed_std":
                if value < 0:
                    raise MotionError("speed_std must be non-negative")
            elif not value > 0:
                raise MotionError(f"{name} must be positive, got {value}")


@dataclass(frozen=True)
class RoomSpec:
    width: float
    length: float
    array_center: np.ndarray

    def __post_init__(self):
        c = np.asarray(self.array_center, float).reshape(2)
        object.__setattr__(self, "array_center", c)
        if self.width <= 0 or self.length <= 0:
            raise MotionError("room dimensions must be positive")
        if not (0 < c[0] < self.width and 0 < c[1] < self.length):
            raise MotionError("array center must be inside the room")

    @property
    def walls(self) -> list[tuple[np.ndarray, np.ndarray]]:
        w, l = self.width, self.length
        corners = [np.array(p, float) for p in ((0, 0), (w, 0), (w, l), (0, l))]
        return [(corners[i], corners[(i + 1) % 4]) for i in range(4)]

    def contains(self, r) -> bool:
        return 0.0 < r[0] < self.width and 0.0 < r[1] < self.length

    def wall_distance(self, r) -> float:
        return float(min(r[0], self.width - r[0], r[1], self.length - r[1]))


def sample_room(rng: np.random.Generator, size_range=(4.0, 8.0), center_fraction: float = 0.2) -> RoomSpec:
    """Room of random width/length with the array inside the central box.

    The central box spans ``center_fraction`` of each room dimension.
    """
    w, l = rng.uniform(*size_range, size=2)
    half = 0.5 * center_fraction
    cx = w * rng.uniform(0.5 - half, 0.5 + half)
    cy = l * rng.uniform(0.5 - half, 0.5 + half)
    return RoomSpec(float(w), float(l), np.array([cx, cy]))


@dataclass
class SpeakerState:
    r: np.ndarray
    v: np.ndarray
    goal: np.ndarray
    desired_speed: float

    def copy(self) -> "SpeakerState":
        return SpeakerState(self.r.copy(), self.v.copy(), self.goal.copy(), self.desired_speed)


def driving_force(state: SpeakerState, params: SfmParams) -> np.ndarray:
    e = state.goal - state.r
    dist = np.linalg.norm(e)
    if dist == 0:
        raise MotionError("goal coincides with position")
    v_des = e / dist * state.desired_speed
    return (v_des - state.v) / params.tau


def wall_amplitude(desired_speed: float, params: SfmParams) -> float:
    # kinetic energy of a head-on approach equals the potential at eps_wall
    return 0.5 * desired_speed ** 2 * math.exp(params.eps_wall / params.B_wall)


def array_amplitude(desired_speed: float, params: SfmParams) -> float:
    return 0.5 * desired_speed ** 2 * math.exp(2 * params.eps_array / params.B_array)


def _closest_on_segment(r, a, b):
    ab = b - a
    t = np.clip(np.dot(r - a, ab) / np.dot(ab, ab), 0.0, 1.0)
    return a + t * ab


def wall_potential(state: SpeakerState, room: RoomSpec, params: SfmParams) -> float:
    amp = wall_amplitude(state.desired_speed, params)
    return float(sum(amp * math.exp(-np.linalg.norm(state.r - _closest_on_segment(state.r, a, b)) / params.B_wall)
                     for a, b in room.walls))


def wall_force(state: SpeakerState, room: RoomSpec, params: SfmParams) -> np.ndarray:
    if not room.contains(state.r):
        raise MotionError(f"speaker left the room at {state.r}")
    amp = wall_amplitude(state.desired_speed, params)
    f = np.zeros(2)
    for a, b in room.walls:
        d = state.r - _closest_on_segment(state.r, a, b)
        dist = np.linalg.norm(d)
        f += amp * math.exp(-dist / params.B_wall) / params.B_wall * d / dist
    return f


def semi_minor_2b(d: np.ndarray, v_rel: np.ndarray, dt_aniso: float) -> float:
    """Twice the semi-minor axis of the elliptical equipotential through ``d``."""
    n1 = np.linalg.norm(d)
    n2 = np.linalg.norm(d + dt_aniso * v_rel)
    arg = (n1 + n2) ** 2 - (dt_aniso * np.linalg.norm(v_rel)) ** 2
    if arg <= 0.0:
        return 2.0 * n1
    return math.sqrt(arg)


def elliptical_potential(r_self, v_rel, center, A: float, B: float, dt_aniso: float) -> float:
    d = np.asarray(r_self, float) - np.asarray(center, float)
    return A * math.exp(-semi_minor_2b(d, np.asarray(v_rel, float), dt_aniso) / B)


def elliptical_force(r_self, v_rel, center, A: float, B: float, dt_aniso: float) -> np.ndarray:
    """Negative gradient of ``A exp(-2b / B)`` with respect to ``r_self``."""
    d = np.asarray(r_self, float) - np.asarray(center, float)
    v_rel = np.asarray(v_rel, float)
    n1 = np.linalg.norm(d)
    if n1 == 0:
        raise MotionError("position coincides with the potential center")
    e = d + dt_aniso * v_rel
    n2 = np.linalg.norm(e)
    arg = (n1 + n2) ** 2 - (dt_aniso * np.linalg.norm(v_rel)) ** 2
    if arg <= 0.0 or n2 == 0.0:
        s = 2.0 * n1
        grad_s = 2.0 * d / n1
    else:
        s = math.sqrt(arg)
        grad_s = (n1 + n2) * (d / n1 + e / n2) / s
    return A / B * math.exp(-s / B) * grad_s


def total_force(i: int, states: list[SpeakerState], room: RoomSpec, params: SfmParams) -> np.ndarray:
    s = states[i]
    f = driving_force(s, params) + wall_force(s, room, params)
    f += elliptical_force(s.r, s.v, room.array_center,
                          array_amplitude(s.desired_speed, params), params.B_array, params.dt_aniso)
    for j, other in enumerate(states):
        if j != i:
            f += elliptical_force(s.r, s.v - other.v, other.r, params.A_social, params.B_social, params.dt_aniso)
    return f


def _goal_ok(g, r, v, room: RoomSpec, params: SfmParams, min_distance: float, max_turn: float) -> bool:
    if room.wall_distance(g) < params.eps_wall:
        return False
    if np.linalg.norm(g - room.array_center) < params.eps_array:
        return False
    e = g - r
    dist = np.linalg.norm(e)
    if dist < min_distance:
        return False
    speed = np.linalg.norm(v)
    if speed > 0 and max_turn < math.pi:
        return float(np.dot(e, v) / (dist * speed)) >= math.cos(max_turn)
    return True


def sample_goal(rng: np.random.Generator, r, room: RoomSpec, params: SfmParams,
                v=None, max_tries: int = 200) -> np.ndarray:
    """Uniform goal inside the clearance margins.

    Candidates closer than ``goal_min_distance`` or requiring a heading change
    above ``goal_max_turn_deg`` are rejected; both limits are relaxed after
    every ``max_tries`` rejections so that small rooms still yield a goal.
    """
    v = np.zeros(2) if v is None else v
    min_distance = params.goal_min_distance
    max_turn = math.radians(params.goal_max_turn_deg)
    for _ in range(8):
        for _ in range(max_tries):
            g = rng.uniform([0, 0], [room.width, room.length])
            if _goal_ok(g, r, v, room, params, min_distance, max_turn):
                return g
        min_distance *= 0.5
        max_turn = min(math.pi, max_turn + math.radians(30))
    raise MotionError("could not sample a goal")


def step(states: list[SpeakerState], room: RoomSpec, params: SfmParams,
         rng: np.random.Generator | None = None) -> list[SpeakerState]:
    """One semi-implicit Euler step for all speakers."""
    h = params.euler_step
    forces = [total_force(i, states, room, params) for i in range(len(states))]
    out = []
    for s, f in zip(states, forces):
        if not np.all(np.isfinite(f)):
            raise MotionError(f"non-finite force {f} at r={s.r}, v={s.v}")
        v = s.v + h * f
        v_max = params.max_speed_factor * s.desired_speed
        speed = np.linalg.norm(v)
        if speed > v_max:
            v *= v_max / speed
        r = s.r + h * v
        goal = s.goal
        if rng is not None and np.linalg.norm(goal - r) < params.goal_radius:
            goal = sample_goal(rng, r, room, params, v)
        out.append(SpeakerState(r, v, goal, s.desired_speed))
    return out


def azimuth_of(points, center) -> np.ndarray:
    d = np.asarray(points, float) - np.asarray(center, float)
    return np.mod(np.arctan2(d[..., 1], d[..., 0]), 2 * np.pi)


def angle_diff(a, b):
    """Signed difference ``a - b`` wrapped to ``[-pi, pi)``."""
    return np.mod(np.asarray(a) - np.asarray(b) + np.pi, 2 * np.pi) - np.pi


@dataclass
class Trajectory:
    speaker_id: int
    times: np.ndarray  # (T,) seconds
    positions: np.ndarray  # (T, 2)
    velocities: np.ndarray  # (T, 2)
    array_center: np.ndarray

    def __len__(self) -> int:
        return len(self.times)

    @property
    def azimuth(self) -> np.ndarray:
        return azimuth_of(self.positions, self.array_center)

    @property
    def distance(self) -> np.ndarray:
        return np.linalg.norm(self.positions - self.array_center, axis=1)

    def position_at(self, t) -> np.ndarray:
        t = np.asarray(t, float)
        return np.stack([np.interp(t, self.times, self.positions[:, k]) for k in range(2)], axis=-1)

    def truncated(self, n: int) -> "Trajectory":
        return Trajectory(self.speaker_id, self.times[:n], self.positions[:n], self.velocities[:n], self.array_center)

    def rotated(self, angle: float) -> "Trajectory":
        c, s = math.cos(angle), math.sin(angle)
        rot = np.array([[c, -s], [s, c]])
        pos = (self.positions - self.array_center) @ rot.T + self.array_center
        return Trajectory(self.speaker_id, self.times, pos, self.velocities @ rot.T, self.array_center)


def stationary_trajectory(position, array_center, times, speaker_id: int = 0) -> Trajectory:
    times = np.asarray(times, float)
    pos = np.tile(np.asarray(position, float), (len(times), 1))
    return Trajectory(speaker_id, times, pos, np.zeros_like(pos), np.asarray(array_center, float))


def _initial_positions(rng, room: RoomSpec, n: int, params: SfmParams, min_sep_deg: float,
                       max_tries: int) -> list[np.ndarray] | None:
    margin_wall = params.eps_wall
    for _ in range(max_tries):
        pts = []
        for _ in range(n):
            for _ in range(200):
                p = rng.uniform([margin_wall, margin_wall], [room.width - margin_wall, room.length - margin_wall])
                if np.linalg.norm(p - room.array_center) >= params.eps_array:
                    pts.append(p)
                    break
        if len(pts) < n:
            continue
        az = azimuth_of(np.array(pts), room.array_center)
        ok = all(abs(angle_diff(az[i], az[j])) >= math.radians(min_sep_deg)
                 for i in range(n) for j in range(i + 1, n))
        if ok:
            return pts
    return None


def generate_trajectory(room: RoomSpec, n_speakers: int, duration: float, frame_hop: float,
                        params: SfmParams | None = None, seed=0, time_offset: float = 0.0,
                        min_separation_deg: float = 15.0, max_tries: int = 200) -> list[Trajectory]:
    """Simulate ``n_speakers`` and sample them at ``time_offset + k * frame_hop``.

    Returns ``ceil(duration / frame_hop)`` samples per speaker. Raises
    :class:`MotionError` when the initial separation cannot be met; callers
    then draw a new room.
    """
    if n_speakers < 1:
        raise MotionError("n_speakers must be >= 1")
    params = params or SfmParams()
    rng = np.random.default_rng(seed)
    n_frames = int(math.ceil(duration / frame_hop - 1e-9))
    frame_times = time_offset + frame_hop * np.arange(n_frames)

    starts = _initial_positions(rng, room, n_speakers, params, min_separation_deg, max_tries)
    if starts is None:
        raise MotionError("initial azimuth separation not satisfiable in this room")
    states = []
    for p in starts:
        speed = max(0.0, rng.normal(params.speed_mean, params.speed_std))
        states.append(SpeakerState(p, np.zeros(2), sample_goal(rng, p, room, params), speed))

    h = params.euler_step
    n_steps = int(math.ceil(frame_times[-1] / h)) + 1
    sim_t = h * np.arange(n_steps + 1)
    pos = np.empty((n_steps + 1, n_speakers, 2))
    vel = np.empty_like(pos)
    pos[0] = [s.r for s in states]
    vel[0] = [s.v for s in states]
    for k in range(n_steps):
        states = step(states, room, params, rng)
        pos[k + 1] = [s.r for s in states]
        vel[k + 1] = [s.v for s in states]

    out = []
    for i in range(n_speakers):
        p = np.stack([np.interp(frame_times, sim_t, pos[:, i, c]) for c in range(2)], axis=1)
        v = np.stack([np.interp(frame_times, sim_t, vel[:, i, c]) for c in range(2)], axis=1)
        out.append(Trajectory(i, frame_times.copy(), p, v, room.array_center.copy()))
    return out


def export_csv(trajectories: list[Trajectory], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["frame_index", "speaker_id", "x", "y", "azimuth_rad", "distance_m"])
        for tr in trajectories:
            az, dist = tr.azimuth, tr.distance
            for k in range(len(tr)):
                w.writerow([k, tr.speaker_id, repr(float(tr.positions[k, 0])), repr(float(tr.positions[k, 1])),
                            repr(float(az[k])), repr(float(dist[k]))])


def load_csv(path, times=None, array_center=None) -> list[Trajectory]:
    rows: dict[int, list] = {}
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            rows.setdefault(int(row["speaker_id"]), []).append((int(row["frame_index"]), float(row["x"]), float(row["y"])))
    out = []
    for sid in sorted(rows):
        r = sorted(rows[sid])
        pos = np.array([[x, y] for _, x, y in r])
        t = np.arange(len(r), dtype=float) if times is None else np.asarray(times, float)
        vel = np.gradient(pos, t, axis=0) if len(r) > 1 else np.zeros_like(pos)
        out.append(Trajectory(sid, t, pos, vel, np.zeros(2) if array_center is None else np.asarray(array_center, float)))
    return out


def export_jsonl(trajectories: list[Trajectory], path, meta: dict) -> None:
    with open(path, "w") as fh:
        fh.write(json.dumps({"type": "scene", **meta}) + "\n")
        for tr in trajectories:
            fh.write(json.dumps({
                "type": "trajectory",
                "speaker_id": tr.speaker_id,
                "times": tr.times.tolist(),
                "x": tr.positions[:, 0].tolist(),
                "y": tr.positions[:, 1].tolist(),
                "azimuth_rad": tr.azimuth.tolist(),
            }) + "\n")


def params_dict(params: SfmParams) -> dict:
    return asdict(params)
