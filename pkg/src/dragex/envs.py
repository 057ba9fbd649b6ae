"""Deterministic pixel-rendered control environments.

Continuous 2-d point mazes (6x6 world units, axis-aligned segment walls) and
a 3-d point-reach task whose start position is penned in by four wall slabs.
Dynamics are pure functions of (spec, state, action); rendering is a bit-exact
function of (spec, state).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from PIL import Image


class EnvError(ValueError):
    """Raised for invalid environment specs or queries."""


# ---------------------------------------------------------------------------
# Specs


@dataclass(frozen=True)
class MazeSpec:
    """Continuous 2-d point maze with zero-thickness axis-aligned walls.

    Walls are (x1, y1, x2, y2) segments. The action is a per-axis position
    delta clipped to [-a_max, a_max]; collisions resolve by axis-separable
    sliding. Success radius and horizon follow the maze benchmark defaults.
    """

    name: str
    size: float = 6.0
    walls: tuple = ()
    start: tuple = (0.35, 0.35)
    a_max: float = 0.25
    success_radius: float = 0.15
    horizon: int = 50

    def __post_init__(self):
        for x1, y1, x2, y2 in self.walls:
            if x1 != x2 and y1 != y2:
                raise EnvError(f"wall ({x1},{y1})-({x2},{y2}) is not axis-aligned")
            for v in (x1, y1, x2, y2):
                if not (0.0 <= v <= self.size):
                    raise EnvError("wall endpoint outside the world rectangle")
        if not self._inside_free_space(np.asarray(self.start)):
            raise EnvError("start position lies on a wall")

    def _inside_free_space(self, p) -> bool:
        if not (0.0 <= p[0] <= self.size and 0.0 <= p[1] <= self.size):
            return False
        for x1, y1, x2, y2 in self.walls:
            if x1 == x2 and min(y1, y2) <= p[1] <= max(y1, y2) and abs(p[0] - x1) < 1e-12:
                return False
            if y1 == y2 and min(x1, x2) <= p[0] <= max(x1, x2) and abs(p[1] - y1) < 1e-12:
                return False
        return True

    @property
    def dim(self) -> int:
        return 2


@dataclass(frozen=True)
class ReachSpec:
    """3-d point reach inside a box workspace with four wall slabs penning the
    start; the only way out is over the slab tops."""

    name: str = "reach-hard-walls"
    low: tuple = (-0.5, 0.1, 0.0)
    high: tuple = (0.5, 0.9, 0.6)
    # slabs as (center xyz, half-size xyz); geometry mirrors the four-brick pen
    walls: tuple = (
        ((0.15, 0.55, 0.2), (0.005, 0.24, 0.2)),
        ((-0.15, 0.55, 0.2), (0.005, 0.24, 0.2)),
        ((0.0, 0.65, 0.2), (0.4, 0.005, 0.2)),
        ((0.0, 0.35, 0.2), (0.4, 0.005, 0.2)),
    )
    start: tuple = (0.0, 0.5, 0.05)
    a_max: float = 0.05
    success_radius: float = 0.1
    horizon: int = 300

    @property
    def dim(self) -> int:
        return 3

    def _inside_free_space(self, p) -> bool:
        lo, hi = np.asarray(self.low), np.asarray(self.high)
        if np.any(p < lo) or np.any(p > hi):
            return False
        for center, half in self.walls:
            if np.all(np.abs(p - np.asarray(center)) <= np.asarray(half)):
                return False
        return True


# ---------------------------------------------------------------------------
# Dynamics


def _axis_move_blocked_2d(spec: MazeSpec, pos, axis: int, target: float) -> bool:
    """Does moving pos along `axis` to `target` cross a wall orthogonal to it?"""
    lo, hi = min(pos[axis], target), max(pos[axis], target)
    other = 1 - axis
    for x1, y1, x2, y2 in spec.walls:
        if axis == 0 and x1 == x2:  # x-move vs vertical wall
            if min(y1, y2) <= pos[other] <= max(y1, y2) and lo <= x1 <= hi:
                return True
        elif axis == 1 and y1 == y2:  # y-move vs horizontal wall
            if min(x1, x2) <= pos[other] <= max(x1, x2) and lo <= y1 <= hi:
                return True
    return False


def _axis_move_blocked_3d(spec: ReachSpec, pos, axis: int, target: float) -> bool:
    lo, hi = min(pos[axis], target), max(pos[axis], target)
    for center, half in spec.walls:
        c, h = np.asarray(center), np.asarray(half)
        ok = True
        for j in range(3):
            if j == axis:
                if hi < c[j] - h[j] or lo > c[j] + h[j]:
                    ok = False
            else:
                if not (c[j] - h[j] <= pos[j] <= c[j] + h[j]):
                    ok = False
        if ok:
            return True
    return False


def step(spec, state, action) -> np.ndarray:
    """Apply a clipped position delta with axis-separable sliding.

    Each axis component is applied independently (clamped to the workspace)
    and reverted if it would cross a wall, so pushing into a wall slides
    along it and the agent can never end up inside one.
    """
    state = np.asarray(state, dtype=np.float64)
    action = np.clip(np.asarray(action, dtype=np.float64), -spec.a_max, spec.a_max)
    if state.shape != (spec.dim,) or action.shape != (spec.dim,):
        raise EnvError(f"state/action must have shape ({spec.dim},)")
    pos = state.copy()
    if spec.dim == 2:
        lo = np.zeros(2)
        hi = np.full(2, spec.size)
        blocked = _axis_move_blocked_2d
    else:
        lo, hi = np.asarray(spec.low), np.asarray(spec.high)
        blocked = _axis_move_blocked_3d
    for axis in range(spec.dim):
        target = float(np.clip(pos[axis] + action[axis], lo[axis], hi[axis]))
        if not blocked(spec, pos, axis, target):
            pos[axis] = target
    return pos


def is_success(state, goal_state, delta: float) -> bool:
    """Strict L2 success test in true state space (evaluation-side only)."""
    state = np.asarray(state, dtype=np.float64)
    goal_state = np.asarray(goal_state, dtype=np.float64)
    if state.shape != goal_state.shape:
        raise EnvError("state and goal dimensionality differ")
    return bool(np.linalg.norm(state - goal_state) < delta)


# ---------------------------------------------------------------------------
# Rendering

_BACKGROUND = 205
_WALL = 45
_DISC_BASE = 255
_DISC_SHADE = 33  # red falls off linearly to 222 at the rim, still > background
_DISC_GB = 40
_WALL_HALF_THICKNESS = 0.06  # visual only; collisions use the centerline
_DISC_RADIUS_2D = 0.30  # world units
_DISC_RADIUS_3D = 0.045


def _pixel_centers(resolution: int, lo: float, hi: float) -> np.ndarray:
    px = (hi - lo) / resolution
    return lo + (np.arange(resolution) + 0.5) * px


def _paint_disc(img: np.ndarray, u: float, v: float, radius_px: float,
                us: np.ndarray, vs: np.ndarray) -> None:
    du = us[None, :] - u
    dv = vs[:, None] - v
    dist = np.sqrt(du * du + dv * dv)
    mask = dist <= radius_px
    if not mask.any():
        return
    red = _DISC_BASE - np.round(_DISC_SHADE * np.minimum(dist / radius_px, 1.0)).astype(np.int64)
    img[..., 0][mask] = red[mask].astype(np.uint8)
    img[..., 1][mask] = _DISC_GB
    img[..., 2][mask] = _DISC_GB


def _render_maze(spec: MazeSpec, state, resolution: int) -> np.ndarray:
    img = np.full((resolution, resolution, 3), _BACKGROUND, dtype=np.uint8)
    px = spec.size / resolution
    xs = _pixel_centers(resolution, 0.0, spec.size)
    ys = xs  # square world
    # walls: dark band of fixed world-unit half-thickness around the segment
    for x1, y1, x2, y2 in spec.walls:
        xlo, xhi = min(x1, x2) - _WALL_HALF_THICKNESS, max(x1, x2) + _WALL_HALF_THICKNESS
        ylo, yhi = min(y1, y2) - _WALL_HALF_THICKNESS, max(y1, y2) + _WALL_HALF_THICKNESS
        mx = (xs >= xlo) & (xs <= xhi)
        my = (ys >= ylo) & (ys <= yhi)
        img[np.ix_(my, mx)] = _WALL
    # boundary frame, one pixel
    img[0, :] = _WALL
    img[-1, :] = _WALL
    img[:, 0] = _WALL
    img[:, -1] = _WALL
    _paint_disc(img, state[0] / px - 0.5, state[1] / px - 0.5,
                _DISC_RADIUS_2D / px,
                np.arange(resolution, dtype=np.float64),
                np.arange(resolution, dtype=np.float64))
    return img


# oblique projection for the 3-d task: u = x, v = y + shear * z
_REACH_SHEAR = 0.55


def _render_reach(spec: ReachSpec, state, resolution: int) -> np.ndarray:
    img = np.full((resolution, resolution, 3), _BACKGROUND, dtype=np.uint8)
    lo, hi = np.asarray(spec.low), np.asarray(spec.high)
    ulo, uhi = lo[0], hi[0]
    vlo, vhi = lo[1] + _REACH_SHEAR * lo[2], hi[1] + _REACH_SHEAR * hi[2]
    span_u, span_v = uhi - ulo, vhi - vlo
    us = _pixel_centers(resolution, ulo, uhi)
    vs = _pixel_centers(resolution, vlo, vhi)
    for center, half in spec.walls:
        c, h = np.asarray(center), np.asarray(half)
        h_draw = np.maximum(h, 0.012)  # thin slabs stay visible
        wu = (us >= c[0] - h_draw[0]) & (us <= c[0] + h_draw[0])
        wv = ((vs >= (c[1] - h_draw[1]) + _REACH_SHEAR * (c[2] - h[2]))
              & (vs <= (c[1] + h_draw[1]) + _REACH_SHEAR * (c[2] + h[2])))
        img[np.ix_(wv, wu)] = _WALL
    img[0, :] = _WALL
    img[-1, :] = _WALL
    img[:, 0] = _WALL
    img[:, -1] = _WALL
    u = (state[0] - ulo) / span_u * resolution - 0.5
    v = (state[1] + _REACH_SHEAR * state[2] - vlo) / span_v * resolution - 0.5
    radius_px = _DISC_RADIUS_3D / span_u * resolution
    _paint_disc(img, u, v, radius_px,
                np.arange(resolution, dtype=np.float64),
                np.arange(resolution, dtype=np.float64))
    return img


def render(spec, state, resolution: int = 48) -> np.ndarray:
    """Rasterize a state to an (R, R, 3) float32 image in [0, 1].

    Deterministic and bit-exact: internally composed in uint8, so the same
    (spec, state, resolution) always yields identical bytes.
    """
    state = np.asarray(state, dtype=np.float64)
    if state.shape != (spec.dim,):
        raise EnvError(f"state must have shape ({spec.dim},)")
    raw = _render_maze(spec, state, resolution) if spec.dim == 2 else _render_reach(
        spec, state, resolution)
    return raw.astype(np.float32) / np.float32(255.0)


def render_u8(spec, state, resolution: int = 48) -> np.ndarray:
    """uint8 variant of render(); render() == render_u8()/255 exactly."""
    state = np.asarray(state, dtype=np.float64)
    return _render_maze(spec, state, resolution) if spec.dim == 2 else _render_reach(
        spec, state, resolution)


def save_png(image, path) -> None:
    """Write a rendered observation (float [0,1] or uint8) as a PNG file."""
    arr = np.asarray(image)
    if arr.dtype != np.uint8:
        arr = np.clip(np.round(arr * 255.0), 0, 255).astype(np.uint8)
    Image.fromarray(arr).save(path)


# ---------------------------------------------------------------------------
# Goal grids


def _distance_to_segment_2d(p, x1, y1, x2, y2) -> float:
    a = np.array([x1, y1])
    b = np.array([x2, y2])
    ab = b - a
    denom = float(ab @ ab)
    t = 0.0 if denom == 0 else float(np.clip((p - a) @ ab / denom, 0.0, 1.0))
    return float(np.linalg.norm(p - (a + t * ab)))


def _distance_to_box_3d(p, center, half) -> float:
    d = np.maximum(np.abs(p - np.asarray(center)) - np.asarray(half), 0.0)
    return float(np.linalg.norm(d))


def test_goal_grid(spec, spacing: float, clearance: float | None = None) -> list:
    """Regular grid of evaluation goals over free space.

    Points sit at cell centers (offset spacing/2) and points within
    `clearance` of a wall (default: the success radius) are removed.
    Ordering is deterministic, last axis fastest.
    """
    if spacing <= 0:
        raise EnvError("spacing must be positive")
    clearance = spec.success_radius if clearance is None else clearance
    if spec.dim == 2:
        lo, hi = np.zeros(2), np.full(2, spec.size)
    else:
        lo, hi = np.asarray(spec.low), np.asarray(spec.high)
    axes = [np.arange(lo[k] + spacing / 2, hi[k], spacing) for k in range(spec.dim)]
    goals = []
    mesh = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, spec.dim)
    for p in mesh:
        if spec.dim == 2:
            clear = all(_distance_to_segment_2d(p, *w) > clearance for w in spec.walls)
        else:
            clear = all(_distance_to_box_3d(p, c, h) > clearance for c, h in spec.walls)
        if clear:
            goals.append(p.copy())
    if not goals:
        raise EnvError(f"spacing {spacing} leaves no goals in free space")
    return goals


# ---------------------------------------------------------------------------
# Reachability analysis (BFS at full stride on an a_max-spaced grid)

_BFS_MOVES = [(dx, dy) for dx in (-1, 0, 1) for dy in (-1, 0, 1) if (dx, dy) != (0, 0)]


def bfs_distances(spec: MazeSpec, grid_step: float | None = None) -> dict:
    """BFS step counts from the start over a grid of full-stride moves.

    Grid nodes are start + grid_step * (i, j); edges follow the exact step()
    dynamics (a blocked axis reverts, so partial slides land on other nodes).
    With grid_step = a_max (default) each hop is one environment step at full
    speed, giving attainable step counts for any node.
    """
    h = spec.a_max if grid_step is None else grid_step
    start = np.asarray(spec.start, dtype=np.float64)

    def node_of(p):
        return (int(round((p[0] - start[0]) / h)), int(round((p[1] - start[1]) / h)))

    def pos_of(node):
        return start + h * np.asarray(node, dtype=np.float64)

    def on_grid(p, node):
        return np.max(np.abs(pos_of(node) - p)) < 1e-9

    dist = {node_of(start): 0}
    frontier = [node_of(start)]
    while frontier:
        nxt = []
        for node in frontier:
            p = pos_of(node)
            for dx, dy in _BFS_MOVES:
                q = step(spec, p, np.array([dx * h, dy * h]))
                qn = node_of(q)
                if on_grid(q, qn) and qn not in dist:
                    dist[qn] = dist[node] + 1
                    nxt.append(qn)
        frontier = nxt
    return {node: (pos_of(node), d) for node, d in dist.items()}


def bfs_depth(spec: MazeSpec) -> int:
    """Maximum BFS step count over all reachable grid nodes."""
    return max(d for _, d in bfs_distances(spec).values())


def free_space_connected(spec: MazeSpec, grid_step: float | None = None) -> bool:
    """True when BFS from the start reaches every free grid node."""
    h = spec.a_max if grid_step is None else grid_step
    start = np.asarray(spec.start, dtype=np.float64)
    reached = {node for node in bfs_distances(spec, h)}
    k0 = int(np.ceil((0.0 - start[0]) / h))
    k1 = int(np.floor((spec.size - start[0]) / h))
    for i in range(k0, k1 + 1):
        for j in range(k0, k1 + 1):
            p = start + h * np.array([i, j])
            if spec._inside_free_space(p) and (i, j) not in reached:
                return False
    return True


def shortest_path(spec: MazeSpec, goal, grid_step: float | None = None) -> list:
    """Grid waypoints from the start to the node nearest `goal` (BFS parents)."""
    h = spec.a_max if grid_step is None else grid_step
    start = np.asarray(spec.start, dtype=np.float64)
    goal = np.asarray(goal, dtype=np.float64)

    def node_of(p):
        return (int(round((p[0] - start[0]) / h)), int(round((p[1] - start[1]) / h)))

    def pos_of(node):
        return start + h * np.asarray(node, dtype=np.float64)

    parents = {node_of(start): None}
    frontier = [node_of(start)]
    while frontier:
        nxt = []
        for node in frontier:
            p = pos_of(node)
            for dx, dy in _BFS_MOVES:
                q = step(spec, p, np.array([dx * h, dy * h]))
                qn = node_of(q)
                if np.max(np.abs(pos_of(qn) - q)) < 1e-9 and qn not in parents:
                    parents[qn] = node
                    nxt.append(qn)
        frontier = nxt
    best = min(parents, key=lambda n: float(np.linalg.norm(pos_of(n) - goal)))
    path = []
    node = best
    while node is not None:
        path.append(pos_of(node))
        node = parents[node]
    return path[::-1]


# ---------------------------------------------------------------------------
# Builtin layouts
#
# Four hard-exploration mazes. Wall layouts and per-maze strides are tuned so
# the BFS depth (full-speed steps to the farthest free node) lands in
# [40, horizon), making the deepest regions hard but attainable in an episode.


def empty_room() -> MazeSpec:
    """Wall-free 6x6 room; shallow by construction, used by smoke tests."""
    return MazeSpec(name="empty-room", a_max=0.25)


def u_maze() -> MazeSpec:
    return MazeSpec(
        name="u-maze",
        walls=((0.0, 3.5, 4.5, 3.5),),
        a_max=0.2,
    )


def s_maze() -> MazeSpec:
    return MazeSpec(
        name="s-maze",
        walls=(
            (0.0, 2.0, 4.7, 2.0),
            (1.3, 4.0, 6.0, 4.0),
        ),
        a_max=0.3,
    )


def zigzag_maze() -> MazeSpec:
    return MazeSpec(
        name="zigzag",
        walls=(
            (0.0, 1.5, 4.9, 1.5),
            (1.1, 3.0, 6.0, 3.0),
            (0.0, 4.5, 4.9, 4.5),
        ),
        a_max=0.4,
    )


def spiral_maze() -> MazeSpec:
    return MazeSpec(
        name="spiral",
        walls=(
            (1.2, 1.2, 4.8, 1.2),
            (4.8, 1.2, 4.8, 3.6),
            (1.2, 4.8, 4.8, 4.8),
            (1.2, 1.2, 1.2, 4.8),
            (3.6, 2.4, 3.6, 4.8),
            (2.4, 1.2, 2.4, 3.6),
        ),
        a_max=0.3,
    )


def builtin_mazes() -> list:
    """The four depth-checked hard-exploration mazes."""
    return [u_maze(), s_maze(), zigzag_maze(), spiral_maze()]


_NAMED_SPECS = {
    "empty-room": empty_room,
    "u-maze": u_maze,
    "s-maze": s_maze,
    "zigzag": zigzag_maze,
    "spiral": spiral_maze,
    "reach-hard-walls": ReachSpec,
}


def named_spec(name: str):
    """Look up an environment spec by id (mazes and the reach task)."""
    try:
        return _NAMED_SPECS[name]()
    except KeyError:
        raise EnvError(f"unknown environment {name!r}; known: {sorted(_NAMED_SPECS)}") from None


# ---------------------------------------------------------------------------
# Plain-text geometry files


def maze_geometry_text(spec: MazeSpec) -> str:
    """Serialize a maze: metadata as comments, one wall segment per line."""
    lines = [
        f"# maze {spec.name}",
        f"# size {spec.size!r}",
        f"# start {spec.start[0]!r} {spec.start[1]!r}",
        f"# a_max {spec.a_max!r}",
        f"# success_radius {spec.success_radius!r}",
        f"# horizon {spec.horizon}",
    ]
    lines += [f"{x1!r} {y1!r} {x2!r} {y2!r}" for x1, y1, x2, y2 in spec.walls]
    return "\n".join(lines) + "\n"


def maze_from_geometry_text(text: str) -> MazeSpec:
    meta = {}
    walls = []
    for raw in text.splitlines():
        line = raw.strip()
        if not line:
            continue
        if line.startswith("#"):
            parts = line[1:].split()
            if parts:
                meta[parts[0]] = parts[1:]
            continue
        vals = [float(v) for v in line.split()]
        if len(vals) != 4:
            raise EnvError(f"bad wall line {line!r}: expected x1 y1 x2 y2")
        walls.append(tuple(vals))
    kwargs = {}
    if "maze" in meta:
        kwargs["name"] = meta["maze"][0]
    if "size" in meta:
        kwargs["size"] = float(meta["size"][0])
    if "start" in meta:
        kwargs["start"] = (float(meta["start"][0]), float(meta["start"][1]))
    if "a_max" in meta:
        kwargs["a_max"] = float(meta["a_max"][0])
    if "success_radius" in meta:
        kwargs["success_radius"] = float(meta["success_radius"][0])
    if "horizon" in meta:
        kwargs["horizon"] = int(meta["horizon"][0])
    return MazeSpec(walls=tuple(walls), **({"name": "maze"} | kwargs))


def save_geometry(spec: MazeSpec, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(maze_geometry_text(spec))


def load_geometry(path) -> MazeSpec:
    with open(path, encoding="utf-8") as fh:
        return maze_from_geometry_text(fh.read())
