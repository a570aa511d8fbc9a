"""Deterministic gridworld pick-and-place with distribution-shift knobs.

A gripper moves over a cell grid, grasps a colored target object named by
the instruction, and drops it on the goal cell. Observations are the
rendered pixels only. The scene can be perturbed per episode to create a
train/test gap: rigid full-scene translation (pose_shift), extra clutter
objects (distractor), or an invisible target (mask_target). Full-scene
translation commutes with the relative move actions, so an agent that is
invariant to translation keeps its training behavior intact.

Action layout (tokens per dimension, token t encodes t - tokens // 2):
dim 0 horizontal move, dim 1 vertical move, clamped to +-max_move cells;
dim 2 actuates the gripper when its token exceeds tokens // 2; any extra
dimensions are ignored by the dynamics.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from typing import List, Optional, Tuple

import numpy as np

from . import kernels
from .types import (
    Action,
    ConfigError,
    EpisodeDoneError,
    Feedback,
    FeedbackNotReadyError,
    Instruction,
    Observation,
    UnsupportedShiftError,
    PAD_ID,
)
from .policy import Demonstration

KIND_PALETTE = np.array([
    [0.90, 0.15, 0.15],
    [0.15, 0.80, 0.20],
    [0.20, 0.35, 0.95],
    [0.95, 0.85, 0.10],
    [0.85, 0.20, 0.80],
    [0.10, 0.80, 0.85],
    [0.55, 0.30, 0.90],
    [0.60, 0.50, 0.20],
], dtype=np.float32)

GOAL_COLOR = np.array([0.30, 0.30, 0.30], dtype=np.float32)
GRIPPER_COLOR = np.array([1.0, 1.0, 1.0], dtype=np.float32)

SHIFT_KINDS = ("none", "pose_shift", "distractor", "mask_target")


@dataclass(frozen=True)
class ShiftSpec:
    """Per-episode scene perturbation applied at reset."""

    kind: str = "none"
    max_cells: int = 0   # pose_shift: translation bound per axis
    count: int = 0       # distractor: number of clutter objects

    def __post_init__(self) -> None:
        if self.kind not in SHIFT_KINDS:
            raise ConfigError(f"shift kind must be one of {SHIFT_KINDS}, got {self.kind!r}")
        if self.kind == "pose_shift" and self.max_cells < 1:
            raise ConfigError("pose_shift needs max_cells >= 1")
        if self.kind == "distractor" and self.count < 1:
            raise ConfigError("distractor needs count >= 1")

    @classmethod
    def parse(cls, text: str) -> "ShiftSpec":
        """Parse CLI syntax like 'none', 'pose_shift(2)', 'distractor(3)'."""
        text = text.strip()
        if "(" not in text:
            return cls(kind=text)
        kind, _, rest = text.partition("(")
        arg = rest.rstrip(")")
        if kind == "pose_shift":
            return cls(kind=kind, max_cells=int(arg))
        if kind == "distractor":
            return cls(kind=kind, count=int(arg))
        raise ConfigError(f"cannot parse shift spec {text!r}")


@dataclass(frozen=True)
class ObjectSpec:
    """One scene object: kind, canonical cell position, optional color.

    color defaults to the kind's palette entry; an explicit (r, g, b) in
    [0, 1] overrides the rendering only, never the instruction semantics.
    """

    kind: int
    x: int
    y: int
    color: Optional[Tuple[float, float, float]] = None

    def __post_init__(self) -> None:
        if not (0 <= self.kind < len(KIND_PALETTE)):
            raise ConfigError(f"object kind must be in [0, {len(KIND_PALETTE)}), got {self.kind}")
        if self.color is not None:
            if len(self.color) != 3 or not all(0.0 <= c <= 1.0 for c in self.color):
                raise ConfigError("object color must be three values in [0, 1]")

    def rgb(self) -> np.ndarray:
        if self.color is None:
            return KIND_PALETTE[self.kind]
        return np.asarray(self.color, dtype=np.float32)


@dataclass(frozen=True)
class EnvConfig:
    """Everything that determines one episode; frozen so tasks clone safely."""

    objects: Tuple[ObjectSpec, ...]
    target_kind: int
    goal: Tuple[int, int]
    gripper: Tuple[int, int]
    grid_h: int = 10
    grid_w: int = 10
    cell_px: int = 1
    horizon: int = 24
    shift: ShiftSpec = field(default_factory=ShiftSpec)
    seed: int = 0
    feedback_mode: str = "binary"
    action_dims: int = 4
    action_tokens: int = 16
    max_move: int = 2
    vocab: int = 16
    instr_len: int = 4

    def __post_init__(self) -> None:
        if self.grid_h < 2 or self.grid_w < 2 or self.cell_px < 1:
            raise ConfigError("grid must be at least 2x2 with cell_px >= 1")
        if self.horizon < 1:
            raise ConfigError("horizon must be >= 1")
        if self.feedback_mode not in ("binary", "shaped"):
            raise ConfigError("feedback_mode must be 'binary' or 'shaped'")
        if self.action_dims < 3:
            raise ConfigError("need at least 3 action dimensions (dx, dy, gripper)")
        k, m = self.action_tokens, self.max_move
        if m < 1:
            raise ConfigError("max_move must be >= 1")
        if k // 2 - m < 0 or k // 2 + m > k - 1:
            raise ConfigError(
                f"action_tokens={k} cannot encode moves of +-{m} around center {k // 2}")
        if not self.objects:
            raise ConfigError("need at least one object")
        targets = [o for o in self.objects if o.kind == self.target_kind]
        if len(targets) != 1:
            raise ConfigError(
                f"exactly one object must have target kind {self.target_kind}, "
                f"found {len(targets)}")
        if self.vocab < len(KIND_PALETTE) + 1:
            raise ConfigError(f"vocab must cover all kind tokens, need >= {len(KIND_PALETTE) + 1}")
        if self.instr_len < 1:
            raise ConfigError("instr_len must be >= 1")

        margin = self.shift.max_cells if self.shift.kind == "pose_shift" else 0
        cells = [(o.x, o.y) for o in self.objects] + [self.goal, self.gripper]
        if len(set(cells)) != len(cells):
            raise ConfigError("objects, goal, and gripper must occupy distinct cells")
        for (x, y) in cells:
            if not (margin <= x < self.grid_w - margin
                    and margin <= y < self.grid_h - margin):
                raise ConfigError(
                    f"cell ({x}, {y}) leaves the grid under shifts up to {margin}")

    @property
    def obs_shape(self) -> Tuple[int, int, int]:
        return (self.grid_h * self.cell_px, self.grid_w * self.cell_px, 3)

    def instruction(self) -> Instruction:
        tokens = np.full(self.instr_len, PAD_ID, dtype=np.int64)
        tokens[0] = self.target_kind + 1
        return Instruction(tokens=tokens, vocab=self.vocab)


@dataclass(frozen=True)
class EpisodeResult:
    """Outcome summary produced once an episode has finished."""

    success: bool
    steps: int
    feedback: Feedback
    trace: Tuple[Tuple[Observation, Action], ...] = ()


class GridPickPlace:
    """Stateful episode of the pick-and-place gridworld."""

    def __init__(self, config: EnvConfig, record_trace: bool = False) -> None:
        self.config = config
        self.record_trace = record_trace
        self._rng = np.random.Generator(np.random.PCG64(config.seed))
        self._started = False
        self.reset()

    # -- episode lifecycle ---------------------------------------------------

    def reset(self) -> Tuple[Observation, Instruction]:
        """Start a fresh episode, drawing the shift from the env's rng."""
        cfg = self.config
        kinds = [o.kind for o in cfg.objects]
        colors = [o.rgb() for o in cfg.objects]
        xy = np.array([[o.x, o.y] for o in cfg.objects], dtype=np.int64)
        goal = np.array(cfg.goal, dtype=np.int64)
        grip = np.array(cfg.gripper, dtype=np.int64)
        visible = [True] * len(kinds)

        s = cfg.shift
        if s.kind == "pose_shift":
            m = s.max_cells
            offsets = [(dx, dy) for dy in range(-m, m + 1) for dx in range(-m, m + 1)]
            dx, dy = offsets[int(self._rng.integers(len(offsets)))]
            off = np.array([dx, dy], dtype=np.int64)
            xy = xy + off
            goal = goal + off
            grip = grip + off
        elif s.kind == "distractor":
            taken = {tuple(p) for p in xy} | {tuple(goal), tuple(grip)}
            free = [(x, y) for y in range(cfg.grid_h) for x in range(cfg.grid_w)
                    if (x, y) not in taken]
            if len(free) < s.count:
                raise ConfigError("not enough free cells for distractors")
            picks = self._rng.choice(len(free), size=s.count, replace=False)
            other_kinds = [k for k in range(len(KIND_PALETTE)) if k != cfg.target_kind]
            extra_xy = []
            for p in picks:
                kind = other_kinds[int(self._rng.integers(len(other_kinds)))]
                extra_xy.append(free[int(p)])
                kinds.append(kind)
                colors.append(KIND_PALETTE[kind])
                visible.append(True)
            xy = np.concatenate([xy, np.array(extra_xy, dtype=np.int64)], axis=0)
        elif s.kind == "mask_target":
            visible[self._target_index(kinds)] = False

        self._kinds = kinds
        self._colors = np.stack(colors).astype(np.float32)
        self._xy = xy
        self._goal = goal
        self._grip = grip
        self._visible = visible
        self._holding: Optional[int] = None
        self._steps = 0
        self._done = False
        self._success = False
        self._started = True
        self._trace: List[Tuple[Observation, Action]] = []
        self._initial_remaining = max(self._remaining(), 1)
        t = self._target_index()
        self._ever_held_target = False
        self._initial_approach = max(self._cheb(self._grip, self._xy[t]), 1)
        self._min_approach = self._initial_approach
        self._initial_carry = max(self._cheb(self._xy[t], self._goal), 1)
        self._last_obs = self.render()
        return self._last_obs, self.config.instruction()

    @staticmethod
    def _cheb(a, b) -> int:
        return int(max(abs(int(a[0]) - int(b[0])), abs(int(a[1]) - int(b[1]))))

    def _target_index(self, kinds=None) -> int:
        kinds = self._kinds if kinds is None else kinds
        return kinds.index(self.config.target_kind)

    # -- dynamics -------------------------------------------------------------

    def step(self, action: Action) -> Tuple[Observation, bool]:
        """Advance one step; returns (next observation, done)."""
        if self._done:
            raise EpisodeDoneError("episode already finished; call reset()")
        cfg = self.config
        if action.tokens != cfg.action_tokens or action.dims.shape[0] < cfg.action_dims:
            raise ConfigError(
                f"action layout ({action.dims.shape[0]}, {action.tokens}) does not "
                f"match env ({cfg.action_dims}, {cfg.action_tokens})")
        center = cfg.action_tokens // 2
        m = cfg.max_move
        dx = int(np.clip(int(action.dims[0]) - center, -m, m))
        dy = int(np.clip(int(action.dims[1]) - center, -m, m))
        actuate = int(action.dims[2]) > center

        gx = int(np.clip(self._grip[0] + dx, 0, cfg.grid_w - 1))
        gy = int(np.clip(self._grip[1] + dy, 0, cfg.grid_h - 1))
        self._grip = np.array([gx, gy], dtype=np.int64)
        if self._holding is not None:
            self._xy[self._holding] = self._grip

        if actuate:
            if self._holding is None:
                at = [i for i in range(len(self._kinds))
                      if self._xy[i, 0] == gx and self._xy[i, 1] == gy]
                if at:
                    self._holding = at[0]
                    if at[0] == self._target_index():
                        self._ever_held_target = True
            else:
                held = self._holding
                self._holding = None
                on_goal = gx == int(self._goal[0]) and gy == int(self._goal[1])
                self._done = True
                self._success = on_goal and held == self._target_index()

        t = self._target_index()
        if self._holding != t:
            self._min_approach = min(
                self._min_approach, self._cheb(self._grip, self._xy[t]))
        self._steps += 1
        if self._steps >= cfg.horizon:
            self._done = True
        if self.record_trace:
            self._trace.append((self._last_obs, action))
        self._last_obs = self.render()
        return self._last_obs, self._done

    # -- outputs ---------------------------------------------------------------

    def render(self) -> Observation:
        cfg = self.config
        n = len(self._kinds)
        vis = np.zeros(n, dtype=np.bool_)
        for i in range(n):
            vis[i] = self._visible[i] and i != self._holding
        if self._holding is not None:
            grip_color = (0.5 * (GRIPPER_COLOR + self._colors[self._holding])
                          ).astype(np.float32)
        else:
            grip_color = GRIPPER_COLOR
        img = kernels.render_scene(
            cfg.grid_h, cfg.grid_w, cfg.cell_px,
            self._goal, GOAL_COLOR, self._xy, self._colors, vis,
            self._grip, grip_color)
        return Observation(img)

    @property
    def done(self) -> bool:
        return self._done

    @property
    def success(self) -> bool:
        return self._success

    @property
    def steps_taken(self) -> int:
        return self._steps

    def _remaining(self) -> int:
        """Chebyshev work left: reach the target, then carry it to the goal."""
        if self._success:
            return 0
        t = self._target_index()
        goal, grip = self._goal, self._grip

        def cheb(a, b) -> int:
            return int(max(abs(int(a[0]) - int(b[0])), abs(int(a[1]) - int(b[1]))))

        if self._holding == t:
            return cheb(grip, goal)
        return cheb(grip, self._xy[t]) + cheb(self._xy[t], goal)

    def feedback(self) -> Feedback:
        """Delayed episodic feedback; only defined once the episode is done.

        Shaped mode is a monotone credit ladder over distance progress:
        approach credit in [0, 0.25] while the target was never grasped,
        grasp tier 0.30 plus carry credit in [0, 0.25], success 1.0. Every
        rung strictly dominates the tiers below it, so any behavioral
        improvement raises the scalar.
        """
        if not self._done:
            raise FeedbackNotReadyError("episode still running")
        if self.config.feedback_mode == "binary":
            return Feedback(1.0 if self._success else 0.0)
        if self._success:
            return Feedback(1.0)
        if not self._ever_held_target:
            frac = 1.0 - self._min_approach / self._initial_approach
            return Feedback(0.25 * min(max(frac, 0.0), 1.0))
        t = self._target_index()
        carry = self._cheb(self._xy[t], self._goal)
        frac = 1.0 - carry / self._initial_carry
        return Feedback(0.30 + 0.25 * min(max(frac, 0.0), 1.0))

    def result(self) -> EpisodeResult:
        return EpisodeResult(
            success=self._success,
            steps=self._steps,
            feedback=self.feedback(),
            trace=tuple(self._trace),
        )


def reset(config: EnvConfig) -> Tuple[Observation, Instruction, GridPickPlace]:
    """Build an episode and return its first observation and instruction."""
    env = GridPickPlace(config)
    obs, instr = env.render(), config.instruction()
    return obs, instr, env


def step(env: GridPickPlace, action: Action) -> Tuple[Observation, bool]:
    return env.step(action)


def trace_to_jsonl(result: EpisodeResult, path) -> None:
    """Write one JSON object per (observation, action) step for debugging."""
    with open(path, "w") as fh:
        for t, (obs, act) in enumerate(result.trace):
            entry = {
                "t": t,
                "action": [int(v) for v in act.dims],
                "observation": np.round(obs.pixels.astype(float), 6).tolist(),
            }
            fh.write(json.dumps(entry) + "\n")
        tail = {"steps": result.steps, "success": result.success,
                "feedback": result.feedback.value}
        fh.write(json.dumps(tail) + "\n")


# ---------------------------------------------------------------------------
# Scripted expert
# ---------------------------------------------------------------------------

def scripted_expert(config: EnvConfig) -> Demonstration:
    """Optimal-ish demonstration on the canonical (unshifted) layout.

    Moves greedily to the target, grasps, carries to the goal, drops.
    Raises UnsupportedShiftError for any shifted config: the expert's
    memorized coordinates are only valid canonically.
    """
    if config.shift.kind != "none":
        raise UnsupportedShiftError(
            f"scripted expert requires shift 'none', got {config.shift.kind!r}")
    env = GridPickPlace(config)
    obs, instr = env.reset()
    k = config.action_tokens
    center = k // 2
    act_token = center + 1
    m = config.max_move
    steps = []
    while not env.done:
        if env._holding is None:
            dest = env._xy[env._target_index()]
        else:
            dest = env._goal
        dx = int(np.clip(int(dest[0]) - int(env._grip[0]), -m, m))
        dy = int(np.clip(int(dest[1]) - int(env._grip[1]), -m, m))
        dims = np.full(config.action_dims, center, dtype=np.int64)
        if dx == 0 and dy == 0:
            dims[2] = act_token
        else:
            dims[0] = center + dx
            dims[1] = center + dy
        action = Action(dims=dims, tokens=k)
        steps.append((obs, action))
        obs, _ = env.step(action)
    if not env.success:
        raise ConfigError("horizon too short for the scripted expert on this layout")
    return Demonstration(instruction=instr, steps=tuple(steps))


def shifted_copy(config: EnvConfig, shift: ShiftSpec, seed: int) -> EnvConfig:
    """Clone a task config with a different shift and episode seed."""
    return replace(config, shift=shift, seed=seed)
