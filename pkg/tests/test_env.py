"""Gridworld pick-and-place: dynamics, shifts, feedback ladder, expert."""

import json

import numpy as np
import pytest

from pdf import kernels
from pdf.env import (
    GOAL_COLOR,
    KIND_PALETTE,
    EnvConfig,
    GridPickPlace,
    ObjectSpec,
    ShiftSpec,
    reset,
    scripted_expert,
    shifted_copy,
    step,
    trace_to_jsonl,
)
from pdf.types import (
    Action,
    ConfigError,
    EpisodeDoneError,
    FeedbackNotReadyError,
    UnsupportedShiftError,
    PAD_ID,
)


def small_config(**kw):
    base = dict(
        objects=(ObjectSpec(kind=2, x=4, y=6), ObjectSpec(kind=5, x=6, y=2)),
        target_kind=2,
        goal=(4, 8),
        gripper=(4, 4),
        grid_h=10,
        grid_w=10,
        horizon=24,
        seed=0,
    )
    base.update(kw)
    return EnvConfig(**base)


def act(cfg, dx=0, dy=0, actuate=False):
    center = cfg.action_tokens // 2
    dims = np.full(cfg.action_dims, center, dtype=np.int64)
    dims[0] = center + dx
    dims[1] = center + dy
    if actuate:
        dims[2] = center + 1
    return Action(dims=dims, tokens=cfg.action_tokens)


def run_to_timeout(env):
    cfg = env.config
    while not env.done:
        env.step(act(cfg))


def find_gripper(obs):
    """Cell of the unique pure-white pixel (gripper while not holding)."""
    hits = np.argwhere(np.all(obs.pixels == 1.0, axis=2))
    assert hits.shape[0] == 1
    y, x = hits[0]
    return int(x), int(y)


class TestShiftSpec:
    def test_parse_forms(self):
        assert ShiftSpec.parse("none") == ShiftSpec()
        assert ShiftSpec.parse("pose_shift(2)") == ShiftSpec("pose_shift", max_cells=2)
        assert ShiftSpec.parse("distractor(3)") == ShiftSpec("distractor", count=3)
        assert ShiftSpec.parse("mask_target") == ShiftSpec("mask_target")

    @pytest.mark.parametrize("text", ["zoom(1)", "pose_shift(0)", "distractor(0)"])
    def test_bad_specs_rejected(self, text):
        with pytest.raises((ConfigError, ValueError)):
            ShiftSpec.parse(text)


class TestConfigValidation:
    def test_object_kind_bounded(self):
        with pytest.raises(ConfigError):
            ObjectSpec(kind=len(KIND_PALETTE), x=0, y=0)

    def test_object_color_bounded(self):
        with pytest.raises(ConfigError):
            ObjectSpec(kind=0, x=0, y=0, color=(1.5, 0.0, 0.0))

    def test_exactly_one_target(self):
        with pytest.raises(ConfigError):
            small_config(objects=(ObjectSpec(kind=5, x=4, y=6),))
        with pytest.raises(ConfigError):
            small_config(objects=(ObjectSpec(kind=2, x=4, y=6),
                                  ObjectSpec(kind=2, x=6, y=2)))

    def test_distinct_cells(self):
        with pytest.raises(ConfigError):
            small_config(goal=(4, 4))

    def test_margin_under_pose_shift(self):
        shift = ShiftSpec("pose_shift", max_cells=2)
        small_config(shift=shift, goal=(4, 7))
        with pytest.raises(ConfigError):
            small_config(shift=shift, goal=(4, 7),
                         objects=(ObjectSpec(kind=2, x=1, y=6),
                                  ObjectSpec(kind=5, x=6, y=2)))
        with pytest.raises(ConfigError):
            small_config(shift=shift)  # default goal y=8 breaches the margin

    def test_move_encoding_must_fit_tokens(self):
        with pytest.raises(ConfigError):
            small_config(action_tokens=4, max_move=2)

    @pytest.mark.parametrize("kw", [
        dict(grid_h=1), dict(horizon=0), dict(feedback_mode="dense"),
        dict(action_dims=2), dict(max_move=0), dict(vocab=8),
        dict(instr_len=0), dict(objects=()),
    ])
    def test_rejections(self, kw):
        with pytest.raises(ConfigError):
            small_config(**kw)

    def test_instruction_tokens(self):
        cfg = small_config(instr_len=4)
        instr = cfg.instruction()
        assert instr.tokens[0] == cfg.target_kind + 1
        assert all(t == PAD_ID for t in instr.tokens[1:])
        assert instr.vocab == cfg.vocab

    def test_obs_shape(self):
        assert small_config(cell_px=2).obs_shape == (20, 20, 3)


class TestResetAndRender:
    def test_same_config_same_first_frame(self):
        a = GridPickPlace(small_config())
        b = GridPickPlace(small_config())
        assert a.render().pixels.tobytes() == b.render().pixels.tobytes()

    def test_canonical_placement(self):
        env = GridPickPlace(small_config())
        img = env.render().pixels
        assert np.array_equal(img[4, 4], [1.0, 1.0, 1.0])
        assert np.array_equal(img[8, 4], GOAL_COLOR)
        assert np.array_equal(img[6, 4], KIND_PALETTE[2])
        assert np.array_equal(img[2, 6], KIND_PALETTE[5])
        assert np.array_equal(img[0, 0], [0.0, 0.0, 0.0])

    def test_pose_shift_is_rigid_translation_within_bound(self):
        canonical = GridPickPlace(small_config(goal=(4, 7))).render().pixels
        shift = ShiftSpec("pose_shift", max_cells=2)
        seen = set()
        for seed in range(60):
            env = GridPickPlace(small_config(shift=shift, goal=(4, 7), seed=seed))
            obs = env.render()
            gx, gy = find_gripper(obs)
            dx, dy = gx - 4, gy - 4
            assert max(abs(dx), abs(dy)) <= 2
            seen.add((dx, dy))
            assert np.array_equal(kernels.shift_image(canonical, dx, dy),
                                  obs.pixels)
        assert len(seen) > 10

    def test_mask_target_hides_target_only(self):
        env = GridPickPlace(small_config(shift=ShiftSpec("mask_target")))
        img = env.render().pixels
        assert np.array_equal(img[6, 4], [0.0, 0.0, 0.0])
        assert np.array_equal(img[2, 6], KIND_PALETTE[5])

    def test_distractors_add_visible_objects(self):
        env = GridPickPlace(small_config(shift=ShiftSpec("distractor", count=3)))
        img = env.render().pixels
        base = GridPickPlace(small_config()).render().pixels
        assert (np.any(img != 0.0, axis=2).sum()
                == np.any(base != 0.0, axis=2).sum() + 3)
        assert np.array_equal(img[6, 4], KIND_PALETTE[2])

    def test_distractors_need_free_cells(self):
        cfg = small_config(
            grid_h=3, grid_w=3,
            objects=(ObjectSpec(kind=2, x=0, y=0), ObjectSpec(kind=5, x=1, y=0)),
            goal=(2, 0), gripper=(0, 1),
            shift=ShiftSpec("distractor", count=6),
        )
        with pytest.raises(ConfigError):
            GridPickPlace(cfg)

    def test_module_level_reset_wrapper(self):
        cfg = small_config()
        obs, instr, env = reset(cfg)
        assert obs.pixels.tobytes() == env.render().pixels.tobytes()
        assert instr.tokens[0] == cfg.target_kind + 1


class TestStepDynamics:
    def test_move_and_clip(self):
        cfg = small_config()
        env = GridPickPlace(cfg)
        env.step(act(cfg, dx=1, dy=-1))
        assert find_gripper(env.render()) == (5, 3)
        # oversized token clips to max_move
        big = act(cfg)
        big.dims[0] = cfg.action_tokens - 1
        env.step(big)
        assert find_gripper(env.render()) == (7, 3)

    def test_grid_edge_clamps(self):
        cfg = small_config()
        env = GridPickPlace(cfg)
        for _ in range(8):
            env.step(act(cfg, dx=-2, dy=-2))
        assert find_gripper(env.render()) == (0, 0)

    def test_grasp_carry_drop_success(self):
        cfg = small_config()
        env = GridPickPlace(cfg)
        env.step(act(cfg, dy=2))                       # onto target cell
        env.step(act(cfg, actuate=True))               # grasp
        img = env.render().pixels
        blend = (0.5 * (np.ones(3, dtype=np.float32) + KIND_PALETTE[2])
                 ).astype(np.float32)
        assert np.array_equal(img[6, 4], blend)
        env.step(act(cfg, dy=2))                       # carry to goal
        img = env.render().pixels
        assert np.array_equal(img[6, 4], [0.0, 0.0, 0.0])
        obs, done = env.step(act(cfg, actuate=True))   # drop
        assert done and env.success
        assert env.feedback().value == 1.0
        # gripper paints last, so the goal cell shows it over the dropped object
        assert np.array_equal(obs.pixels[8, 4], [1.0, 1.0, 1.0])

    def test_drop_off_goal_fails(self):
        cfg = small_config()
        env = GridPickPlace(cfg)
        env.step(act(cfg, dy=2))
        env.step(act(cfg, actuate=True))
        _, done = env.step(act(cfg, actuate=True))
        assert done and not env.success
        assert env.feedback().value == 0.0

    def test_grasp_on_empty_cell_is_noop(self):
        cfg = small_config()
        env = GridPickPlace(cfg)
        before = env.render().pixels.tobytes()
        _, done = env.step(act(cfg, actuate=True))
        assert not done
        assert env.render().pixels.tobytes() == before

    def test_grasping_non_target_counts_as_held_object(self):
        cfg = small_config(gripper=(6, 3))
        env = GridPickPlace(cfg)
        env.step(act(cfg, dy=-1))
        env.step(act(cfg, actuate=True))               # grasp the clutter kind
        _, done = env.step(act(cfg, actuate=True))     # drop it immediately
        assert done and not env.success

    def test_horizon_timeout(self):
        cfg = small_config(horizon=5)
        env = GridPickPlace(cfg)
        run_to_timeout(env)
        assert env.done and not env.success
        assert env.steps_taken == 5

    def test_step_after_done_rejected(self):
        cfg = small_config(horizon=1)
        env = GridPickPlace(cfg)
        env.step(act(cfg))
        with pytest.raises(EpisodeDoneError):
            env.step(act(cfg))

    def test_layout_mismatch_rejected(self):
        cfg = small_config()
        env = GridPickPlace(cfg)
        with pytest.raises(ConfigError):
            env.step(Action(dims=np.array([7, 7, 7, 7]), tokens=8))
        with pytest.raises(ConfigError):
            env.step(Action(dims=np.array([8, 8]), tokens=cfg.action_tokens))

    def test_extra_dims_ignored(self):
        cfg = small_config(action_dims=4)
        a_env, b_env = GridPickPlace(cfg), GridPickPlace(cfg)
        a, b = act(cfg, dx=1), act(cfg, dx=1)
        b.dims[3] = 1
        a_env.step(a)
        b_env.step(b)
        assert a_env.render().pixels.tobytes() == b_env.render().pixels.tobytes()

    def test_module_level_step_wrapper(self):
        cfg = small_config()
        _, _, env = reset(cfg)
        obs, done = step(env, act(cfg, dx=1))
        assert not done
        assert find_gripper(obs) == (5, 4)


class TestFeedback:
    def test_not_ready_while_running(self):
        env = GridPickPlace(small_config())
        with pytest.raises(FeedbackNotReadyError):
            env.feedback()
        env.step(act(env.config, dy=1))
        with pytest.raises(FeedbackNotReadyError):
            env.feedback()

    def shaped(self, **kw):
        return GridPickPlace(small_config(feedback_mode="shaped", **kw))

    def test_no_progress_scores_zero(self):
        env = self.shaped()
        run_to_timeout(env)
        assert env.feedback().value == 0.0

    def test_half_approach(self):
        env = self.shaped()
        env.step(act(env.config, dy=1))                # cheb 2 -> 1
        run_to_timeout(env)
        assert abs(env.feedback().value - 0.125) < 1e-9

    def test_touching_target_without_grasp(self):
        env = self.shaped()
        env.step(act(env.config, dy=2))
        run_to_timeout(env)
        assert abs(env.feedback().value - 0.25) < 1e-9

    def test_grasp_without_carry(self):
        env = self.shaped()
        env.step(act(env.config, dy=2))
        env.step(act(env.config, actuate=True))
        run_to_timeout(env)
        assert abs(env.feedback().value - 0.30) < 1e-9

    def test_carry_halfway(self):
        env = self.shaped()
        env.step(act(env.config, dy=2))
        env.step(act(env.config, actuate=True))
        env.step(act(env.config, dy=1))
        run_to_timeout(env)
        assert abs(env.feedback().value - 0.425) < 1e-9

    def test_success_scores_one(self):
        env = self.shaped()
        env.step(act(env.config, dy=2))
        env.step(act(env.config, actuate=True))
        env.step(act(env.config, dy=2))
        env.step(act(env.config, actuate=True))
        assert env.feedback().value == 1.0

    def test_ladder_is_monotone(self):
        # every behavioral tier strictly dominates the previous one
        values = []
        for plan in ([], [(0, 1, False)], [(0, 2, False)],
                     [(0, 2, True)], [(0, 2, True), (0, 1, False)]):
            env = self.shaped()
            for dx, dy, g in plan:
                env.step(act(env.config, dx=dx, dy=dy, actuate=g))
            run_to_timeout(env)
            values.append(env.feedback().value)
        assert values == sorted(values)
        assert all(b > a for a, b in zip(values, values[1:]))
        assert all(v < 1.0 for v in values)

    def test_regression_after_best_approach_keeps_credit(self):
        env = self.shaped()
        env.step(act(env.config, dy=2))                # reach the target cell
        env.step(act(env.config, dy=-2))               # walk away again
        run_to_timeout(env)
        assert abs(env.feedback().value - 0.25) < 1e-9


class TestExpertAndTrace:
    def test_expert_succeeds_and_is_deterministic(self):
        cfg = small_config()
        demo1 = scripted_expert(cfg)
        demo2 = scripted_expert(cfg)
        assert len(demo1.steps) == len(demo2.steps)
        for (o1, a1), (o2, a2) in zip(demo1.steps, demo2.steps):
            assert a1 == a2
            assert o1.pixels.tobytes() == o2.pixels.tobytes()

    def test_expert_replay_reproduces_success(self):
        cfg = small_config()
        demo = scripted_expert(cfg)
        env = GridPickPlace(cfg)
        for obs, action in demo.steps:
            assert obs.pixels.tobytes() == env.render().pixels.tobytes()
            env.step(action)
        assert env.done and env.success
        assert env.steps_taken == len(demo.steps)

    def test_expert_path_length_is_greedy_optimal(self):
        # cheb 2 to target (ceil 2/2 = 1 move), grasp, cheb 2 to goal, drop
        demo = scripted_expert(small_config())
        assert len(demo.steps) == 4

    def test_expert_rejects_shifted_configs(self):
        for shift in (ShiftSpec("pose_shift", max_cells=1),
                      ShiftSpec("distractor", count=1),
                      ShiftSpec("mask_target")):
            with pytest.raises(UnsupportedShiftError):
                scripted_expert(small_config(shift=shift))

    def test_expert_needs_enough_horizon(self):
        with pytest.raises(ConfigError):
            scripted_expert(small_config(horizon=2))

    def test_trace_round_trip(self, tmp_path):
        cfg = small_config()
        env = GridPickPlace(cfg, record_trace=True)
        demo = scripted_expert(cfg)
        for _, action in demo.steps:
            env.step(action)
        result = env.result()
        assert result.success and result.steps == len(demo.steps)
        assert len(result.trace) == result.steps

        path = tmp_path / "trace.jsonl"
        trace_to_jsonl(result, path)
        lines = [json.loads(l) for l in path.read_text().splitlines()]
        assert len(lines) == result.steps + 1
        for t, entry in enumerate(lines[:-1]):
            assert entry["t"] == t
            assert len(entry["action"]) == cfg.action_dims
            obs = np.asarray(entry["observation"])
            assert obs.shape == cfg.obs_shape
        assert lines[-1] == {"steps": result.steps, "success": True,
                             "feedback": 1.0}

    def test_trace_disabled_by_default(self):
        cfg = small_config(horizon=1)
        env = GridPickPlace(cfg)
        env.step(act(cfg))
        assert env.result().trace == ()


class TestShiftedCopy:
    def test_changes_shift_and_seed_only(self):
        cfg = small_config(goal=(4, 7))
        out = shifted_copy(cfg, ShiftSpec("pose_shift", max_cells=2), seed=99)
        assert out.shift == ShiftSpec("pose_shift", max_cells=2)
        assert out.seed == 99
        assert out.objects == cfg.objects
        assert out.goal == cfg.goal and out.gripper == cfg.gripper
        assert out.horizon == cfg.horizon

    def test_validation_still_applies(self):
        cfg = small_config(objects=(ObjectSpec(kind=2, x=1, y=6),
                                    ObjectSpec(kind=5, x=6, y=2)))
        with pytest.raises(ConfigError):
            shifted_copy(cfg, ShiftSpec("pose_shift", max_cells=2), seed=0)
