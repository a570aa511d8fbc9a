"""Experiment harness: variants, ablations, sweeps, and metrics files.

One experiment = a frozen snapshot, a set of generated task layouts, and a
grid of (seed, task) cells. Each cell optionally runs an adaptation phase
(episodes with head updates after each) and then a frozen-head evaluation
phase, yielding one metrics row. All randomness is derived from
(seed, purpose, task, episode) tuples, so any two runs of the same config
agree bit-for-bit everywhere except wall-clock timing.

Variant semantics (single code path, toggled by flags):
  baseline    frozen greedy policy; no views, no head, no adaptation
  pdf_wo_df   uncertainty-budgeted views + voting, head stays zero, no updates
  pdf_wo_da   head adapts from delayed feedback, but view budget forced to 0
  pdf_wo_kl   full method with the KL anchor weight zeroed
  pdf_wo_re   full method with the feedback-weighted term zeroed (gate intact)
  pdf_full    everything on
"""

from __future__ import annotations

import json
import time
import zlib
from dataclasses import dataclass, field, replace
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from . import augment, perturb, policy
from .adapt import BaselineTracker, RolloutBuffer, adapt
from .augment import AugmentRanges
from .env import EnvConfig, GridPickPlace, ObjectSpec, ShiftSpec, scripted_expert
from .perturb import PerturbationHead
from .policy import Demonstration, PolicySnapshot, train_bc
from .types import (
    ArchHeader,
    ConfigError,
    HyperParams,
    RolloutRecord,
)

VARIANTS = ("baseline", "pdf_wo_df", "pdf_wo_da", "pdf_wo_kl", "pdf_wo_re", "pdf_full")

METRICS_COLUMNS = ("variant", "seed", "task_id", "success_rate",
                   "mean_uncertainty", "mean_budget", "episodes_adapted",
                   "wall_time_ms")


# ---------------------------------------------------------------------------
# Seeding discipline
# ---------------------------------------------------------------------------

def _seed_parts(root: int, *tags) -> List[int]:
    parts = [int(root) & 0xFFFFFFFF]
    for t in tags:
        if isinstance(t, str):
            parts.append(zlib.crc32(t.encode("utf-8")))
        else:
            parts.append(int(t) & 0xFFFFFFFF)
    return parts


def derive_rng(root: int, *tags) -> np.random.Generator:
    """Independent generator for a (root, purpose, indices...) tuple."""
    return np.random.Generator(np.random.PCG64(
        np.random.SeedSequence(_seed_parts(root, *tags))))


def derive_seed(root: int, *tags) -> int:
    """Stable 32-bit integer seed for the same tuple space as derive_rng."""
    return int(np.random.SeedSequence(_seed_parts(root, *tags)).generate_state(1)[0])


# ---------------------------------------------------------------------------
# Configuration
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ModelConfig:
    """Frozen-policy architecture and behavior-cloning settings."""

    embed_dim: int = 8
    feature_dim: int = 32
    enc_hidden: int = 64
    head_hidden: int = 32
    bc_epochs: int = 1500
    bc_learning_rate: float = 3e-3
    bc_label_smoothing: float = 0.05
    bc_aug_shift_px: int = 1
    bc_aug_copies: int = 8
    bc_seed: int = 0

    def __post_init__(self) -> None:
        for name in ("embed_dim", "feature_dim", "enc_hidden", "head_hidden",
                     "bc_epochs"):
            if getattr(self, name) < 1:
                raise ConfigError(f"model.{name} must be >= 1")
        if self.bc_learning_rate <= 0:
            raise ConfigError("model.bc_learning_rate must be > 0")
        if not (0.0 <= self.bc_label_smoothing < 1.0):
            raise ConfigError("model.bc_label_smoothing must lie in [0, 1)")
        if self.bc_aug_shift_px < 0 or self.bc_aug_copies < 0:
            raise ConfigError("model.bc_aug_* settings must be >= 0")


@dataclass(frozen=True)
class EnvTemplate:
    """Shared environment settings; per-task layouts are drawn from it.

    Task task_id places gripper, target, goal, and n_clutter extra objects
    on distinct cells inside the margin region, deterministically from
    (layout_seed, task_id). max_span, when set, caps the expert path
    length cheb(gripper, target) + cheb(target, goal) by rejection.
    """

    grid_h: int = 10
    grid_w: int = 10
    cell_px: int = 1
    shift: ShiftSpec = field(default_factory=ShiftSpec)
    feedback_mode: str = "binary"
    action_dims: int = 4
    action_tokens: int = 16
    max_move: int = 2
    vocab: int = 16
    instr_len: int = 4
    n_clutter: int = 1
    place_margin: int = 2
    horizon_slack: int = 8
    max_span: Optional[int] = None
    layout_seed: int = 1234

    def __post_init__(self) -> None:
        if self.place_margin < 0:
            raise ConfigError("place_margin must be >= 0")
        if self.shift.kind == "pose_shift" and self.shift.max_cells > self.place_margin:
            raise ConfigError(
                f"pose_shift({self.shift.max_cells}) exceeds place_margin "
                f"{self.place_margin}; widen the margin")
        if self.n_clutter < 0 or self.horizon_slack < 0:
            raise ConfigError("n_clutter and horizon_slack must be >= 0")
        if self.max_span is not None and self.max_span < 2:
            raise ConfigError("max_span must be >= 2 when set")


@dataclass(frozen=True)
class ExperimentConfig:
    """Everything one experiment needs besides the trained snapshot."""

    variant: str = "pdf_full"
    env: EnvTemplate = field(default_factory=EnvTemplate)
    hp: HyperParams = field(default_factory=HyperParams)
    model: ModelConfig = field(default_factory=ModelConfig)
    ranges: AugmentRanges = field(default_factory=AugmentRanges)
    episodes: int = 50
    eval_rollouts: int = 50
    seeds: Tuple[int, ...] = tuple(range(10))
    n_tasks: int = 10
    vote_mode: str = "dim_wise"
    u_aggregate: str = "mean"
    identity_views: bool = False
    persist_buffer: bool = False
    adapt_during_eval: bool = False
    buffer_capacity: int = 8192

    def __post_init__(self) -> None:
        if self.variant not in VARIANTS:
            raise ConfigError(f"variant must be one of {VARIANTS}, got {self.variant!r}")
        if self.episodes < 1 or self.eval_rollouts < 1:
            raise ConfigError("episodes and eval_rollouts must be >= 1")
        if not self.seeds:
            raise ConfigError("seeds must be nonempty")
        if self.n_tasks < 1:
            raise ConfigError("n_tasks must be >= 1")
        if self.vote_mode not in perturb.VOTE_MODES:
            raise ConfigError(f"vote_mode must be one of {perturb.VOTE_MODES}")
        if self.u_aggregate not in ("mean", "max"):
            raise ConfigError("u_aggregate must be 'mean' or 'max'")
        if self.buffer_capacity < 1:
            raise ConfigError("buffer_capacity must be >= 1")

    def arch(self) -> ArchHeader:
        t = self.env
        return ArchHeader(
            h=t.grid_h * t.cell_px, w=t.grid_w * t.cell_px, c=3,
            vocab=t.vocab, instr_len=t.instr_len,
            embed_dim=self.model.embed_dim, feature_dim=self.model.feature_dim,
            action_dims=t.action_dims, action_tokens=t.action_tokens)


@dataclass(frozen=True)
class VariantFlags:
    use_views: bool
    use_head: bool
    do_adapt: bool
    kl_off: bool = False
    re_off: bool = False


_FLAGS: Dict[str, VariantFlags] = {
    "baseline": VariantFlags(use_views=False, use_head=False, do_adapt=False),
    "pdf_wo_df": VariantFlags(use_views=True, use_head=True, do_adapt=False),
    "pdf_wo_da": VariantFlags(use_views=True, use_head=True, do_adapt=True),
    "pdf_wo_kl": VariantFlags(use_views=True, use_head=True, do_adapt=True, kl_off=True),
    "pdf_wo_re": VariantFlags(use_views=True, use_head=True, do_adapt=True, re_off=True),
    "pdf_full": VariantFlags(use_views=True, use_head=True, do_adapt=True),
}


def variant_flags(name: str) -> VariantFlags:
    try:
        return _FLAGS[name]
    except KeyError:
        raise ConfigError(f"unknown variant {name!r}")


def effective_hp(config: ExperimentConfig) -> HyperParams:
    """Variant-adjusted hyperparameters (budget and loss-term overrides)."""
    hp = config.hp
    flags = variant_flags(config.variant)
    if config.variant == "pdf_wo_da":
        hp = replace(hp, n_max=0)
    if flags.kl_off:
        hp = replace(hp, kl_weight=0.0)
    return hp


# ---------------------------------------------------------------------------
# Task generation and behavior cloning
# ---------------------------------------------------------------------------

def make_task_config(template: EnvTemplate, task_id: int) -> EnvConfig:
    """Deterministic canonical layout for one task id, template shift attached."""
    rng = derive_rng(template.layout_seed, "layout", task_id)
    m = template.place_margin
    xs = range(m, template.grid_w - m)
    ys = range(m, template.grid_h - m)
    cells = [(x, y) for y in ys for x in xs]
    if len(cells) < 3 + template.n_clutter:
        raise ConfigError("margin region too small for the requested entities")

    def cheb(a, b):
        return max(abs(a[0] - b[0]), abs(a[1] - b[1]))

    for _ in range(64):
        picks = rng.choice(len(cells), size=3 + template.n_clutter, replace=False)
        grip, tgt, goal = (cells[int(p)] for p in picks[:3])
        span = cheb(grip, tgt) + cheb(tgt, goal)
        if template.max_span is None or span <= template.max_span:
            break
    else:
        raise ConfigError(
            f"could not draw a task layout with span <= {template.max_span}")

    n_kinds = 8
    target_kind = int(rng.integers(n_kinds))
    other = [k for k in range(n_kinds) if k != target_kind]
    objects = [ObjectSpec(kind=target_kind, x=tgt[0], y=tgt[1])]
    for i in range(template.n_clutter):
        kind = other[int(rng.integers(len(other)))]
        cx, cy = cells[int(picks[3 + i])]
        objects.append(ObjectSpec(kind=kind, x=cx, y=cy))

    expert_steps = -(-cheb(grip, tgt) // template.max_move) + 1 \
        + -(-cheb(tgt, goal) // template.max_move) + 1
    return EnvConfig(
        objects=tuple(objects),
        target_kind=target_kind,
        goal=goal,
        gripper=grip,
        grid_h=template.grid_h,
        grid_w=template.grid_w,
        cell_px=template.cell_px,
        horizon=expert_steps + template.horizon_slack,
        shift=template.shift,
        seed=0,
        feedback_mode=template.feedback_mode,
        action_dims=template.action_dims,
        action_tokens=template.action_tokens,
        max_move=template.max_move,
        vocab=template.vocab,
        instr_len=template.instr_len,
    )


def task_configs(config: ExperimentConfig) -> List[EnvConfig]:
    return [make_task_config(config.env, t) for t in range(config.n_tasks)]


def demos_for(config: ExperimentConfig) -> List[Demonstration]:
    """One scripted-expert demonstration per task, on canonical layouts."""
    demos = []
    for cfg in task_configs(config):
        canonical = replace(cfg, shift=ShiftSpec("none"))
        demos.append(scripted_expert(canonical))
    return demos


def train_bc_for(config: ExperimentConfig) -> PolicySnapshot:
    """Behavior-clone the frozen policy on this experiment's task set."""
    return train_bc(
        demos_for(config), config.arch(),
        seed=config.model.bc_seed,
        epochs=config.model.bc_epochs,
        learning_rate=config.model.bc_learning_rate,
        hidden=config.model.enc_hidden,
        label_smoothing=config.model.bc_label_smoothing,
        aug_shift_px=config.model.bc_aug_shift_px,
        aug_copies=config.model.bc_aug_copies)


# ---------------------------------------------------------------------------
# Episode pipeline
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class EpisodeOutcome:
    success: bool
    feedback: float
    steps: int
    actions: Tuple[Tuple[int, ...], ...]
    sum_uncertainty: float
    sum_budget: int


def run_episode(env: GridPickPlace, snapshot: PolicySnapshot,
                head: Optional[PerturbationHead], hp: HyperParams,
                flags: VariantFlags, *, vote_mode: str, u_aggregate: str,
                ranges: AugmentRanges, view_rng: np.random.Generator,
                buffer: Optional[RolloutBuffer] = None,
                identity_views: bool = False) -> EpisodeOutcome:
    """One closed-loop episode through the full decision pipeline.

    Per step: base logits of the original view set the uncertainty, the
    uncertainty sets the view budget, every view's (possibly perturbed)
    logits decode to a candidate, and the vote picks the executed action.
    When a buffer is given, every view's record is pushed with the
    executed action.
    """
    obs, instr = env.reset()
    actions: List[Tuple[int, ...]] = []
    sum_u = 0.0
    sum_n = 0
    t = 0
    done = False
    while not done:
        feat0 = policy.encode(snapshot, obs, instr)
        base0 = policy.lm_logits(snapshot, feat0)
        u = augment.uncertainty(base0, u_aggregate)
        n = augment.budget(u, hp.n_max, hp.rounding) if flags.use_views else 0
        if identity_views:
            _, views = augment.identity_views(obs, n)
        else:
            _, views = augment.generate_views(obs, n, view_rng, ranges)
        feats = [feat0]
        bases = [base0]
        for v in views:
            fv = policy.encode(snapshot, v, instr)
            feats.append(fv)
            bases.append(policy.lm_logits(snapshot, fv))
        if flags.use_head and head is not None:
            finals = [perturb.perturbed_logits(b, head, f, hp.perturb_scale)
                      for f, b in zip(feats, bases)]
        else:
            finals = bases
        act = perturb.vote(perturb.decode_candidates(finals), vote_mode)
        if buffer is not None:
            for j, (f, fin) in enumerate(zip(feats, finals)):
                buffer.push(RolloutRecord(
                    feature=f, final_logits=fin, executed_action=act,
                    timestep=t, view_index=j))
        obs, done = env.step(act)
        actions.append(tuple(int(v) for v in act.dims))
        sum_u += u
        sum_n += n
        t += 1
    return EpisodeOutcome(
        success=env.success,
        feedback=env.feedback().value,
        steps=t,
        actions=tuple(actions),
        sum_uncertainty=sum_u,
        sum_budget=sum_n,
    )


# ---------------------------------------------------------------------------
# Metrics
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class MetricsRow:
    variant: str
    seed: int
    task_id: int
    success_rate: float
    mean_uncertainty: float
    mean_budget: float
    episodes_adapted: int
    wall_time_ms: int


def _fmt(v: float) -> str:
    return f"{v:.6f}"


def emit_metrics(rows: Sequence[MetricsRow], path, fmt: str = "csv") -> None:
    """Write rows with fixed column order and 6-decimal fixed-point reals."""
    if not rows:
        raise ConfigError("no metrics rows to emit")
    if fmt not in ("csv", "jsonl"):
        raise ConfigError(f"format must be 'csv' or 'jsonl', got {fmt!r}")
    lines: List[str] = []
    if fmt == "csv":
        lines.append(",".join(METRICS_COLUMNS))
        for r in rows:
            lines.append(",".join([
                r.variant, str(r.seed), str(r.task_id),
                _fmt(r.success_rate), _fmt(r.mean_uncertainty),
                _fmt(r.mean_budget), str(r.episodes_adapted),
                str(r.wall_time_ms)]))
    else:
        for r in rows:
            lines.append(
                f'{{"variant": {json.dumps(r.variant)}, "seed": {r.seed}, '
                f'"task_id": {r.task_id}, "success_rate": {_fmt(r.success_rate)}, '
                f'"mean_uncertainty": {_fmt(r.mean_uncertainty)}, '
                f'"mean_budget": {_fmt(r.mean_budget)}, '
                f'"episodes_adapted": {r.episodes_adapted}, '
                f'"wall_time_ms": {r.wall_time_ms}}}')
    with open(path, "w", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


def read_metrics(path) -> List[MetricsRow]:
    """Parse a metrics file written by emit_metrics (either format)."""
    with open(path) as fh:
        text = fh.read()
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if not lines:
        raise ConfigError(f"metrics file {path} is empty")
    rows: List[MetricsRow] = []
    if lines[0].startswith("{"):
        dicts = [json.loads(ln) for ln in lines]
    else:
        header = lines[0].split(",")
        if tuple(header) != METRICS_COLUMNS:
            raise ConfigError(f"unexpected metrics header {header}")
        dicts = []
        for ln in lines[1:]:
            parts = ln.split(",")
            dicts.append(dict(zip(METRICS_COLUMNS, parts)))
    for d in dicts:
        rows.append(MetricsRow(
            variant=str(d["variant"]),
            seed=int(d["seed"]),
            task_id=int(d["task_id"]),
            success_rate=float(d["success_rate"]),
            mean_uncertainty=float(d["mean_uncertainty"]),
            mean_budget=float(d["mean_budget"]),
            episodes_adapted=int(d["episodes_adapted"]),
            wall_time_ms=int(d["wall_time_ms"]),
        ))
    return rows


def strip_wall_time(text: str) -> str:
    """Drop the wall_time_ms column/key so byte comparisons can ignore it."""
    out = []
    for ln in text.splitlines():
        if not ln.strip():
            continue
        if ln.startswith("{"):
            d = json.loads(ln)
            d.pop("wall_time_ms", None)
            out.append(json.dumps(d, sort_keys=True))
        else:
            parts = ln.split(",")
            if parts and parts[-1] != "":
                parts = parts[:-1]
            out.append(",".join(parts))
    return "\n".join(out)


# ---------------------------------------------------------------------------
# Variant execution
# ---------------------------------------------------------------------------

def _check_snapshot(config: ExperimentConfig, snapshot: PolicySnapshot) -> None:
    if snapshot.header != config.arch():
        raise ConfigError(
            f"snapshot architecture {snapshot.header} does not match the "
            f"experiment's {config.arch()}; retrain with `pdf train-bc`")


def run_seed_task(config: ExperimentConfig, snapshot: PolicySnapshot,
                  seed: int, task_id: int,
                  task_cfg: Optional[EnvConfig] = None) -> MetricsRow:
    """Adaptation phase then frozen evaluation for one (seed, task) cell."""
    t0 = time.perf_counter()
    flags = variant_flags(config.variant)
    hp = effective_hp(config)
    re_scale = 0.0 if flags.re_off else 1.0
    if task_cfg is None:
        task_cfg = make_task_config(config.env, task_id)

    head = None
    if flags.use_head:
        head = PerturbationHead.fresh(
            config.arch(), hidden=config.model.head_hidden,
            seed=derive_seed(seed, "head", task_id))
    buffer = RolloutBuffer(config.buffer_capacity)
    tracker = BaselineTracker(hp.baseline)

    episodes_adapted = 0
    if flags.do_adapt:
        for ep in range(config.episodes):
            env = GridPickPlace(replace(
                task_cfg, seed=derive_seed(seed, "adapt-env", task_id, ep)))
            out = run_episode(
                env, snapshot, head, hp, flags,
                vote_mode=config.vote_mode, u_aggregate=config.u_aggregate,
                ranges=config.ranges,
                view_rng=derive_rng(seed, "views", task_id, 0, ep),
                buffer=buffer, identity_views=config.identity_views)
            adapt(head, buffer, snapshot, out.feedback, tracker, hp,
                  derive_seed(seed, "update", task_id, ep),
                  re_scale=re_scale, clear_buffer=not config.persist_buffer)
            episodes_adapted += 1

    successes = 0
    sum_u = 0.0
    sum_n = 0
    steps = 0
    for i in range(config.eval_rollouts):
        env = GridPickPlace(replace(
            task_cfg, seed=derive_seed(seed, "eval-env", task_id, i)))
        eval_buffer = buffer if (config.adapt_during_eval and flags.do_adapt) else None
        out = run_episode(
            env, snapshot, head, hp, flags,
            vote_mode=config.vote_mode, u_aggregate=config.u_aggregate,
            ranges=config.ranges,
            view_rng=derive_rng(seed, "views", task_id, 1, i),
            buffer=eval_buffer, identity_views=config.identity_views)
        if eval_buffer is not None:
            adapt(head, buffer, snapshot, out.feedback, tracker, hp,
                  derive_seed(seed, "update-eval", task_id, i),
                  re_scale=re_scale, clear_buffer=not config.persist_buffer)
            episodes_adapted += 1
        successes += int(out.success)
        sum_u += out.sum_uncertainty
        sum_n += out.sum_budget
        steps += out.steps

    return MetricsRow(
        variant=config.variant,
        seed=seed,
        task_id=task_id,
        success_rate=successes / config.eval_rollouts,
        mean_uncertainty=sum_u / max(steps, 1),
        mean_budget=sum_n / max(steps, 1),
        episodes_adapted=episodes_adapted,
        wall_time_ms=int((time.perf_counter() - t0) * 1000),
    )


def run_variant(config: ExperimentConfig,
                snapshot: PolicySnapshot) -> List[MetricsRow]:
    """All (seed, task) cells of one variant, in deterministic order."""
    _check_snapshot(config, snapshot)
    tasks = task_configs(config)
    rows: List[MetricsRow] = []
    for seed in config.seeds:
        for task_id, task_cfg in enumerate(tasks):
            rows.append(run_seed_task(config, snapshot, seed, task_id, task_cfg))
    return rows


def budget_sweep(config: ExperimentConfig, snapshot: PolicySnapshot,
                 budgets: Sequence[int]) -> List[MetricsRow]:
    """pdf_full once per max-budget value; rows tagged variant@b<N>."""
    if not budgets:
        raise ConfigError("budgets must be nonempty")
    if any(b < 0 for b in budgets):
        raise ConfigError("budgets must be >= 0")
    rows: List[MetricsRow] = []
    for b in budgets:
        cfg = replace(config, variant="pdf_full", hp=replace(config.hp, n_max=b))
        for row in run_variant(cfg, snapshot):
            rows.append(replace(row, variant=f"pdf_full@b{b}"))
    return rows


def compare_voting(config: ExperimentConfig,
                   snapshot: PolicySnapshot) -> List[MetricsRow]:
    """The configured variant under both voting modes; rows tagged @mode."""
    rows: List[MetricsRow] = []
    for mode in perturb.VOTE_MODES:
        cfg = replace(config, vote_mode=mode)
        for row in run_variant(cfg, snapshot):
            rows.append(replace(row, variant=f"{row.variant}@{mode}"))
    return rows
