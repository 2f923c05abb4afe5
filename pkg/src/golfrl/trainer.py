"""Per-step training algorithm, experiment runner, evaluation and ablations."""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .checkpoint import load_checkpoint, save_checkpoint
from .config import TrainConfig
from .core import GroupKind, IoFailure, failure_set, group_mean_reward
from .envs import TaskSpec, generate_instance, verify
from .golf import (TrainingBatch, aggregate_refinement_context, batch_objective, inject, inject_best,
                   joint_batch, sample_groups, should_inject, successful_refinements)
from .grpo import grpo_items, token_objective
from .metrics import MetricsRecord, avg_at_n, batch_entropy, pass_at_k, zero_reward_ratio
from .policy import GradAccumulator, OptimizerState, PolicyParams, adam_step, init_params, sample_batch
from .sft import SftExample, sft_loss_and_grad

log = logging.getLogger(__name__)

# rng stream tags; training and evaluation instances never share a stream
_TRAIN_INST, _EVAL_INST, _GEN, _REF, _AGG, _INJ, _EVAL_SAMPLE, _INIT = range(1, 9)


def _rng(cfg: TrainConfig, tag: int, *key: int) -> np.random.Generator:
    return np.random.default_rng([cfg.seed, tag, *key])


def train_instances(cfg: TrainConfig, step: int, task: TaskSpec | None = None):
    task = task or cfg.task_spec()
    return [generate_instance(task, [cfg.seed, _TRAIN_INST, step, i]) for i in range(cfg.prompts_per_step)]


def heldout_instances(cfg: TrainConfig, count: int, task: TaskSpec | None = None):
    task = task or cfg.task_spec()
    return [generate_instance(task, [cfg.seed, _EVAL_INST, j]) for j in range(count)]


def initial_state(cfg: TrainConfig) -> tuple[PolicyParams, OptimizerState]:
    params = init_params(cfg.vocab_size, cfg.d_emb, cfg.d_h, seed=[cfg.seed, _INIT], out_scale=cfg.init_out_scale)
    state = OptimizerState.for_params(params, cfg.lr, cfg.beta1, cfg.beta2, cfg.adam_eps)
    return params, state


@dataclass
class StepOutput:
    metrics: MetricsRecord
    gen_groups: list
    batches: list
    sft_examples: list


def _needs_refinement(cfg: TrainConfig) -> bool:
    if cfg.algorithm != "golf":
        return False
    if cfg.offpolicy == "sft":
        return cfg.injection != "never"
    return cfg.joint_refinement or cfg.injection != "never"


def train_step(cfg: TrainConfig, params: PolicyParams, params_old: PolicyParams, state: OptimizerState,
               step: int) -> StepOutput:
    """One sampled batch, one optimizer update.

    All sampling and behavior log-probabilities come from ``params_old``; only
    the final ``adam_step`` mutates ``params``.
    """
    task = cfg.task_spec()
    insts = train_instances(cfg, step, task)
    prompts = [p for p, _ in insts]
    targets = [t for _, t in insts]
    gen = sample_groups(params_old, task, prompts, targets, prompts, cfg.n, cfg.temperature,
                        _rng(cfg, _GEN, step))
    mean_reward = float(np.mean([group_mean_reward(g) for g in gen]))
    zero_ratio = zero_reward_ratio(gen)
    entropy = batch_entropy(params_old, gen)

    refs: dict[int, object] = {}
    if _needs_refinement(cfg):
        ctx_idx, ctxs = [], []
        for i, g in enumerate(gen):
            fails = failure_set(g)
            if not fails:
                continue
            ctx = aggregate_refinement_context(g.prompt, fails, cfg.feedback_mode, cfg.failure_cap,
                                               [cfg.seed, _AGG, step, i], cfg.max_context_len)
            ctx_idx.append(i)
            ctxs.append(ctx.rendered)
        ref_groups = sample_groups(params_old, task, [prompts[i] for i in ctx_idx], [targets[i] for i in ctx_idx],
                                   ctxs, cfg.n, cfg.temperature, _rng(cfg, _REF, step), GroupKind.REFINEMENT)
        refs = dict(zip(ctx_idx, ref_groups))

    batches, items, sft_examples = [], None, []
    n_injected = 0
    if cfg.algorithm == "golf":
        for i, g in enumerate(gen):
            ref = refs.get(i)
            aug, decision = g, None
            if ref is not None:
                inj_seed = [cfg.seed, _INJ, step, i]
                if cfg.injection == "adaptive" and should_inject(group_mean_reward(g), cfg.effective_tau):
                    aug, decision = inject(g, successful_refinements(ref), inj_seed)
                elif cfg.injection == "always":
                    aug, decision = inject_best(g, ref, inj_seed)
            triggered = decision is not None and decision.triggered
            n_injected += triggered
            if cfg.offpolicy == "sft":
                if triggered:
                    sft_examples.append(SftExample(g.prompt, decision.injected.response))
                batches.append(TrainingBatch(g))
            else:
                batches.append(joint_batch(aug, ref if cfg.joint_refinement else None))
    else:
        items = grpo_items(gen, cfg.algorithm)

    acc = GradAccumulator(params)
    if items is not None:
        res = token_objective(params, items, cfg.epsilon, cfg.lam, acc)
    else:
        res = batch_objective(batches, params, cfg.epsilon, cfg.lam, acc, cfg.clip_off_policy)
    off_loss = -res.parts["off"]
    if sft_examples:
        off_loss += sft_loss_and_grad(params, sft_examples, cfg.sft_coef, acc)
    if not math.isfinite(res.value) or not all(np.isfinite(g).all() for g in acc.tensors()):
        dump = {"step": step, "objective": res.value, "parts": res.parts}
        raise FloatingPointError(f"non-finite loss or gradient: {json.dumps(dump, default=str)}")
    adam_step(params, acc, state)

    ref_rewards = [r for g in refs.values() for r in g.rewards]
    metrics = MetricsRecord(
        step=step,
        mean_reward=mean_reward,
        zero_reward_ratio=zero_ratio,
        entropy=entropy,
        injection_rate=n_injected / len(gen),
        on_loss=-res.parts["on"],
        off_loss=off_loss,
        ref_loss=-res.parts["ref"],
        ref_reward=float(np.mean(ref_rewards)) if ref_rewards else 0.0,
        off_ratio_min=res.off_ratio_min,
        off_ratio_max=res.off_ratio_max,
    )
    return StepOutput(metrics, gen, batches, sft_examples)


def train(cfg: TrainConfig, params: PolicyParams | None = None, state: OptimizerState | None = None,
          start_step: int = 0, steps: int | None = None, on_step=None):
    """In-memory training loop; returns (params, state, metrics list)."""
    if params is None:
        params, state = initial_state(cfg)
    history = []
    end = cfg.steps if steps is None else start_step + steps
    for step in range(start_step, end):
        out = train_step(cfg, params, params.copy(), state, step)
        history.append(out.metrics)
        if on_step is not None:
            on_step(step, params, state, out)
    return params, state, history


def eval_pass_at_k(params: PolicyParams, task: TaskSpec, n: int, ks: Sequence[int], instances,
                   seed=0, temperature: float = 1.0) -> dict:
    """Sample ``n`` responses per held-out instance; average pass@k over instances."""
    if n < max(ks):
        raise ValueError("n must be at least max(k)")
    prompts = [p for p, _ in instances]
    flat = [p for p in prompts for _ in range(n)]
    draws = sample_batch(params, flat, task.max_response_len, temperature, np.random.default_rng(seed))
    counts, rewards = [], []
    for j, (prompt, target) in enumerate(instances):
        rs = [verify(task, prompt, target, resp).reward for resp, _ in draws[j * n:(j + 1) * n]]
        counts.append(sum(rs))
        rewards.extend(rs)
    table = {f"pass@{k}": float(np.mean([pass_at_k(n, c, k) for c in counts])) for k in ks}
    table["avg@n"] = avg_at_n(rewards)
    table["n"] = n
    table["instances"] = len(instances)
    return table


def evaluate(cfg: TrainConfig, params: PolicyParams) -> dict:
    task = cfg.task_spec()
    return eval_pass_at_k(params, task, cfg.eval_samples, cfg.ks, heldout_instances(cfg, cfg.eval_instances, task),
                          seed=[cfg.seed, _EVAL_SAMPLE])


def _write_header(path: Path, cfg: TrainConfig) -> None:
    lines = ["# golfrl run", "# tau_effective = %r" % cfg.effective_tau] + cfg.to_text().splitlines()
    path.write_text("\n".join(lines) + "\n")


def run_experiment(cfg: TrainConfig, out_dir, resume_from=None, evaluate_final: bool = True) -> Path:
    """Train with persistence: config snapshot, JSONL metrics, checkpoints, report.

    With ``resume_from`` the run continues from the checkpoint's step; the
    metrics log is truncated to that step before appending.
    """
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
        (out / "config.txt").write_text(cfg.to_text())
        _write_header(out / "run.log", cfg)
    except OSError as exc:
        raise IoFailure(f"cannot write run directory {out}: {exc}") from exc
    metrics_path = out / "metrics.jsonl"
    if resume_from is not None:
        params, state, start = load_checkpoint(resume_from)
        kept = metrics_path.read_text().splitlines()[:start] if metrics_path.exists() else []
        metrics_path.write_text("".join(line + "\n" for line in kept))
    else:
        params, state = initial_state(cfg)
        start = 0
        metrics_path.write_text("")

    with open(metrics_path, "a", encoding="utf-8") as fh:
        def on_step(step, params, state, output):
            fh.write(output.metrics.to_json() + "\n")
            fh.flush()
            done = step + 1
            if cfg.checkpoint_every and done % cfg.checkpoint_every == 0:
                save_checkpoint(out / f"ckpt_{done:06d}.bin", params, state, done)

        params, state, _ = train(cfg, params, state, start_step=start, steps=cfg.steps - start, on_step=on_step)
    save_checkpoint(out / "final.bin", params, state, cfg.steps)
    if evaluate_final:
        report = evaluate(cfg, params)
        (out / "report.json").write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")
    return out


def read_metrics(run_dir) -> list[MetricsRecord]:
    path = Path(run_dir) / "metrics.jsonl"
    return [MetricsRecord.from_json(line) for line in path.read_text().splitlines() if line.strip()]


def steps_to_threshold(history: Sequence[MetricsRecord], threshold: float) -> float:
    """First step (1-based count) whose batch mean reward reaches ``threshold``; inf if never."""
    for rec in history:
        if rec.mean_reward >= threshold:
            return float(rec.step + 1)
    return math.inf


def summarize_run(history: Sequence[MetricsRecord], cfg: TrainConfig) -> dict:
    window = [r for r in history if r.step >= cfg.window_start] or list(history)
    tail = max(1, len(history) // 10)
    return {
        "final_mean_reward": float(np.mean([r.mean_reward for r in history[-tail:]])) if history else 0.0,
        "steps_to_threshold": steps_to_threshold(history, cfg.reward_threshold),
        "mean_zero_reward_ratio": float(np.mean([r.zero_reward_ratio for r in window])) if window else 0.0,
        "mean_entropy": float(np.mean([r.entropy for r in window])) if window else 0.0,
    }


ABLATION_VARIANTS = {
    "golf-mixed": dict(algorithm="golf"),
    "golf-external-only": dict(algorithm="golf", feedback_mode="external"),
    "golf-intra-only": dict(algorithm="golf", feedback_mode="intra"),
    "golf-always-inject": dict(algorithm="golf", injection="always"),
    "golf-sft": dict(algorithm="golf", offpolicy="sft"),
    "dr_grpo": dict(algorithm="dr_grpo"),
}


def variant_config(base: TrainConfig, variant: str, seed: int) -> TrainConfig:
    overrides = {"algorithm": "golf", "feedback_mode": "mixed", "injection": "adaptive", "offpolicy": "mixed_rl"}
    overrides.update(ABLATION_VARIANTS[variant])
    return base.replace(seed=seed, **overrides)


def summarize_suite(out_dir, variants: Sequence[str] | None = None) -> str:
    """Rebuild the comparison table from the stored metrics logs."""
    out = Path(out_dir)
    variants = list(variants or ABLATION_VARIANTS)
    from .config import load_config

    rows = {}
    for v in variants:
        runs = sorted(p for p in out.glob(f"{v}__seed*") if p.is_dir())
        per_seed = []
        for run in runs:
            cfg = load_config(run / "config.txt")
            per_seed.append(summarize_run(read_metrics(run), cfg))
        rows[v] = {
            key: float(np.median([s[key] for s in per_seed])) if per_seed else math.nan
            for key in ("final_mean_reward", "steps_to_threshold", "mean_zero_reward_ratio", "mean_entropy")
        }
        rows[v]["seeds"] = len(per_seed)
    header = f"{'variant':<22}{'final_reward':>14}{'steps_to_thr':>14}{'zero_ratio':>12}{'entropy':>10}{'seeds':>7}"
    lines = [header]
    for v, r in rows.items():
        lines.append(f"{v:<22}{r['final_mean_reward']:>14.4f}{r['steps_to_threshold']:>14.1f}"
                     f"{r['mean_zero_reward_ratio']:>12.4f}{r['mean_entropy']:>10.4f}{r['seeds']:>7d}")
    table = "\n".join(lines) + "\n"
    (out / "summary.txt").write_text(table)
    (out / "summary.json").write_text(json.dumps(rows, indent=2, sort_keys=True) + "\n")
    return table


def run_ablation_suite(base: TrainConfig, seeds: Sequence[int], out_dir,
                       variants: Sequence[str] | None = None) -> str:
    if len(seeds) < 3:
        raise ValueError("the ablation suite needs at least 3 seeds")
    variants = list(variants or ABLATION_VARIANTS)
    out = Path(out_dir)
    for v in variants:
        for seed in seeds:
            run_dir = out / f"{v}__seed{seed}"
            log.info("ablation %s seed %d", v, seed)
            run_experiment(variant_config(base, v, seed), run_dir, evaluate_final=False)
    return summarize_suite(out, variants)
