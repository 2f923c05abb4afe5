"""Group-level feedback refinement with adaptive off-policy injection.

Per prompt: failed attempts and their critiques are aggregated into one
refinement context, a refinement group is sampled under it, and when the
generation group is in a low-reward regime one successful refinement replaces
a failed member. The augmented group is optimized with a mixed on/off-policy
objective, jointly with the refinement group itself.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .core import (BadProvenance, ContextKind, ContextOverflow, CritiqueText, GroupKind,
                   NoFailures, NoFailureSlot, Origin, PromptMismatch, RolloutGroup,
                   TokenSeq, TrajectoryRecord)
from .envs import FAILURE_MARKER, FEEDBACK_MODES, SEP, TaskSpec, strip_eos, verify
from .grpo import (ItemKind, ObjectiveItem, ObjectiveResult, group_advantages, reshape_ratio,
                   token_objective)
from .policy import GradAccumulator, PolicyParams, sample_batch

__all__ = [
    "RefinementContext", "InjectionDecision", "TrainingBatch", "aggregate_refinement_context",
    "sample_groups", "sample_refinement_group", "successful_refinements", "should_inject",
    "inject", "inject_best", "reshape_ratio", "mixed_objective", "joint_batch", "batch_objective",
]


@dataclass(frozen=True)
class RefinementContext:
    prompt: TokenSeq
    entries: tuple[tuple[TokenSeq, CritiqueText], ...]
    rendered: TokenSeq


def _render(prompt: TokenSeq, entries) -> TokenSeq:
    out = list(prompt)
    for response, critique in entries:
        out.append(SEP)
        out.extend(strip_eos(response))
        out.append(SEP)
        out.extend(critique.tokens)
    return tuple(out)


def aggregate_refinement_context(prompt: TokenSeq, failures: Sequence[tuple[TokenSeq, CritiqueText]],
                                 mode: str = "mixed", cap: int = 4, rng_seed=None,
                                 max_context_len: int = 128) -> RefinementContext:
    """Build the refinement prompt from a group's failures.

    ``mixed`` keeps up to ``cap`` attempts with critiques, ``intra`` the same
    attempts with bare failure markers, ``external`` one attempt with its
    critique and ``simple`` one attempt with a bare marker. Subsets are drawn
    uniformly without replacement and kept in sampling order.
    """
    if mode not in FEEDBACK_MODES:
        raise ValueError(f"unknown feedback mode {mode!r}")
    if not failures:
        raise NoFailures("cannot aggregate an empty failure set")
    rng = np.random.default_rng(rng_seed)
    keep = 1 if mode in ("external", "simple") else cap
    if len(failures) > keep:
        idx = np.sort(rng.choice(len(failures), size=keep, replace=False))
        chosen = [failures[i] for i in idx]
    else:
        chosen = list(failures)
    if mode in ("intra", "simple"):
        chosen = [(resp, FAILURE_MARKER) for resp, _ in chosen]
    entries = tuple((tuple(r), c) for r, c in chosen)
    rendered = _render(tuple(prompt), entries)
    if len(rendered) > max_context_len:
        raise ContextOverflow(f"refinement context of {len(rendered)} tokens exceeds {max_context_len}")
    return RefinementContext(tuple(prompt), entries, rendered)


def sample_groups(params: PolicyParams, task: TaskSpec, prompts: Sequence[TokenSeq],
                  targets: Sequence[TokenSeq], contexts: Sequence[TokenSeq], n: int,
                  temperature: float, rng, group_kind: GroupKind = GroupKind.GENERATION) -> list[RolloutGroup]:
    """Sample and verify ``n`` responses per context in one batched call."""
    if not contexts:
        return []
    flat = [c for c in contexts for _ in range(n)]
    draws = sample_batch(params, flat, task.max_response_len, temperature, rng)
    ctx_kind = ContextKind.PROMPT if group_kind is GroupKind.GENERATION else ContextKind.REFINEMENT
    groups = []
    for gi, (prompt, target, ctx) in enumerate(zip(prompts, targets, contexts)):
        members = []
        for response, lp in draws[gi * n:(gi + 1) * n]:
            verdict = verify(task, prompt, target, response)
            members.append(TrajectoryRecord(tuple(ctx), ctx_kind, response, lp,
                                            float(verdict.reward), verdict.critique))
        groups.append(RolloutGroup(tuple(prompt), tuple(members), group_kind, tuple(target)))
    return groups


def sample_refinement_group(params_old: PolicyParams, ctx: RefinementContext, n: int, temperature: float,
                            rng_seed, task: TaskSpec, hidden_target: TokenSeq) -> RolloutGroup:
    return sample_groups(params_old, task, [ctx.prompt], [hidden_target], [ctx.rendered], n,
                         temperature, rng_seed, GroupKind.REFINEMENT)[0]


def successful_refinements(group: RolloutGroup) -> list[TrajectoryRecord]:
    return [m for m in group.members if m.reward == 1]


def should_inject(s: float, tau: float) -> bool:
    return s < tau


@dataclass(frozen=True)
class InjectionDecision:
    triggered: bool
    replaced_index: int | None = None
    injected: TrajectoryRecord | None = None


def _replace(group: RolloutGroup, chosen: TrajectoryRecord, rng) -> tuple[RolloutGroup, InjectionDecision]:
    slots = [i for i, m in enumerate(group.members) if m.reward == 0]
    if not slots:
        raise NoFailureSlot("generation group has no failed member to replace")
    slot = slots[int(rng.integers(len(slots)))]
    injected = chosen.as_injected()
    members = list(group.members)
    members[slot] = injected
    aug = RolloutGroup(group.prompt, tuple(members), group.group_kind, group.hidden_target)
    return aug, InjectionDecision(True, slot, injected)


def inject(group: RolloutGroup, successes: Sequence[TrajectoryRecord], rng_seed=None):
    """Replace one uniformly chosen failure with one uniformly chosen success."""
    if not successes:
        return group, InjectionDecision(False)
    rng = np.random.default_rng(rng_seed)
    chosen = successes[int(rng.integers(len(successes)))]
    return _replace(group, chosen, rng)


def inject_best(group: RolloutGroup, ref_group: RolloutGroup, rng_seed=None):
    """Always-inject variant: the highest-reward refinement (ties broken at
    random) replaces a failure whenever one exists."""
    rewards = np.array(ref_group.rewards)
    if not len(rewards) or rewards.max() <= 0 or not any(m.reward == 0 for m in group.members):
        return group, InjectionDecision(False)
    rng = np.random.default_rng(rng_seed)
    best = np.flatnonzero(rewards == rewards.max())
    chosen = ref_group.members[int(best[int(rng.integers(len(best)))])]
    return _replace(group, chosen, rng)


def _aug_items(group: RolloutGroup) -> list[ObjectiveItem]:
    adv = group_advantages(group.rewards, "dr_grpo")
    items = []
    for m, a in zip(group.members, adv):
        if m.origin is Origin.OFF_POLICY_INJECTED:
            if m.context_kind is not ContextKind.REFINEMENT or m.behavior_logprobs is None:
                raise BadProvenance("injected member lacks refinement-context behavior log-probabilities")
            # numerator conditions on the original prompt, denominator was recorded under p_agg
            items.append(ObjectiveItem(group.prompt, m.response, m.behavior_logprobs, a, ItemKind.OFF, "off"))
        else:
            items.append(ObjectiveItem(m.context, m.response, m.behavior_logprobs, a, ItemKind.ON, "on"))
    return items


def mixed_objective(groups: Sequence[RolloutGroup], params: PolicyParams, epsilon: float = 0.2,
                    lam: float = 0.1, acc: GradAccumulator | None = None,
                    clip_off_policy: bool = False) -> float:
    items = [it for g in groups for it in _aug_items(g)]
    return token_objective(params, items, epsilon, lam, acc, clip_off_policy=clip_off_policy).value


@dataclass(frozen=True)
class TrainingBatch:
    """Augmented generation group plus (optionally) its refinement group."""

    aug: RolloutGroup
    ref: RolloutGroup | None = None

    def items(self) -> list[ObjectiveItem]:
        items = _aug_items(self.aug)
        if self.ref is not None:
            adv = group_advantages(self.ref.rewards, "dr_grpo")
            for m, a in zip(self.ref.members, adv):
                items.append(ObjectiveItem(m.context, m.response, m.behavior_logprobs, a, ItemKind.ON, "ref"))
        return items

    def __len__(self) -> int:
        return len(self.aug) + (len(self.ref) if self.ref is not None else 0)


def joint_batch(aug: RolloutGroup, ref: RolloutGroup | None) -> TrainingBatch:
    if ref is not None and tuple(ref.prompt) != tuple(aug.prompt):
        raise PromptMismatch("refinement group was built for a different prompt")
    return TrainingBatch(aug, ref)


def batch_objective(batches: Sequence[TrainingBatch], params: PolicyParams, epsilon: float = 0.2,
                    lam: float = 0.1, acc: GradAccumulator | None = None,
                    clip_off_policy: bool = False) -> ObjectiveResult:
    """Joint objective over all batches of a step with one token normalizer."""
    items = [it for b in batches for it in b.items()]
    return token_objective(params, items, epsilon, lam, acc, clip_off_policy=clip_off_policy)
