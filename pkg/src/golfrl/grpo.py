"""Group-relative advantages and the clipped token-level surrogate.

The surrogate is evaluated in one batched teacher-forced pass over every
scored trajectory; each trajectory is an :class:`ObjectiveItem` saying which
context to score under, what its advantage is and whether it is treated as
on-policy (clipped ratio) or off-policy (reshaped ratio).
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import Sequence

import numpy as np

from .core import GroupTooSmall, MissingBehavior, RolloutGroup, TokenSeq
from .policy import ForwardPass, GradAccumulator, PolicyParams


class AdvantageMode(str, Enum):
    GRPO = "grpo"
    DR_GRPO = "dr_grpo"


@dataclass(frozen=True)
class AdvantageSet:
    values: tuple[float, ...]
    mode: AdvantageMode

    def __iter__(self):
        return iter(self.values)

    def __len__(self):
        return len(self.values)

    def __getitem__(self, i):
        return self.values[i]


def group_advantages(rewards: Sequence[float], mode="dr_grpo") -> AdvantageSet:
    """r - mean, additionally divided by the population std in ``grpo`` mode.

    A zero std in ``grpo`` mode yields all-zero advantages.
    """
    mode = AdvantageMode(mode)
    r = np.asarray(rewards, dtype=np.float64)
    if r.size < 2:
        raise GroupTooSmall(f"need at least 2 rewards, got {r.size}")
    centered = r - r.mean()
    if mode is AdvantageMode.GRPO:
        std = r.std()
        centered = centered / std if std > 0 else np.zeros_like(r)
    return AdvantageSet(tuple(float(a) for a in centered), mode)


def clip_term(ratio: float, advantage: float, epsilon: float) -> float:
    """min(ratio·A, clip(ratio, 1-ε, 1+ε)·A)."""
    return min(ratio * advantage, min(max(ratio, 1.0 - epsilon), 1.0 + epsilon) * advantage)


def _clip_values(ratio: np.ndarray, adv: float, eps: float):
    """Elementwise clip_term and its derivative with respect to the ratio."""
    unclipped = ratio * adv
    clipped = np.clip(ratio, 1.0 - eps, 1.0 + eps) * adv
    use_raw = unclipped <= clipped
    return np.where(use_raw, unclipped, clipped), np.where(use_raw, adv, 0.0)


class ItemKind(str, Enum):
    ON = "on"
    OFF = "off"


@dataclass(frozen=True)
class ObjectiveItem:
    context: TokenSeq
    response: TokenSeq
    behavior_logprobs: np.ndarray
    advantage: float
    kind: ItemKind = ItemKind.ON
    role: str = "on"  # loss bucket: "on", "off" or "ref"


def reshape_ratio(u, lam: float = 0.1):
    """u / (u + λ): bounded, monotone reshaping of off-policy ratios."""
    return u / (u + lam)


@dataclass
class ObjectiveResult:
    value: float
    z: int
    parts: dict
    off_ratio_min: float = 0.0
    off_ratio_max: float = 0.0


def token_objective(params: PolicyParams, items: Sequence[ObjectiveItem], epsilon: float,
                    lam: float, acc: GradAccumulator | None, z: int | None = None,
                    clip_off_policy: bool = False) -> ObjectiveResult:
    """(1/Z) Σ_items Σ_t term_t, with gradients accumulated into ``acc``.

    On-policy tokens use the clipped ratio; off-policy tokens use the reshaped
    ratio f(r) without clipping unless ``clip_off_policy`` is set. Advantages
    and behavior log-probabilities are constants.
    """
    for it in items:
        if it.behavior_logprobs is None:
            raise MissingBehavior("trajectory has no behavior log-probabilities")
    if z is None:
        z = sum(len(it.response) for it in items)
    parts = {"on": 0.0, "off": 0.0, "ref": 0.0}
    if not items:
        return ObjectiveResult(0.0, z, parts)
    fwd = ForwardPass(params, [it.context for it in items], [it.response for it in items])
    total = 0.0
    weights = []
    off_ratios = []
    for i, it in enumerate(items):
        ratio = np.exp(fwd.logprobs(i) - it.behavior_logprobs)
        if it.kind is ItemKind.ON:
            vals, dratio = _clip_values(ratio, it.advantage, epsilon)
        else:
            off_ratios.append(ratio)
            shaped = reshape_ratio(ratio, lam)
            dshaped = lam / (ratio + lam) ** 2
            if clip_off_policy:
                vals, dclip = _clip_values(shaped, it.advantage, epsilon)
                dratio = dclip * dshaped
            else:
                vals = shaped * it.advantage
                dratio = it.advantage * dshaped
        s = float(vals.sum())
        total += s
        parts[it.role] += s
        # d ratio / d logπ = ratio
        weights.append(dratio * ratio / z)
    if acc is not None:
        fwd.backward(weights, acc)
    result = ObjectiveResult(total / z, z, {k: v / z for k, v in parts.items()})
    if off_ratios:
        allr = np.concatenate(off_ratios)
        result.off_ratio_min, result.off_ratio_max = float(allr.min()), float(allr.max())
    return result


def grpo_items(groups: Sequence[RolloutGroup], mode="dr_grpo", role: str = "on") -> list[ObjectiveItem]:
    items = []
    for g in groups:
        adv = group_advantages(g.rewards, mode)
        for m, a in zip(g.members, adv):
            items.append(ObjectiveItem(m.context, m.response, m.behavior_logprobs, a, ItemKind.ON, role))
    return items


def grpo_objective(groups: Sequence[RolloutGroup], params: PolicyParams, epsilon: float = 0.2,
                   mode="dr_grpo", acc: GradAccumulator | None = None) -> float:
    """Clipped surrogate over all groups, normalized by the batch token count."""
    for g in groups:
        for m in g.members:
            if m.behavior_logprobs is None:
                raise MissingBehavior("trajectory has no behavior log-probabilities")
    return token_objective(params, grpo_items(groups, mode), epsilon, 0.1, acc).value
