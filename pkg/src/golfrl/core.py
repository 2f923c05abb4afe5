"""Domain types and group bookkeeping shared across the package."""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Sequence

import numpy as np

TokenSeq = tuple[int, ...]


class GolfError(Exception):
    """Base class for every error raised by this package."""


class EmptyGroup(GolfError, ValueError):
    pass


class NonBinaryReward(GolfError, ValueError):
    pass


class BadTaskSpec(GolfError, ValueError):
    pass


class BadToken(GolfError, ValueError):
    pass


class BadShape(GolfError, ValueError):
    pass


class NonFiniteGradient(GolfError, FloatingPointError):
    pass


class GroupTooSmall(GolfError, ValueError):
    pass


class MissingBehavior(GolfError, ValueError):
    pass


class NoFailures(GolfError, ValueError):
    pass


class ContextOverflow(GolfError, ValueError):
    pass


class NoFailureSlot(GolfError, ValueError):
    pass


class BadProvenance(GolfError, ValueError):
    pass


class PromptMismatch(GolfError, ValueError):
    pass


class EmptyBatch(GolfError, ValueError):
    pass


class BadK(GolfError, ValueError):
    pass


class NoExamples(GolfError, ValueError):
    pass


class IoFailure(GolfError, OSError):
    pass


class Origin(str, Enum):
    ON_POLICY = "on_policy"
    OFF_POLICY_INJECTED = "off_policy_injected"


class CritiqueKind(str, Enum):
    SIMPLE = "simple"
    INDICATIVE_GROUND_TRUTH = "indicative_ground_truth"
    CONSTRAINT_REPORT = "constraint_report"


class GroupKind(str, Enum):
    GENERATION = "generation"
    REFINEMENT = "refinement"


class ContextKind(str, Enum):
    PROMPT = "prompt"
    REFINEMENT = "refinement"


def as_tokens(tokens: Sequence[int], vocab_size: int | None = None) -> TokenSeq:
    """Normalize to an immutable token tuple, checking ids against ``vocab_size``."""
    out = tuple(int(t) for t in tokens)
    if vocab_size is not None:
        for t in out:
            if t < 0 or t >= vocab_size:
                raise BadToken(f"token id {t} outside [0, {vocab_size})")
    return out


@dataclass(frozen=True)
class CritiqueText:
    kind: CritiqueKind
    tokens: TokenSeq


@dataclass(frozen=True, eq=False)
class TrajectoryRecord:
    """One sampled response together with the context it was sampled under.

    ``behavior_logprobs`` are the temperature-1 log-probabilities of each
    response token under the sampling-time parameters and ``context``.
    """

    context: TokenSeq
    context_kind: ContextKind
    response: TokenSeq
    behavior_logprobs: np.ndarray | None
    reward: float
    critique: CritiqueText
    origin: Origin = Origin.ON_POLICY

    def __post_init__(self):
        if self.behavior_logprobs is not None:
            lp = np.array(self.behavior_logprobs, dtype=np.float64)
            if lp.shape != (len(self.response),):
                raise BadShape(
                    f"{lp.shape[0] if lp.ndim else 0} behavior logprobs for "
                    f"{len(self.response)} response tokens"
                )
            lp.setflags(write=False)
            object.__setattr__(self, "behavior_logprobs", lp)
        if self.origin is Origin.OFF_POLICY_INJECTED and self.context_kind is not ContextKind.REFINEMENT:
            raise BadProvenance("injected trajectories must come from a refinement context")

    @property
    def context_id(self) -> str:
        return self.context_kind.value

    def as_injected(self) -> "TrajectoryRecord":
        return TrajectoryRecord(
            context=self.context,
            context_kind=self.context_kind,
            response=self.response,
            behavior_logprobs=self.behavior_logprobs,
            reward=self.reward,
            critique=self.critique,
            origin=Origin.OFF_POLICY_INJECTED,
        )


@dataclass(frozen=True)
class RolloutGroup:
    prompt: TokenSeq
    members: tuple[TrajectoryRecord, ...]
    group_kind: GroupKind = GroupKind.GENERATION
    hidden_target: TokenSeq = field(default=(), compare=False)

    def __post_init__(self):
        object.__setattr__(self, "members", tuple(self.members))

    @property
    def rewards(self) -> list[float]:
        return [m.reward for m in self.members]

    def __len__(self) -> int:
        return len(self.members)


def group_mean_reward(group: RolloutGroup) -> float:
    if not group.members:
        raise EmptyGroup("group has no members")
    return float(sum(group.rewards) / len(group.members))


def _check_binary(group: RolloutGroup) -> None:
    for r in group.rewards:
        if r != 0 and r != 1:
            raise NonBinaryReward(f"reward {r!r} is not in {{0, 1}}")


def failure_set(group: RolloutGroup) -> list[tuple[TokenSeq, CritiqueText]]:
    """Reward-0 members as (response, critique) pairs, in sampling order."""
    if not group.members:
        raise EmptyGroup("group has no members")
    _check_binary(group)
    return [(m.response, m.critique) for m in group.members if m.reward == 0]


def is_zero_reward_group(group: RolloutGroup) -> bool:
    if not group.members:
        raise EmptyGroup("group has no members")
    return all(m.reward == 0 for m in group.members)
