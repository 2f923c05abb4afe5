"""Training and evaluation measurements."""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, fields
from typing import Sequence

import numpy as np

from .core import BadK, EmptyBatch, Origin, RolloutGroup, is_zero_reward_group
from .policy import ForwardPass, PolicyParams


@dataclass
class MetricsRecord:
    step: int
    mean_reward: float
    zero_reward_ratio: float
    entropy: float
    injection_rate: float
    on_loss: float
    off_loss: float
    ref_loss: float
    ref_reward: float = 0.0
    off_ratio_min: float = 0.0
    off_ratio_max: float = 0.0

    def __post_init__(self):
        for f in fields(self):
            v = getattr(self, f.name)
            if not math.isfinite(v):
                raise ValueError(f"metric {f.name} is not finite: {v}")
        for name in ("zero_reward_ratio", "injection_rate"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ValueError(f"{name} outside [0, 1]")

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=False)

    @classmethod
    def from_json(cls, line: str) -> "MetricsRecord":
        return cls(**json.loads(line))


def zero_reward_ratio(groups: Sequence[RolloutGroup]) -> float:
    """Fraction of groups whose members all scored 0."""
    if not groups:
        raise EmptyBatch("no groups")
    return sum(is_zero_reward_group(g) for g in groups) / len(groups)


def batch_entropy(params: PolicyParams, groups: Sequence[RolloutGroup]) -> float:
    """Mean over on-policy trajectories of the summed per-step entropy."""
    trajs = [m for g in groups for m in g.members if m.origin is Origin.ON_POLICY]
    if not trajs:
        return 0.0
    fwd = ForwardPass(params, [m.context for m in trajs], [m.response for m in trajs])
    return float(np.mean([fwd.entropies(i).sum() for i in range(len(trajs))]))


def pass_at_k(n: int, c: int, k: int) -> float:
    """Unbiased pass@k: 1 - C(n-c, k) / C(n, k), in product form."""
    if k > n or k < 1:
        raise BadK(f"k={k} not in [1, n={n}]")
    if not 0 <= c <= n:
        raise ValueError(f"c={c} not in [0, {n}]")
    if n - c < k:
        return 1.0
    prod = 1.0
    for i in range(n - c + 1, n + 1):
        prod *= 1.0 - k / i
    return 1.0 - prod


def avg_at_n(rewards: Sequence[float]) -> float:
    if len(rewards) < 1:
        raise ValueError("need at least one sample")
    return float(sum(rewards) / len(rewards))
