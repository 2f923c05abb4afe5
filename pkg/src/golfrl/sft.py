"""Supervised imitation of successful refinements (the SFT ablation)."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .core import NoExamples, TokenSeq
from .policy import ForwardPass, GradAccumulator, PolicyParams


@dataclass(frozen=True)
class SftExample:
    context: TokenSeq  # the original prompt, not the refinement prompt
    target: TokenSeq


def sft_loss_and_grad(params: PolicyParams, examples: Sequence[SftExample], coefficient: float = 0.1,
                      acc: GradAccumulator | None = None) -> float:
    """-coef * mean_examples(mean_tokens log π(target | context)).

    ``acc`` receives the gradient of the negated loss, i.e. the ascent
    direction, matching the sign convention of the RL objectives.
    """
    if not examples:
        raise NoExamples("no SFT examples")
    fwd = ForwardPass(params, [e.context for e in examples], [e.target for e in examples])
    n = len(examples)
    means = [float(fwd.logprobs(i).mean()) for i in range(n)]
    loss = -coefficient * float(np.mean(means))
    if acc is not None and coefficient != 0.0:
        weights = [np.full(len(e.target), coefficient / (n * len(e.target))) for e in examples]
        fwd.backward(weights, acc)
    return loss
