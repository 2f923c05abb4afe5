import numpy as np
import pytest

from golfrl.core import (BadProvenance, ContextKind, ContextOverflow, CritiqueKind, CritiqueText, GroupKind,
                         NoFailures, NoFailureSlot, Origin, PromptMismatch, RolloutGroup, TrajectoryRecord)
from golfrl.envs import FAILURE_MARKER, SEP, TaskKind, TaskSpec, generate_instance
from golfrl.golf import (TrainingBatch, _aug_items, aggregate_refinement_context, batch_objective, inject,
                         inject_best, joint_batch, mixed_objective, sample_refinement_group, should_inject,
                         successful_refinements)
from golfrl.grpo import ItemKind, group_advantages, grpo_objective
from golfrl.policy import GradAccumulator, init_params, logprobs

from oracles import (central_differences, make_group, max_rel_error, off_policy_member, perturbed, random_seq,
                     tiny_params)


def failures(k):
    return [((10 + i, 2), CritiqueText(CritiqueKind.INDICATIVE_GROUND_TRUTH, (4, 39, 20 + i))) for i in range(k)]


def test_aggregate_two_failures_mixed():
    fails = failures(2)
    ctx = aggregate_refinement_context((1, 37), fails, "mixed", cap=4, rng_seed=0)
    assert ctx.entries == tuple(fails)
    assert ctx.rendered == (1, 37, SEP, 10, SEP, 4, 39, 20, SEP, 11, SEP, 4, 39, 21)


def test_aggregate_caps_to_ordered_subset():
    fails = failures(6)
    for seed in range(20):
        ctx = aggregate_refinement_context((1,), fails, "mixed", cap=4, rng_seed=seed)
        idx = [fails.index(e) for e in ctx.entries]
        assert len(idx) == 4 and idx == sorted(idx)
    picks = {aggregate_refinement_context((1,), fails, "mixed", 4, s).entries for s in range(40)}
    assert len(picks) > 1


def test_aggregate_external_keeps_one_full_critique():
    fails = failures(3)
    ctx = aggregate_refinement_context((1,), fails, "external", rng_seed=5)
    assert len(ctx.entries) == 1 and ctx.entries[0] in fails


def test_aggregate_intra_and_simple_use_markers():
    fails = failures(3)
    intra = aggregate_refinement_context((1,), fails, "intra", rng_seed=0)
    assert [r for r, _ in intra.entries] == [r for r, _ in fails]
    assert all(c == FAILURE_MARKER for _, c in intra.entries)
    simple = aggregate_refinement_context((1,), fails, "simple", rng_seed=0)
    assert len(simple.entries) == 1 and simple.entries[0][1] == FAILURE_MARKER


def test_aggregate_errors():
    with pytest.raises(NoFailures):
        aggregate_refinement_context((1,), [], "mixed")
    with pytest.raises(ContextOverflow):
        aggregate_refinement_context((1,), failures(4), "mixed", max_context_len=10)
    with pytest.raises(ValueError):
        aggregate_refinement_context((1,), failures(1), "loud")


def test_sample_refinement_group():
    task = TaskSpec(TaskKind.EXACT_ANSWER_ARITHMETIC, {"max_operand": 4}, max_response_len=4)
    prompt, target = generate_instance(task, 0)
    ctx = aggregate_refinement_context(prompt, failures(2), "mixed", rng_seed=0)
    p = init_params(seed=0, out_scale=1.0)
    g = sample_refinement_group(p, ctx, 8, 1.0, 11, task, target)
    assert len(g) == 8 and g.group_kind is GroupKind.REFINEMENT
    assert all(m.context_id == "refinement" and m.context == ctx.rendered for m in g.members)
    assert set(g.rewards) <= {0.0, 1.0}
    again = sample_refinement_group(p, ctx, 8, 1.0, 11, task, target)
    assert [m.response for m in g.members] == [m.response for m in again.members]
    for m in g.members:
        np.testing.assert_allclose(logprobs(p, ctx.rendered, m.response), m.behavior_logprobs, atol=1e-12)


def test_successful_refinements():
    p = tiny_params(0)
    assert successful_refinements(make_group((1,), [(3,)] * 3, [0, 0, 0], p)) == []
    g = make_group((1,), [(3,), (4,), (5,)], [1, 0, 1], p)
    assert successful_refinements(g) == [g.members[0], g.members[2]]
    g = make_group((1,), [(3,), (4,)], [1, 1], p)
    assert successful_refinements(g) == list(g.members)


@pytest.mark.parametrize("s,tau,want", [(0.0, 1 / 8, True), (0.25, 1 / 8, False), (0.125, 0.125, False)])
def test_should_inject(s, tau, want):
    assert should_inject(s, tau) is want


def ref_group(p, prompt, rewards):
    ctx = tuple(prompt) + (SEP, 6, SEP, 4)
    return make_group(prompt, [(1 + i % 7,) for i in range(len(rewards))], rewards, p, context=ctx,
                      context_kind=ContextKind.REFINEMENT, group_kind=GroupKind.REFINEMENT)


def test_inject_all_zero_group():
    p = tiny_params(0)
    gen = make_group((1, 2), [(3,)] * 8, [0] * 8, p)
    ref = ref_group(p, (1, 2), [1, 0, 1, 1])
    aug, d = inject(gen, successful_refinements(ref), 4)
    assert d.triggered and len(aug) == 8
    off = [m for m in aug.members if m.origin is Origin.OFF_POLICY_INJECTED]
    assert len(off) == 1 and aug.members[d.replaced_index] is d.injected
    assert gen.members[d.replaced_index].reward == 0 and d.injected.reward == 1
    assert d.injected.context_kind is ContextKind.REFINEMENT
    assert sum(aug.rewards) / 8 > sum(gen.rewards) / 8
    adv = group_advantages(aug.rewards, "dr_grpo")
    assert adv[d.replaced_index] == 0.875
    assert all(a == -0.125 for i, a in enumerate(adv) if i != d.replaced_index)
    again, d2 = inject(gen, successful_refinements(ref), 4)
    assert d2.replaced_index == d.replaced_index and d2.injected.response == d.injected.response


def test_inject_without_successes_is_identity():
    p = tiny_params(0)
    gen = make_group((1, 2), [(3,)] * 4, [0] * 4, p)
    aug, d = inject(gen, [], 0)
    assert aug is gen and not d.triggered


def test_inject_needs_failure_slot():
    p = tiny_params(0)
    gen = make_group((1, 2), [(3,)] * 2, [1, 1], p)
    with pytest.raises(NoFailureSlot):
        inject(gen, successful_refinements(ref_group(p, (1, 2), [1])), 0)


def test_inject_best_prefers_success():
    p = tiny_params(0)
    gen = make_group((1,), [(3,)] * 4, [1, 0, 0, 1], p)
    aug, d = inject_best(gen, ref_group(p, (1,), [0, 1, 0]), 2)
    assert d.triggered and d.injected.response == (2,)
    _, d = inject_best(gen, ref_group(p, (1,), [0, 0]), 2)
    assert not d.triggered


def test_mixed_reduces_to_dr_grpo_bitwise():
    old = tiny_params(3)
    cur = perturbed(old, 9)
    rng = np.random.default_rng(3)
    groups = [make_group(random_seq(rng, 8, 1, 3), [random_seq(rng, 8, 1, 4) for _ in range(4)],
                         list(rng.integers(0, 2, 4)), old) for _ in range(3)]
    a, b = GradAccumulator(cur), GradAccumulator(cur)
    ja = mixed_objective(groups, cur, 0.2, 0.1, a)
    jb = grpo_objective(groups, cur, 0.2, "dr_grpo", b)
    assert ja == jb
    assert np.array_equal(a.flat(), b.flat())


def injected_instance(seed):
    old = tiny_params(seed)
    cur = perturbed(old, [seed, 2], 0.05)
    rng = np.random.default_rng(seed)
    prompt = random_seq(rng, 8, 1, 3)
    resps = [random_seq(rng, 8, 1, 4) for _ in range(4)]
    gen = make_group(prompt, resps, [0, 1, 0, 0], old)
    p_agg = prompt + (3,) + resps[0] + (3, 4)
    star = off_policy_member(p_agg, random_seq(rng, 8, 1, 4), old)
    members = list(gen.members)
    members[2] = star
    return old, cur, RolloutGroup(prompt, tuple(members))


def test_off_policy_ratio_uses_prompt_numerator():
    old, _, aug = injected_instance(0)
    items = _aug_items(aug)
    off = [it for it in items if it.kind is ItemKind.OFF]
    assert len(off) == 1 and off[0].context == aug.prompt
    star = aug.members[2]
    ratio = np.exp(logprobs(old, aug.prompt, star.response) - star.behavior_logprobs)
    assert not np.allclose(ratio, 1.0)


@pytest.mark.parametrize("seed", range(4))
@pytest.mark.parametrize("clip_off", [False, True])
def test_mixed_gradient_fd(seed, clip_off):
    _, cur, aug = injected_instance(seed)
    acc = GradAccumulator(cur)
    mixed_objective([aug], cur, 0.2, 0.1, acc, clip_off_policy=clip_off)
    num = central_differences(lambda q: mixed_objective([aug], q, 0.2, 0.1, clip_off_policy=clip_off), cur)
    assert max_rel_error(acc.flat(), num) < 1e-5


def test_off_policy_without_behavior_is_rejected():
    rec = TrajectoryRecord((1, 3), ContextKind.REFINEMENT, (5,), None, 1.0,
                           CritiqueText(CritiqueKind.SIMPLE, (5,)), Origin.OFF_POLICY_INJECTED)
    p = tiny_params(0)
    g = make_group((1,), [(3,)], [0], p)
    aug = RolloutGroup((1,), (rec,) + g.members)
    with pytest.raises(BadProvenance):
        mixed_objective([aug], p)


def test_joint_batch_structure():
    p = tiny_params(1)
    gen = make_group((1, 2), [(3,)] * 8, [0, 1, 0, 0, 0, 0, 1, 0], p)
    ref = ref_group(p, (1, 2), [1, 0, 0, 1, 1, 0, 0, 0])
    assert len(joint_batch(gen, None)) == 8 and len(joint_batch(gen, None).items()) == 8
    b = joint_batch(gen, ref)
    items = b.items()
    assert len(items) == 16
    assert abs(sum(it.advantage for it in items[:8])) < 1e-12
    assert abs(sum(it.advantage for it in items[8:])) < 1e-12
    assert {it.role for it in items[8:]} == {"ref"}
    with pytest.raises(PromptMismatch):
        joint_batch(gen, ref_group(p, (1, 5), [1, 0]))


def test_joint_batch_one_normalizer():
    p = tiny_params(2)
    gen = make_group((1, 2), [(3, 4), (5,)], [1, 0], p)
    ref = ref_group(p, (1, 2), [1, 0, 0])
    res = batch_objective([joint_batch(gen, ref)], p)
    assert res.z == 3 + 3


def test_joint_batch_uniform_rewards_zero_gradient():
    p = tiny_params(2)
    gen = make_group((1, 2), [(3,), (4,)], [0, 0], p)
    ref = ref_group(p, (1, 2), [1, 1])
    acc = GradAccumulator(p)
    batch_objective([joint_batch(gen, ref)], perturbed(p, 1), acc=acc)
    assert acc.is_zero()


def test_training_batch_without_ref():
    p = tiny_params(2)
    gen = make_group((1,), [(3,), (4,)], [1, 0], p)
    assert TrainingBatch(gen).items()[0].advantage == 0.5
