import itertools

import numpy as np
import pytest
from hypothesis import given, strategies as st

from golfrl.core import BadTaskSpec, CritiqueKind, CritiqueText
from golfrl.envs import (BOS, DIGIT0, EOS, EQ, FAIL, FAILURE_MARKER, GT, LETTERS, NEED, OK, PLUS, T_ARITH,
                         T_UNIQUE, TaskKind, TaskSpec, Verdict, critique_for_mode, encode_int,
                         generate_instance, verify)

UNIQUE3 = TaskSpec(TaskKind.UNIQUE_SYMBOL_COUNT, {"k_min": 3, "k_max": 3})
ARITH = TaskSpec(TaskKind.EXACT_ANSWER_ARITHMETIC, {"max_operand": 4})
SORT = TaskSpec(TaskKind.SORTED_OUTPUT, {"list_len": 3, "alphabet": 4})


def d(n):
    return DIGIT0 + n


def test_unique_prompt_structure():
    prompt, target = generate_instance(UNIQUE3, 0)
    assert prompt == (BOS, T_UNIQUE, NEED, d(3))
    assert target == (d(3),)


def test_arith_prompt_for_two_plus_three():
    found = None
    for seed in range(500):
        prompt, target = generate_instance(ARITH, seed)
        if prompt[2:5] == (d(2), PLUS, d(3)):
            found = (prompt, target)
            break
    assert found is not None
    assert found[0] == (BOS, T_ARITH, d(2), PLUS, d(3), EQ)
    assert found[1] == (d(5),)


@pytest.mark.parametrize("task", [UNIQUE3, ARITH, SORT])
def test_generate_deterministic_and_fits(task):
    for seed in range(50):
        a = generate_instance(task, seed)
        assert a == generate_instance(task, seed)
        assert len(a[0]) <= task.max_prompt_len


@pytest.mark.parametrize("kind,diff,kw", [
    (TaskKind.UNIQUE_SYMBOL_COUNT, {"k_min": 3, "k_max": 20}, {}),
    (TaskKind.UNIQUE_SYMBOL_COUNT, {"k_min": 5, "k_max": 5}, {"max_response_len": 4}),
    (TaskKind.EXACT_ANSWER_ARITHMETIC, {"max_operand": 99}, {"max_response_len": 2}),
    (TaskKind.EXACT_ANSWER_ARITHMETIC, {"max_operand": 4}, {"vocab_size": 16}),
    (TaskKind.SORTED_OUTPUT, {"list_len": 12, "alphabet": 4}, {}),
    (TaskKind.SORTED_OUTPUT, {"list_len": 2, "alphabet": 40}, {}),
])
def test_bad_task_spec(kind, diff, kw):
    with pytest.raises(BadTaskSpec):
        TaskSpec(kind, diff, **kw)


def test_unique_verdicts():
    prompt, target = generate_instance(UNIQUE3, 0)
    a, b, c, dd = LETTERS[:4]
    v = verify(UNIQUE3, prompt, target, (a, b, c, dd, EOS))
    assert v.reward == 1 and v.critique.tokens[0] == OK
    v = verify(UNIQUE3, prompt, target, (a, b, a, EOS))
    assert v.reward == 0
    assert v.critique.kind is CritiqueKind.CONSTRAINT_REPORT
    assert v.critique.tokens == (FAIL, 40, d(2), NEED, d(3))


@given(st.lists(st.integers(0, 63), max_size=8), st.integers(1, 6))
def test_unique_matches_set_oracle(resp, k):
    task = TaskSpec(TaskKind.UNIQUE_SYMBOL_COUNT, {"k_min": k, "k_max": k})
    prompt, target = generate_instance(task, 0)
    body = list(itertools.takewhile(lambda t: t != EOS, resp))
    distinct = set()
    for t in body:
        if 16 <= t < 32:
            distinct.add(t)
    v = verify(task, prompt, target, tuple(resp))
    assert v.reward == int(len(distinct) >= k)
    if v.reward == 0:
        assert v.critique.kind is CritiqueKind.CONSTRAINT_REPORT


def test_arith_mismatch_carries_ground_truth():
    prompt = (BOS, T_ARITH, d(2), PLUS, d(3), EQ)
    v = verify(ARITH, prompt, (d(5),), (d(6), EOS))
    assert v.reward == 0
    assert v.critique.kind is CritiqueKind.INDICATIVE_GROUND_TRUTH
    assert v.critique.tokens == (FAIL, GT, d(5))
    assert verify(ARITH, prompt, (d(5),), (d(5), EOS)).reward == 1


def test_arith_reads_first_number():
    prompt = (BOS, T_ARITH, d(9), PLUS, d(9), EQ)
    target = encode_int(18)
    assert verify(ARITH, prompt, target, (d(1), d(8), EOS)).reward == 1
    assert verify(ARITH, prompt, target, (PLUS, d(1), d(8))).reward == 1
    assert verify(ARITH, prompt, target, (d(1), PLUS, d(1), d(8))).reward == 0
    assert verify(ARITH, prompt, target, (d(1), d(8), d(0))).reward == 0
    assert verify(ARITH, prompt, target, (EOS, d(1), d(8))).reward == 0


def test_sorted_verdicts():
    prompt, target = generate_instance(SORT, 3)
    assert verify(SORT, prompt, target, target + (EOS,)).reward == 1
    bad = verify(SORT, prompt, target, tuple(reversed(target)) + (LETTERS[9],))
    assert bad.reward == 0 and bad.critique.tokens == (FAIL, GT) + target


def test_verify_is_pure():
    prompt, target = generate_instance(ARITH, 1)
    resp = (d(1), EOS)
    assert verify(ARITH, prompt, target, resp) == verify(ARITH, prompt, target, resp)


REPORT = CritiqueText(CritiqueKind.CONSTRAINT_REPORT, (FAIL, 40, d(2), NEED, d(3)))
SATISFIED = CritiqueText(CritiqueKind.CONSTRAINT_REPORT, (OK, 40, d(4), NEED, d(3)))


def test_critique_modes():
    fail = Verdict(0, REPORT)
    assert critique_for_mode(fail, "simple") == FAILURE_MARKER
    assert critique_for_mode(fail, "intra") == FAILURE_MARKER
    assert critique_for_mode(fail, "external") == REPORT
    assert critique_for_mode(fail, "mixed") == REPORT
    for mode in ("simple", "intra", "external", "mixed"):
        assert critique_for_mode(Verdict(1, SATISFIED), mode) == SATISFIED
    with pytest.raises(ValueError):
        critique_for_mode(fail, "bogus")


def test_hard_preset_base_rate_is_sparse():
    from golfrl.config import preset
    from golfrl.trainer import evaluate, initial_state
    cfg = preset("hard", eval_instances=200, eval_samples=8)
    params, _ = initial_state(cfg)
    rate = evaluate(cfg, params)["avg@n"]
    assert 0.01 <= rate <= 0.05
