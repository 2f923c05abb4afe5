"""Synthetic verifiable tasks with token-level critiques.

All tasks share one 64-token vocabulary so that prompts, responses and
critiques live in the same embedding space.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .core import BadTaskSpec, CritiqueKind, CritiqueText, TokenSeq, as_tokens

PAD, BOS, EOS, SEP, FAIL, OK = 0, 1, 2, 3, 4, 5
DIGIT0 = 6
LETTER_A = 16
N_LETTERS = 16
PLUS, MINUS, TIMES, EQ = 32, 33, 34, 35
T_UNIQUE, T_ARITH, T_SORT = 36, 37, 38
GT, HAS, NEED = 39, 40, 41
N_USED = 42
VOCAB_SIZE = 64

DIGITS = tuple(range(DIGIT0, DIGIT0 + 10))
LETTERS = tuple(range(LETTER_A, LETTER_A + N_LETTERS))
_OPS = {"+": PLUS, "-": MINUS, "*": TIMES}

_NAMES = {PAD: "<pad>", BOS: "<bos>", EOS: "<eos>", SEP: "|", FAIL: "<fail>", OK: "<ok>",
          PLUS: "+", MINUS: "-", TIMES: "*", EQ: "=", T_UNIQUE: "<uniq>", T_ARITH: "<arith>",
          T_SORT: "<sort>", GT: "<gt>", HAS: "<has>", NEED: "<need>"}
_NAMES.update({DIGIT0 + i: str(i) for i in range(10)})
_NAMES.update({LETTER_A + i: chr(ord("a") + i) for i in range(N_LETTERS)})


def detokenize(tokens) -> str:
    return " ".join(_NAMES.get(int(t), f"<{int(t)}>") for t in tokens)


def encode_int(n: int) -> TokenSeq:
    return tuple(DIGIT0 + int(c) for c in str(int(n)))


def strip_eos(response) -> TokenSeq:
    out = []
    for t in response:
        if t == EOS:
            break
        out.append(int(t))
    return tuple(out)


class TaskKind(str, Enum):
    UNIQUE_SYMBOL_COUNT = "unique_symbol_count"
    EXACT_ANSWER_ARITHMETIC = "exact_answer_arithmetic"
    SORTED_OUTPUT = "sorted_output"


_DEFAULT_DIFFICULTY = {
    TaskKind.UNIQUE_SYMBOL_COUNT: {"k_min": 3, "k_max": 3},
    TaskKind.EXACT_ANSWER_ARITHMETIC: {"max_operand": 4, "ops": "+"},
    TaskKind.SORTED_OUTPUT: {"list_len": 3, "alphabet": 8},
}


@dataclass(frozen=True)
class TaskSpec:
    """One verifiable task family.

    Difficulty keys: ``k_min``/``k_max`` (unique_symbol_count),
    ``max_operand``/``ops`` (exact_answer_arithmetic), ``list_len``/``alphabet``
    (sorted_output).
    """

    task_kind: TaskKind
    difficulty: dict = field(default_factory=dict)
    vocab_size: int = VOCAB_SIZE
    max_prompt_len: int = 12
    max_response_len: int = 8

    def __post_init__(self):
        object.__setattr__(self, "task_kind", TaskKind(self.task_kind))
        merged = dict(_DEFAULT_DIFFICULTY[self.task_kind])
        merged.update(self.difficulty)
        object.__setattr__(self, "difficulty", merged)
        self.validate()

    def validate(self) -> None:
        if self.vocab_size < N_USED:
            raise BadTaskSpec(f"vocab_size {self.vocab_size} < {N_USED} reserved tokens")
        if self.max_response_len < 1:
            raise BadTaskSpec("max_response_len must be positive")
        d = self.difficulty
        if self.task_kind is TaskKind.UNIQUE_SYMBOL_COUNT:
            k_min, k_max = int(d["k_min"]), int(d["k_max"])
            if not 1 <= k_min <= k_max <= N_LETTERS:
                raise BadTaskSpec(f"need 1 <= k_min <= k_max <= {N_LETTERS}")
            if k_max > self.max_response_len:
                raise BadTaskSpec("k_max exceeds max_response_len")
            longest = 3 + len(encode_int(k_max))
        elif self.task_kind is TaskKind.EXACT_ANSWER_ARITHMETIC:
            m = int(d["max_operand"])
            if m < 0 or not d["ops"] or any(op not in _OPS for op in d["ops"]):
                raise BadTaskSpec(f"bad arithmetic difficulty {d}")
            biggest = max(_apply(op, m, m) for op in d["ops"])
            if len(encode_int(biggest)) > self.max_response_len:
                raise BadTaskSpec("answers may not fit max_response_len")
            longest = 4 + 2 * len(encode_int(m))
        else:
            n, alpha = int(d["list_len"]), int(d["alphabet"])
            if not (1 <= n and 1 <= alpha <= N_LETTERS):
                raise BadTaskSpec(f"bad sorting difficulty {d}")
            if n > self.max_response_len:
                raise BadTaskSpec("list_len exceeds max_response_len")
            longest = 2 + n
        if longest > self.max_prompt_len:
            raise BadTaskSpec(f"prompts of length {longest} exceed max_prompt_len {self.max_prompt_len}")


def _apply(op: str, a: int, b: int) -> int:
    if op == "+":
        return a + b
    if op == "-":
        return a - b
    return a * b


def generate_instance(task: TaskSpec, rng_seed) -> tuple[TokenSeq, TokenSeq]:
    """Return ``(prompt, hidden_target)``; deterministic in ``rng_seed``."""
    rng = np.random.default_rng(rng_seed)
    d = task.difficulty
    if task.task_kind is TaskKind.UNIQUE_SYMBOL_COUNT:
        k = int(rng.integers(int(d["k_min"]), int(d["k_max"]) + 1))
        prompt = (BOS, T_UNIQUE, NEED) + encode_int(k)
        target = encode_int(k)
    elif task.task_kind is TaskKind.EXACT_ANSWER_ARITHMETIC:
        m = int(d["max_operand"])
        op = d["ops"][int(rng.integers(len(d["ops"])))]
        a, b = (int(v) for v in rng.integers(0, m + 1, size=2))
        if op == "-" and b > a:
            a, b = b, a
        prompt = (BOS, T_ARITH) + encode_int(a) + (_OPS[op],) + encode_int(b) + (EQ,)
        target = encode_int(_apply(op, a, b))
    else:
        n, alpha = int(d["list_len"]), int(d["alphabet"])
        items = rng.integers(0, alpha, size=n)
        prompt = (BOS, T_SORT) + tuple(LETTER_A + int(i) for i in items)
        target = tuple(LETTER_A + int(i) for i in np.sort(items))
    return as_tokens(prompt, task.vocab_size), as_tokens(target, task.vocab_size)


@dataclass(frozen=True)
class Verdict:
    reward: int
    critique: CritiqueText


def satisfaction_marker(critique: CritiqueText) -> bool:
    return bool(critique.tokens) and critique.tokens[0] == OK


def _digit_runs(tokens: TokenSeq) -> list[TokenSeq]:
    runs, cur = [], []
    for t in tokens:
        if t in DIGITS:
            cur.append(t)
        elif cur:
            runs.append(tuple(cur))
            cur = []
    if cur:
        runs.append(tuple(cur))
    return runs


def verify(task: TaskSpec, prompt: TokenSeq, hidden_target: TokenSeq, response: TokenSeq) -> Verdict:
    """Score ``response`` and render the task's critique.

    Arithmetic reads the first number (maximal digit run) of the response as
    the answer. Sorting passes only on an exact match. Anything after EOS is
    ignored.
    """
    body = strip_eos(response)
    kind = task.task_kind
    if kind is TaskKind.UNIQUE_SYMBOL_COUNT:
        need = int("".join(str(t - DIGIT0) for t in hidden_target))
        have = len({t for t in body if t in LETTERS})
        ok = have >= need
        head = OK if ok else FAIL
        tokens = (head, HAS) + encode_int(have) + (NEED,) + encode_int(need)
        return Verdict(int(ok), CritiqueText(CritiqueKind.CONSTRAINT_REPORT, tokens))
    if kind is TaskKind.EXACT_ANSWER_ARITHMETIC:
        runs = _digit_runs(body)
        ok = bool(runs) and runs[0] == tuple(hidden_target)
    else:
        ok = body == tuple(hidden_target)
    if ok:
        return Verdict(1, CritiqueText(CritiqueKind.INDICATIVE_GROUND_TRUTH, (OK,)))
    return Verdict(0, CritiqueText(CritiqueKind.INDICATIVE_GROUND_TRUTH, (FAIL, GT) + tuple(hidden_target)))


FEEDBACK_MODES = ("simple", "intra", "external", "mixed")

FAILURE_MARKER = CritiqueText(CritiqueKind.SIMPLE, (FAIL,))


def critique_for_mode(verdict: Verdict, mode: str) -> CritiqueText:
    """Critique as seen under a feedback condition.

    ``simple`` and ``intra`` reduce failures to a bare marker; the intra-group
    signal is carried by the aggregated attempts, not by the critique.
    """
    if mode not in FEEDBACK_MODES:
        raise ValueError(f"unknown feedback mode {mode!r}")
    if verdict.reward == 1 or mode in ("external", "mixed"):
        return verdict.critique
    return FAILURE_MARKER
