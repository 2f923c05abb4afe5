"""Tiny autoregressive policy: one tanh recurrent layer over a token vocabulary.

Everything is float64 numpy with hand-written backpropagation through time.
Batches of (context, response) pairs are right-padded; because the recurrence
is causal, padding after a sequence never influences its own positions.
"""

from __future__ import annotations

from dataclasses import dataclass, fields

import numpy as np

from .core import BadShape, BadToken, NonFiniteGradient
from .envs import EOS

PARAM_NAMES = ("emb", "w_in", "w_rec", "b_h", "w_out", "b_out")


@dataclass
class PolicyParams:
    emb: np.ndarray    # (V, d_emb)
    w_in: np.ndarray   # (d_emb, d_h)
    w_rec: np.ndarray  # (d_h, d_h)
    b_h: np.ndarray    # (d_h,)
    w_out: np.ndarray  # (d_h, V)
    b_out: np.ndarray  # (V,)

    @property
    def vocab_size(self) -> int:
        return self.emb.shape[0]

    @property
    def d_emb(self) -> int:
        return self.emb.shape[1]

    @property
    def d_h(self) -> int:
        return self.w_rec.shape[0]

    def tensors(self) -> list[np.ndarray]:
        return [getattr(self, n) for n in PARAM_NAMES]

    def n_params(self) -> int:
        return sum(t.size for t in self.tensors())

    def copy(self) -> "PolicyParams":
        return PolicyParams(*(t.copy() for t in self.tensors()))

    def flat(self) -> np.ndarray:
        return np.concatenate([t.ravel() for t in self.tensors()])

    def set_flat(self, vec: np.ndarray) -> None:
        i = 0
        for t in self.tensors():
            t[...] = vec[i:i + t.size].reshape(t.shape)
            i += t.size


def zeros_like_params(vocab_size: int, d_emb: int, d_h: int) -> PolicyParams:
    return PolicyParams(
        emb=np.zeros((vocab_size, d_emb)),
        w_in=np.zeros((d_emb, d_h)),
        w_rec=np.zeros((d_h, d_h)),
        b_h=np.zeros(d_h),
        w_out=np.zeros((d_h, vocab_size)),
        b_out=np.zeros(vocab_size),
    )


def init_params(vocab_size: int = 64, d_emb: int = 32, d_h: int = 64, seed=0,
                out_scale: float = 0.1) -> PolicyParams:
    """Random initialization. A small output scale keeps the initial policy
    close to uniform over the vocabulary."""
    rng = np.random.default_rng(seed)
    return PolicyParams(
        emb=rng.normal(0.0, 1.0, (vocab_size, d_emb)),
        w_in=rng.normal(0.0, 1.0 / np.sqrt(d_emb), (d_emb, d_h)),
        w_rec=rng.normal(0.0, 0.9 / np.sqrt(d_h), (d_h, d_h)),
        b_h=np.zeros(d_h),
        w_out=rng.normal(0.0, out_scale / np.sqrt(d_h), (d_h, vocab_size)),
        b_out=np.zeros(vocab_size),
    )


class GradAccumulator:
    """One float64 buffer per parameter tensor."""

    def __init__(self, params: PolicyParams):
        self.grads = zeros_like_params(params.vocab_size, params.d_emb, params.d_h)

    def zero(self) -> None:
        for g in self.grads.tensors():
            g[...] = 0.0

    def tensors(self) -> list[np.ndarray]:
        return self.grads.tensors()

    def flat(self) -> np.ndarray:
        return self.grads.flat()

    def add_scaled(self, other: "GradAccumulator", scale: float = 1.0) -> None:
        for g, o in zip(self.tensors(), other.tensors()):
            g += scale * o

    def is_zero(self) -> bool:
        return all(not g.any() for g in self.tensors())


def _log_softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def _check_tokens(params: PolicyParams, seq) -> None:
    V = params.emb.shape[0]
    if min(seq) < 0 or max(seq) >= V:
        bad = next(t for t in seq if t < 0 or t >= V)
        raise BadToken(f"token id {bad} outside [0, {V})")


def _run(params: PolicyParams, X: np.ndarray) -> np.ndarray:
    """Hidden states for a padded (B, T) token matrix."""
    B, T = X.shape
    xin = params.emb[X] @ params.w_in + params.b_h
    hs = np.empty((B, T, params.d_h))
    h = np.zeros((B, params.d_h))
    for t in range(T):
        h = np.tanh(xin[:, t] + h @ params.w_rec)
        hs[:, t] = h
    return hs


class _Bucket:
    """Padded teacher-forced pass over sequences of similar length."""

    def __init__(self, params: PolicyParams, contexts, responses):
        B = len(contexts)
        seqs, bidx, tidx, targets = [], [], [], []
        for b, (ctx, resp) in enumerate(zip(contexts, responses)):
            seqs.append(list(ctx) + list(resp[:-1]))
            start = len(ctx) - 1
            bidx.extend([b] * len(resp))
            tidx.extend(range(start, start + len(resp)))
            targets.extend(resp)
        T = max(len(s) for s in seqs)
        X = np.zeros((B, T), dtype=np.int64)
        for b, s in enumerate(seqs):
            X[b, :len(s)] = s
        self.params = params
        self.X = X
        self.hs = _run(params, X)
        self.bidx = np.asarray(bidx)
        self.tidx = np.asarray(tidx)
        self.targets = np.asarray(targets, dtype=np.int64)
        self.h_resp = self.hs[self.bidx, self.tidx]
        self.logp = _log_softmax(self.h_resp @ params.w_out + params.b_out)
        self.token_logp = self.logp[np.arange(len(targets)), self.targets]

    def backward(self, w: np.ndarray, acc: GradAccumulator) -> None:
        p = self.params
        g = acc.grads
        dlogits = -np.exp(self.logp) * w[:, None]
        dlogits[np.arange(len(w)), self.targets] += w
        g.w_out += self.h_resp.T @ dlogits
        g.b_out += dlogits.sum(axis=0)
        B, T = self.X.shape
        H = p.d_h
        dhs = np.zeros((B, T, H))
        np.add.at(dhs, (self.bidx, self.tidx), dlogits @ p.w_out.T)
        t_last = int(self.tidx.max()) + 1
        dpre = np.zeros((B, T, H))
        dh_next = np.zeros((B, H))
        w_rec_T = p.w_rec.T
        for t in range(t_last - 1, -1, -1):
            h = self.hs[:, t]
            d = (dhs[:, t] + dh_next) * (1.0 - h * h)
            dpre[:, t] = d
            dh_next = d @ w_rec_T
        flat_dpre = dpre[:, :t_last].reshape(-1, H)
        hs_prev = np.concatenate([np.zeros((B, 1, H)), self.hs[:, :t_last - 1]], axis=1)
        g.w_rec += hs_prev.reshape(-1, H).T @ flat_dpre
        g.b_h += flat_dpre.sum(axis=0)
        X = self.X[:, :t_last].ravel()
        g.w_in += p.emb[X].T @ flat_dpre
        np.add.at(g.emb, X, flat_dpre @ p.w_in.T)


class ForwardPass:
    """Teacher-forced scoring of a batch of (context, response) pairs.

    Sequences are grouped into length buckets so short prompts are not padded
    to the longest refinement context. ``logprobs(i)`` and ``entropies(i)``
    index pairs in their original order.
    """

    def __init__(self, params: PolicyParams, contexts, responses, bucket_width: int = 16):
        if len(contexts) != len(responses):
            raise BadShape("contexts and responses differ in count")
        self.params = params
        lengths = []
        for ctx, resp in zip(contexts, responses):
            if len(ctx) == 0 or len(resp) == 0:
                raise BadShape("context and response must be nonempty")
            _check_tokens(params, ctx)
            _check_tokens(params, resp)
            lengths.append(len(ctx) + len(resp) - 1)
        keys = [(n - 1) // bucket_width for n in lengths]
        self.buckets = []
        self.where = [None] * len(contexts)
        self.resp_len = [len(r) for r in responses]
        for key in sorted(set(keys)):
            idx = [i for i, k in enumerate(keys) if k == key]
            bucket = _Bucket(params, [contexts[i] for i in idx], [responses[i] for i in idx])
            offsets = np.concatenate([[0], np.cumsum([len(responses[i]) for i in idx])])
            for local, i in enumerate(idx):
                self.where[i] = (len(self.buckets), offsets[local], offsets[local + 1])
            self.buckets.append(bucket)

    def __len__(self) -> int:
        return len(self.where)

    def logprobs(self, i: int) -> np.ndarray:
        b, lo, hi = self.where[i]
        return self.buckets[b].token_logp[lo:hi]

    def log_distributions(self, i: int) -> np.ndarray:
        b, lo, hi = self.where[i]
        return self.buckets[b].logp[lo:hi]

    def entropies(self, i: int) -> np.ndarray:
        lp = self.log_distributions(i)
        return -(np.exp(lp) * lp).sum(axis=-1)

    def backward(self, weights, acc: GradAccumulator) -> None:
        """Add d/dθ Σ_i Σ_t w_it log π(y_it | ·) into ``acc``."""
        if len(weights) != len(self.where):
            raise BadShape(f"{len(weights)} weight vectors for {len(self.where)} sequences")
        per_bucket = [np.zeros(len(b.targets)) for b in self.buckets]
        for i, wi in enumerate(weights):
            wi = np.asarray(wi, dtype=np.float64)
            if wi.shape != (self.resp_len[i],):
                raise BadShape(f"weights of shape {wi.shape} for response length {self.resp_len[i]}")
            b, lo, hi = self.where[i]
            per_bucket[b][lo:hi] = wi
        for bucket, w in zip(self.buckets, per_bucket):
            if w.any():
                bucket.backward(w, acc)


def logprobs(params: PolicyParams, context, response) -> np.ndarray:
    """log π(response_t | context, response_<t) for each t (teacher forcing)."""
    return ForwardPass(params, [context], [response]).logprobs(0).copy()


def next_token_probs(params: PolicyParams, context, response) -> np.ndarray:
    """Full next-token distributions at each response position, shape (L, V)."""
    return np.exp(ForwardPass(params, [context], [response]).log_distributions(0))


def token_entropies(params: PolicyParams, context, response) -> np.ndarray:
    return ForwardPass(params, [context], [response]).entropies(0).copy()


def accumulate_weighted_logprob_grad(params: PolicyParams, context, response, weights,
                                     acc: GradAccumulator) -> None:
    weights = np.asarray(weights, dtype=np.float64)
    if weights.shape != (len(response),):
        raise BadShape(f"weights shape {weights.shape} for response length {len(response)}")
    ForwardPass(params, [context], [response]).backward([weights], acc)


def encode_contexts(params: PolicyParams, contexts) -> np.ndarray:
    """Hidden state after consuming each context, shape (B, d_h)."""
    lengths = [len(c) for c in contexts]
    if min(lengths) == 0:
        raise BadShape("context must be nonempty")
    X = np.zeros((len(contexts), max(lengths)), dtype=np.int64)
    for b, c in enumerate(contexts):
        _check_tokens(params, c)
        X[b, :len(c)] = c
    hs = _run(params, X)
    return hs[np.arange(len(contexts)), np.asarray(lengths) - 1]


def sample_batch(params: PolicyParams, contexts, max_len: int, temperature: float = 1.0,
                 rng=None, greedy: bool = False, eos: int | None = EOS):
    """Sample one response per context.

    Returns a list of ``(response, behavior_logprobs)``. The recorded
    log-probabilities are always at temperature 1; ``temperature`` only
    shapes the sampling distribution.
    """
    if temperature <= 0:
        raise ValueError("temperature must be positive")
    rng = np.random.default_rng(rng)
    B = len(contexts)
    h = encode_contexts(params, contexts)
    toks = np.zeros((B, max_len), dtype=np.int64)
    lps = np.zeros((B, max_len))
    lengths = np.full(B, max_len)
    alive = np.ones(B, dtype=bool)
    rows = np.arange(B)
    for step in range(max_len):
        logits = h @ params.w_out + params.b_out
        logp = _log_softmax(logits)
        if greedy:
            tok = logits.argmax(axis=1)
        else:
            u = rng.random(B)
            q = np.exp(_log_softmax(logits / temperature)) if temperature != 1.0 else np.exp(logp)
            cdf = np.cumsum(q, axis=1)
            tok = np.minimum((cdf < (u * cdf[:, -1])[:, None]).sum(axis=1), params.vocab_size - 1)
        toks[:, step] = tok
        lps[:, step] = logp[rows, tok]
        if eos is not None:
            ended = alive & (tok == eos)
            lengths[ended] = step + 1
            alive &= ~ended
            if not alive.any():
                break
        if step + 1 < max_len:
            h = np.tanh(params.emb[tok] @ params.w_in + params.b_h + h @ params.w_rec)
    return [(tuple(int(t) for t in toks[b, :lengths[b]]), lps[b, :lengths[b]].copy()) for b in range(B)]


def sample(params: PolicyParams, context, max_len: int, temperature: float = 1.0,
           rng_seed=None, greedy: bool = False):
    return sample_batch(params, [context], max_len, temperature, rng_seed, greedy)[0]


@dataclass
class OptimizerState:
    m: list
    v: list
    step: int = 0
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def for_params(cls, params: PolicyParams, lr: float = 1e-3, beta1: float = 0.9,
                   beta2: float = 0.999, eps: float = 1e-8) -> "OptimizerState":
        return cls(m=[np.zeros_like(t) for t in params.tensors()],
                   v=[np.zeros_like(t) for t in params.tensors()],
                   lr=lr, beta1=beta1, beta2=beta2, eps=eps)

    def copy(self) -> "OptimizerState":
        kw = {f.name: getattr(self, f.name) for f in fields(self)}
        kw["m"] = [a.copy() for a in self.m]
        kw["v"] = [a.copy() for a in self.v]
        return OptimizerState(**kw)


def adam_step(params: PolicyParams, acc: GradAccumulator, state: OptimizerState):
    """Bias-corrected Adam ascent on the objective whose gradient is in ``acc``.

    An exactly-zero gradient is a no-op: parameters, moments and the step
    counter are all left untouched.
    """
    grads = acc.tensors()
    for t, g, m in zip(params.tensors(), grads, state.m):
        if g.shape != t.shape or m.shape != t.shape:
            raise BadShape("optimizer state does not match parameters")
    if not all(np.isfinite(g).all() for g in grads):
        raise NonFiniteGradient("gradient contains non-finite values")
    if acc.is_zero():
        return params, state
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** state.step
    c2 = 1.0 - b2 ** state.step
    for t, g, m, v in zip(params.tensors(), grads, state.m, state.v):
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        t += state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    return params, state
