"""Binary checkpoint format (version 1), all little-endian.

====================  =====================================================
offset                content
====================  =====================================================
0                     magic ``b"GOLFCKPT"`` (8 bytes)
8                     format version, uint32 (= 1)
12                    vocab size V, uint32
16                    d_emb, uint32
20                    d_h, uint32
24                    completed training steps, uint64
32                    parameter tensors as float64 in declaration order:
                      emb (V×d_emb), w_in (d_emb×d_h), w_rec (d_h×d_h),
                      b_h (d_h), w_out (d_h×V), b_out (V); row-major
...                   optimizer: adam step uint64, then lr, beta1, beta2,
                      eps as float64, then first moments and second moments,
                      each in the same tensor order as the parameters
====================  =====================================================
"""

from __future__ import annotations

import os
import struct
from pathlib import Path

import numpy as np

from .core import IoFailure
from .policy import PolicyParams, OptimizerState, zeros_like_params

MAGIC = b"GOLFCKPT"
VERSION = 1
_HEADER = struct.Struct("<8sIIIIQ")
_OPT = struct.Struct("<Qdddd")


def to_bytes(params: PolicyParams, state: OptimizerState, train_step: int) -> bytes:
    parts = [_HEADER.pack(MAGIC, VERSION, params.vocab_size, params.d_emb, params.d_h, train_step)]
    parts += [np.ascontiguousarray(t, dtype="<f8").tobytes() for t in params.tensors()]
    parts.append(_OPT.pack(state.step, state.lr, state.beta1, state.beta2, state.eps))
    parts += [np.ascontiguousarray(t, dtype="<f8").tobytes() for t in state.m]
    parts += [np.ascontiguousarray(t, dtype="<f8").tobytes() for t in state.v]
    return b"".join(parts)


def from_bytes(blob: bytes) -> tuple[PolicyParams, OptimizerState, int]:
    magic, version, V, d_emb, d_h, train_step = _HEADER.unpack_from(blob, 0)
    if magic != MAGIC:
        raise ValueError("not a checkpoint file")
    if version != VERSION:
        raise ValueError(f"unsupported checkpoint version {version}")
    off = _HEADER.size

    def read_tensors(template):
        nonlocal off
        out = []
        for t in template.tensors():
            n = t.size * 8
            out.append(np.frombuffer(blob, dtype="<f8", count=t.size, offset=off).reshape(t.shape).astype(np.float64))
            off += n
        return out

    shape = zeros_like_params(V, d_emb, d_h)
    params = PolicyParams(*read_tensors(shape))
    step, lr, b1, b2, eps = _OPT.unpack_from(blob, off)
    off += _OPT.size
    m = read_tensors(shape)
    v = read_tensors(shape)
    if off != len(blob):
        raise ValueError("trailing bytes in checkpoint")
    return params, OptimizerState(m=m, v=v, step=step, lr=lr, beta1=b1, beta2=b2, eps=eps), train_step


def save_checkpoint(path, params: PolicyParams, state: OptimizerState, train_step: int) -> None:
    path = Path(path)
    tmp = path.with_suffix(path.suffix + ".tmp")
    try:
        tmp.write_bytes(to_bytes(params, state, train_step))
        os.replace(tmp, path)
    except OSError as exc:
        raise IoFailure(f"cannot write checkpoint {path}: {exc}") from exc


def load_checkpoint(path) -> tuple[PolicyParams, OptimizerState, int]:
    return from_bytes(Path(path).read_bytes())


def describe(path) -> dict:
    params, state, train_step = load_checkpoint(path)
    return {
        "format_version": VERSION,
        "vocab_size": params.vocab_size,
        "d_emb": params.d_emb,
        "d_h": params.d_h,
        "n_params": params.n_params(),
        "train_step": train_step,
        "adam_step": state.step,
        "lr": state.lr,
        "param_norm": float(np.linalg.norm(params.flat())),
    }
