"""Primitive-program evaluation and the finite-difference gradient oracle."""
from __future__ import annotations

import numpy as np

from . import tensor as T
from .tensor import Tensor

# name -> (callable, number of tensor operands or None for variadic)
PRIMITIVES = {
    "matmul": (T.matmul, 2),
    "add": (T.add, 2),
    "mul": (T.mul, 2),
    "broadcast_add": (T.broadcast_add, 2),
    "reshape": (T.reshape, 1),
    "transpose": (T.transpose, 1),
    "concat": (T.concat, None),
    "mean": (T.mean, 1),
    "softmax": (T.softmax, 1),
    "layer_norm": (T.layer_norm, 1),
    "gelu": (T.gelu, 1),
    "mse": (T.mse, 2),
    # convenience reductions used by tests and small programs
    "sum": (T.sum, 1),
    "sub": (T.sub, 2),
    "scale": (T.scale, 1),
}


def eval_graph(inputs, program):
    """Run a straight-line program over a register file.

    ``program`` is a sequence of ``(op, operand_indices, kwargs)`` tuples.
    Registers start as ``inputs``; each instruction appends its result.  The
    last register is returned.  Example::

        eval_graph([w, x, y], [("matmul", (0, 1), {}), ("mse", (3, 2), {})])
    """
    regs = [T.as_tensor(x) for x in inputs]
    for instr in program:
        op, operands = instr[0], tuple(instr[1])
        kwargs = dict(instr[2]) if len(instr) > 2 else {}
        if op not in PRIMITIVES:
            raise ValueError(f"unsupported primitive {op!r}")
        fn, arity = PRIMITIVES[op]
        args = [regs[i] for i in operands]
        if arity is None:
            regs.append(fn(args, **kwargs))
        else:
            if len(args) != arity:
                raise ValueError(f"{op} expects {arity} operands, got {len(args)}")
            regs.append(fn(*args, **kwargs))
    return regs[-1]


def finite_diff_check(f, point, h=1e-5):
    """Max relative error between the tape gradient of ``f`` and central differences.

    ``f`` maps a Tensor to a scalar Tensor.  ``point`` may be a Tensor or a
    list of Tensors (in which case ``f`` receives the list).  Error per
    coordinate is ``|analytic - numeric| / (|analytic| + 1e-12)``.
    """
    many = isinstance(point, (list, tuple))
    pts = list(point) if many else [point]
    leaves = [Tensor(np.array(T.as_tensor(p).data, dtype=np.float64), requires_grad=True) for p in pts]

    out = f(leaves if many else leaves[0])
    if out.data.size != 1:
        raise ValueError(f"finite_diff_check: f must be scalar-valued, got shape {out.shape}")
    T.backward(out)
    analytic = [np.zeros_like(l.data) if l.grad is None else l.grad.copy() for l in leaves]

    def value(arrs):
        ts = [Tensor(a) for a in arrs]
        return float(f(ts if many else ts[0]).data)

    base = [l.data.copy() for l in leaves]
    worst = 0.0
    for k, arr in enumerate(base):
        flat = arr.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            plus = value(base)
            flat[i] = orig - h
            minus = value(base)
            flat[i] = orig
            numeric = (plus - minus) / (2 * h)
            a = analytic[k].reshape(-1)[i]
            worst = max(worst, abs(a - numeric) / (abs(a) + 1e-12))
    return worst
