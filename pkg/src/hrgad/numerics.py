"""Minimal reverse-mode differentiation tape.

Covers exactly the operation set the model needs: dense linear algebra for the
transforms and heads, a sparse gather-multiply-scatter for normalized message
aggregation, the max readout, and the scalar reductions of the objectives.
Everything is float64; a Tape is single-threaded and append-only, so parents
always precede children and one reverse sweep implements the chain rule.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Callable, Optional, Sequence

import numpy as np


class ShapeError(ValueError):
    """Operand shapes incompatible with the requested op."""


@dataclass
class Param:
    """A named trainable tensor with a gradient accumulator of the same shape."""

    name: str
    value: np.ndarray
    grad: np.ndarray = field(init=False)

    def __post_init__(self) -> None:
        self.value = np.asarray(self.value, dtype=np.float64)
        self.grad = np.zeros_like(self.value)

    def zero_grad(self) -> None:
        self.grad[...] = 0.0


@dataclass
class _Record:
    op: str
    parents: tuple[int, ...]
    value: np.ndarray
    aux: Any = None
    adjoint: Optional[np.ndarray] = None


def _shape_check(op: str, cond: bool, *shapes: tuple) -> None:
    if not cond:
        raise ShapeError(f"{op}: incompatible shapes {' and '.join(str(s) for s in shapes)}")


class Tape:
    """Append-only record of a forward computation, replayable in reverse.

    Every op returns an integer record id; `value(rid)` reads the cached
    forward value and `backward(rid)` fills the .grad of every Param leaf
    reachable from that (scalar) record.
    """

    def __init__(self) -> None:
        self._records: list[_Record] = []

    def __len__(self) -> int:
        return len(self._records)

    def value(self, rid: int) -> np.ndarray:
        return self._records[rid].value

    # -- leaves ------------------------------------------------------------

    def const(self, value: Any) -> int:
        """A non-trainable leaf (inputs, centers, fixed coefficients)."""
        return self._push("const", (), np.asarray(value, dtype=np.float64))

    def param(self, p: Param) -> int:
        """A trainable leaf; backward accumulates into p.grad."""
        return self._push("param", (), p.value, aux=p)

    # -- dense ops ----------------------------------------------------------

    def matmul(self, a: int, b: int) -> int:
        av, bv = self.value(a), self.value(b)
        ok = (
            (av.ndim, bv.ndim) in ((2, 2), (1, 2), (2, 1))
            and av.shape[-1] == (bv.shape[0])
        )
        _shape_check("matmul", ok, av.shape, bv.shape)
        return self._push("matmul", (a, b), av @ bv)

    def add(self, a: int, b: int) -> int:
        """Elementwise sum; also accepts (n, h) + (h,) for a per-row bias."""
        av, bv = self.value(a), self.value(b)
        ok = av.shape == bv.shape or (
            av.ndim == 2 and bv.ndim == 1 and av.shape[1] == bv.shape[0]
        )
        _shape_check("add", ok, av.shape, bv.shape)
        return self._push("add", (a, b), av + bv)

    def scale(self, a: int, s: float) -> int:
        return self._push("scale", (a,), self.value(a) * float(s), aux=float(s))

    def concat_rows(self, parts: Sequence[int]) -> int:
        """Concatenate 1-D vectors into one long vector."""
        vals = [self.value(p) for p in parts]
        for v in vals:
            _shape_check("concat_rows", v.ndim == 1, v.shape)
        widths = [v.shape[0] for v in vals]
        return self._push("concat_rows", tuple(parts), np.concatenate(vals), aux=widths)

    def slice_rows(self, a: int, start: int, stop: int) -> int:
        """Rows start:stop of a matrix; backward scatters into that block."""
        av = self.value(a)
        _shape_check("slice_rows", av.ndim == 2 and 0 <= start <= stop <= av.shape[0], av.shape)
        return self._push("slice_rows", (a,), av[start:stop].copy(), aux=(start, stop))

    def concat_cols(self, parts: Sequence[int]) -> int:
        """Concatenate equal-height matrices side by side."""
        if not parts:
            raise ValueError("concat_cols: empty operand list")
        vals = [self.value(p) for p in parts]
        for v in vals:
            _shape_check("concat_cols", v.ndim == 2 and v.shape[0] == vals[0].shape[0],
                         v.shape, vals[0].shape)
        widths = [v.shape[1] for v in vals]
        return self._push("concat_cols", tuple(parts),
                          np.concatenate(vals, axis=1), aux=widths)

    def gather_rows(self, a: int, index: np.ndarray) -> int:
        """Select matrix rows by index; backward scatter-adds into those rows."""
        av = self.value(a)
        _shape_check("gather_rows", av.ndim == 2, av.shape)
        idx = np.asarray(index, dtype=np.intp)
        if idx.ndim != 1 or (idx.size and (idx.min() < 0 or idx.max() >= av.shape[0])):
            raise ShapeError(f"gather_rows: index out of range for shape {av.shape}")
        return self._push("gather_rows", (a,), av[idx], aux=idx)

    def relu(self, a: int) -> int:
        return self._push("relu", (a,), np.maximum(self.value(a), 0.0))

    def sigmoid(self, a: int) -> int:
        return self._push("sigmoid", (a,), 1.0 / (1.0 + np.exp(-self.value(a))))

    def clip(self, a: int, lo: float, hi: float) -> int:
        """Clamp values into [lo, hi]; gradient passes through strictly inside."""
        return self._push("clip", (a,), np.clip(self.value(a), lo, hi), aux=(lo, hi))

    def rowmax(self, a: int) -> int:
        """Columnwise max over rows (the max readout); ties go to the lowest row."""
        av = self.value(a)
        _shape_check("rowmax", av.ndim == 2 and av.shape[0] >= 1, av.shape)
        argmax = np.argmax(av, axis=0)  # first occurrence = lowest row index
        return self._push("rowmax", (a,), av[argmax, np.arange(av.shape[1])], aux=argmax)

    # -- sparse aggregation ---------------------------------------------------

    def edge_aggregate(
        self, x: int, src: np.ndarray, dst: np.ndarray, coef: np.ndarray, num_out: int
    ) -> int:
        """out[dst[e]] += coef[e] * x[src[e]] for every listed edge.

        The sparse form of one bucket's normalized message sum: src/dst/coef
        describe the bucket's edges and coef carries 1/(sqrt(deg_dst)*sqrt(deg_src)).
        Accumulation runs in edge-list order (np.add.at is unbuffered), which
        keeps results bitwise stable under node relabelings that preserve edge
        order.
        """
        xv = self.value(x)
        _shape_check("edge_aggregate", xv.ndim == 2, xv.shape)
        src = np.asarray(src, dtype=np.intp)
        dst = np.asarray(dst, dtype=np.intp)
        coef = np.asarray(coef, dtype=np.float64)
        out = np.zeros((num_out, xv.shape[1]), dtype=np.float64)
        np.add.at(out, dst, xv[src] * coef[:, None])
        return self._push("edge_aggregate", (x,), out, aux=(src, dst, coef))

    # -- scalar reductions ------------------------------------------------------

    def sq_distance(self, u: int, v: int) -> int:
        uv, vv = self.value(u), self.value(v)
        _shape_check("sq_distance", uv.shape == vv.shape, uv.shape, vv.shape)
        d = uv - vv
        return self._push("sq_distance", (u, v), np.asarray(np.sum(d * d)))

    def mean(self, parts: Sequence[int]) -> int:
        """Mean of scalar records (single-element values of any shape)."""
        if not parts:
            raise ValueError("mean: empty operand list")
        vals = [self.value(p) for p in parts]
        for v in vals:
            _shape_check("mean", v.size == 1, v.shape)
        return self._push(
            "mean", tuple(parts),
            np.asarray(sum(float(v.reshape(())) for v in vals) / len(vals)),
        )

    def frob_norm_sq(self, a: int) -> int:
        av = self.value(a)
        return self._push("frob_norm_sq", (a,), np.asarray(np.sum(av * av)))

    def log(self, a: int) -> int:
        return self._push("log", (a,), np.log(self.value(a)))

    # -- reverse sweep -----------------------------------------------------------

    def backward(self, loss: int) -> None:
        """Fill every reachable Param.grad with d(loss)/d(param), accumulating.

        Adjoints are freshly zero-initialized per sweep; Param.grad is not
        cleared here so per-graph tapes can accumulate into a shared batch
        gradient in a fixed serial order.
        """
        recs = self._records
        if recs[loss].value.shape != ():
            raise ShapeError(f"backward: loss must be scalar, got shape {recs[loss].value.shape}")
        for r in recs:
            r.adjoint = None
        recs[loss].adjoint = np.ones(())

        for rid in range(loss, -1, -1):
            rec = recs[rid]
            g = rec.adjoint
            if g is None:
                continue
            op = rec.op
            if op == "param":
                rec.aux.grad += g
            elif op == "matmul":
                a, b = rec.parents
                av, bv = recs[a].value, recs[b].value
                if av.ndim == 2 and bv.ndim == 2:
                    self._bump(a, g @ bv.T)
                    self._bump(b, av.T @ g)
                elif av.ndim == 1:  # (k,) @ (k,m) -> (m,)
                    self._bump(a, bv @ g)
                    self._bump(b, np.outer(av, g))
                else:  # (n,k) @ (k,) -> (n,)
                    self._bump(a, np.outer(g, bv))
                    self._bump(b, av.T @ g)
            elif op == "add":
                a, b = rec.parents
                self._bump(a, g)
                bv = recs[b].value
                if bv.shape == rec.value.shape:
                    self._bump(b, g)
                else:  # broadcast bias: fold the row dimension back
                    self._bump(b, g.sum(axis=0))
            elif op == "scale":
                self._bump(rec.parents[0], g * rec.aux)
            elif op == "concat_rows":
                off = 0
                for p, w in zip(rec.parents, rec.aux):
                    self._bump(p, g[off : off + w])
                    off += w
            elif op == "slice_rows":
                start, stop = rec.aux
                full = np.zeros_like(recs[rec.parents[0]].value)
                full[start:stop] = g
                self._bump(rec.parents[0], full)
            elif op == "concat_cols":
                off = 0
                for p, w in zip(rec.parents, rec.aux):
                    self._bump(p, g[:, off:off + w])
                    off += w
            elif op == "gather_rows":
                dx = np.zeros_like(recs[rec.parents[0]].value)
                np.add.at(dx, rec.aux, g)
                self._bump(rec.parents[0], dx)
            elif op == "relu":
                self._bump(rec.parents[0], g * (recs[rec.parents[0]].value > 0.0))
            elif op == "sigmoid":
                self._bump(rec.parents[0], g * rec.value * (1.0 - rec.value))
            elif op == "clip":
                lo, hi = rec.aux
                src = recs[rec.parents[0]].value
                self._bump(rec.parents[0], g * ((src > lo) & (src < hi)))
            elif op == "rowmax":
                src = recs[rec.parents[0]].value
                full = np.zeros_like(src)
                full[rec.aux, np.arange(src.shape[1])] = g
                self._bump(rec.parents[0], full)
            elif op == "edge_aggregate":
                src_idx, dst_idx, coef = rec.aux
                dx = np.zeros_like(recs[rec.parents[0]].value)
                np.add.at(dx, src_idx, g[dst_idx] * coef[:, None])
                self._bump(rec.parents[0], dx)
            elif op == "sq_distance":
                u, v = rec.parents
                d = recs[u].value - recs[v].value
                self._bump(u, 2.0 * d * g)
                self._bump(v, -2.0 * d * g)
            elif op == "mean":
                share = g / len(rec.parents)
                for p in rec.parents:
                    self._bump(p, share)
            elif op == "frob_norm_sq":
                self._bump(rec.parents[0], 2.0 * recs[rec.parents[0]].value * g)
            elif op == "log":
                self._bump(rec.parents[0], g / recs[rec.parents[0]].value)
            elif op == "const":
                pass
            else:  # pragma: no cover - every op above is exhaustive
                raise AssertionError(f"backward: unknown op {op!r}")

    # -- internals ---------------------------------------------------------------

    def _push(self, op: str, parents: tuple[int, ...], value: np.ndarray, aux: Any = None) -> int:
        self._records.append(_Record(op, parents, np.asarray(value, dtype=np.float64), aux))
        return len(self._records) - 1

    def _bump(self, rid: int, g: np.ndarray) -> None:
        # Adjoints may alias gradient temporaries or views of child adjoints;
        # they are only ever rebound (never mutated in place), so the first
        # contribution needs no defensive copy or zero-fill.
        rec = self._records[rid]
        rec.adjoint = g if rec.adjoint is None else rec.adjoint + g


def finite_diff_check(
    loss_builder: Callable[[Tape], int], params: Sequence[Param], epsilon: float = 1e-5
) -> float:
    """Max relative error between analytic and central-difference gradients.

    loss_builder must deterministically rebuild the loss on a fresh tape from
    the current param values. Relative error per entry uses the conventional
    max(|analytic|, |numeric|, 1e-8) denominator.
    """
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")

    for p in params:
        p.zero_grad()
    tape = Tape()
    tape.backward(loss_builder(tape))
    analytic = [p.grad.copy() for p in params]

    def eval_loss() -> float:
        t = Tape()
        return float(t.value(loss_builder(t)))

    worst = 0.0
    for p, a in zip(params, analytic):
        flat = p.value.reshape(-1)
        aflat = a.reshape(-1)
        for i in range(flat.size):
            keep = flat[i]
            flat[i] = keep + epsilon
            up = eval_loss()
            flat[i] = keep - epsilon
            down = eval_loss()
            flat[i] = keep
            numeric = (up - down) / (2.0 * epsilon)
            err = abs(aflat[i] - numeric) / max(abs(aflat[i]), abs(numeric), 1e-8)
            worst = max(worst, err)
    return worst
