"""Exact signatures of piecewise-linear paths.

A straight segment with increment ``delta`` has signature ``exp(delta)``; a
piecewise-linear path is folded left to right with Chen's identity.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .tensor_algebra import TruncatedTensor, dim_truncated, mul_flat, mul_segment_exp_flat


@dataclass(frozen=True)
class PiecewiseLinearPath:
    """Ordered vertices in R^d. Consecutive duplicates are allowed."""

    vertices: np.ndarray

    def __post_init__(self):
        v = np.array(self.vertices, dtype=np.float64, copy=True)
        if v.ndim == 1:
            v = v[:, None]
        if v.ndim != 2 or v.shape[0] < 1:
            raise ValueError(f"vertices must have shape (k>=1, d), got {np.shape(self.vertices)}")
        if not np.all(np.isfinite(v)):
            raise ValueError("vertices must be finite")
        v.setflags(write=False)
        object.__setattr__(self, "vertices", v)

    @property
    def d(self) -> int:
        return self.vertices.shape[1]

    @property
    def increments(self) -> np.ndarray:
        return np.diff(self.vertices, axis=0)

    def __len__(self):
        return self.vertices.shape[0]

    def refine(self, segment: int, frac: float) -> "PiecewiseLinearPath":
        """Insert an interior point on one segment (signature is unchanged)."""
        a, b = self.vertices[segment], self.vertices[segment + 1]
        new = a + frac * (b - a)
        return PiecewiseLinearPath(np.insert(self.vertices, segment + 1, new, axis=0))


def segment_signature(increment, n: int) -> TruncatedTensor:
    """Signature of the straight line with the given increment, exp(increment)."""
    inc = np.asarray(increment, dtype=np.float64).ravel()
    if n < 0:
        raise ValueError(f"truncation degree must be >= 0, got n={n}")
    d = inc.shape[0]
    s = np.zeros(dim_truncated(d, n))
    s[0] = 1.0
    return TruncatedTensor(d, n, mul_segment_exp_flat(s, inc, d, n))


def signature_of_increments(increments: np.ndarray, n: int, start: np.ndarray | None = None) -> np.ndarray:
    """Batched Chen fold.

    Args:
        increments: array of shape (..., steps, d).
        n: truncation degree.
        start: optional flat tensors of shape (..., D_n) to left-multiply;
            defaults to the unit.

    Returns:
        Flat array of shape (..., D_n) holding ``start (x) exp(inc_1) (x) ... (x) exp(inc_k)``.
    """
    increments = np.asarray(increments, dtype=np.float64)
    d = increments.shape[-1]
    batch = increments.shape[:-2]
    s = np.zeros(batch + (dim_truncated(d, n),))
    s[..., 0] = 1.0
    for k in range(increments.shape[-2]):
        mul_segment_exp_flat(s, increments[..., k, :], d, n)
    if start is not None:
        s = mul_flat(np.asarray(start), s, d, n)
    return s


def path_signature(p: PiecewiseLinearPath, n: int) -> TruncatedTensor:
    """Truncated signature of a piecewise-linear path."""
    if n < 0:
        raise ValueError(f"truncation degree must be >= 0, got n={n}")
    return TruncatedTensor(p.d, n, signature_of_increments(p.increments, n))


def reverse_path(p: PiecewiseLinearPath) -> PiecewiseLinearPath:
    return PiecewiseLinearPath(p.vertices[::-1])


def concat_paths(p: PiecewiseLinearPath, q: PiecewiseLinearPath) -> PiecewiseLinearPath:
    """p followed by q, with q translated to start where p ends."""
    if p.d != q.d:
        raise ValueError(f"dimension mismatch: {p.d} vs {q.d}")
    shifted = q.vertices - q.vertices[0] + p.vertices[-1]
    return PiecewiseLinearPath(np.concatenate([p.vertices, shifted[1:]], axis=0))


def levy_area(sig: TruncatedTensor) -> np.ndarray:
    """Antisymmetric part of the degree-2 block, 1/2 (S^{ij} - S^{ji})."""
    s2 = sig.level(2)
    return 0.5 * (s2 - s2.T)


def read_path_csv(path: str | Path) -> PiecewiseLinearPath:
    """One vertex per row, d numeric columns; a non-numeric first row is a header."""
    rows = []
    with open(path, newline="") as fh:
        for lineno, row in enumerate(csv.reader(fh), start=1):
            if not row or all(not c.strip() for c in row):
                continue
            try:
                rows.append([float(c) for c in row])
            except ValueError:
                if lineno == 1 and not rows:
                    continue
                raise ValueError(f"{path}:{lineno}: non-numeric entry in {row}") from None
    if not rows:
        raise ValueError(f"{path}: no vertices")
    widths = {len(r) for r in rows}
    if len(widths) != 1:
        raise ValueError(f"{path}: rows have differing column counts {sorted(widths)}")
    return PiecewiseLinearPath(np.array(rows))


__all__ = [
    "PiecewiseLinearPath",
    "segment_signature",
    "signature_of_increments",
    "path_signature",
    "reverse_path",
    "concat_paths",
    "levy_area",
    "read_path_csv",
]
