"""Truncated free tensor algebra T^n(R^d).

Elements are stored densely in one flat array. Words are enumerated by length
and then lexicographically, so the degree-k block starts at ``level_offset(d, k)``
and has ``d**k`` entries laid out in C order (letter ``i`` of a word is the
``i``-th axis of the ``(d,) * k`` block).

Letters are 1-based, as in the usual multi-index notation ``I = (i_1, ..., i_k)``.
"""

from __future__ import annotations

import json
from math import factorial
from typing import Iterable, Iterator, Sequence

import numpy as np

Word = tuple[int, ...]


def dim_truncated(d: int, n: int) -> int:
    """Dimension of T^n(R^d), i.e. sum_{i=0}^n d**i."""
    if d < 1:
        raise ValueError(f"alphabet size must be >= 1, got d={d}")
    if n < 0:
        raise ValueError(f"truncation degree must be >= 0, got n={n}")
    if d == 1:
        return n + 1
    return (d ** (n + 1) - 1) // (d - 1)


def level_offset(d: int, k: int) -> int:
    """Flat index of the first word of length ``k``."""
    return 0 if k == 0 else dim_truncated(d, k - 1)


def level_slices(d: int, n: int) -> list[slice]:
    return [slice(level_offset(d, k), level_offset(d, k) + d**k) for k in range(n + 1)]


def check_word(word: Sequence[int], d: int) -> Word:
    word = tuple(int(i) for i in word)
    for letter in word:
        if not 1 <= letter <= d:
            raise ValueError(f"letter {letter} outside alphabet 1..{d}")
    return word


def word_index(word: Sequence[int], d: int) -> int:
    """Flat index of ``word`` (1-based letters)."""
    word = check_word(word, d)
    pos = 0
    for letter in word:
        pos = pos * d + (letter - 1)
    return level_offset(d, len(word)) + pos


def words(d: int, n: int) -> Iterator[Word]:
    """All words of length <= n in flat-layout order."""
    import itertools

    for k in range(n + 1):
        yield from itertools.product(range(1, d + 1), repeat=k)


class TruncatedTensor:
    """Element of T^n(R^d) with real or complex coefficients.

    Instances are treated as immutable: the coefficient array is marked
    read-only and every operation returns a new tensor.
    """

    __slots__ = ("d", "n", "coeffs")

    def __init__(self, d: int, n: int, coeffs: Iterable | np.ndarray):
        arr = np.array(coeffs, copy=True)
        if not np.issubdtype(arr.dtype, np.number):
            raise TypeError("coefficients must be numeric")
        if not np.iscomplexobj(arr):
            arr = arr.astype(np.float64)
        else:
            arr = arr.astype(np.complex128)
        size = dim_truncated(d, n)
        if arr.shape != (size,):
            raise ValueError(f"expected {size} coefficients for d={d}, n={n}, got shape {arr.shape}")
        arr.setflags(write=False)
        self.d = int(d)
        self.n = int(n)
        self.coeffs = arr

    # construction -------------------------------------------------------

    @classmethod
    def zero(cls, d: int, n: int, dtype=np.float64) -> "TruncatedTensor":
        return cls(d, n, np.zeros(dim_truncated(d, n), dtype=dtype))

    @classmethod
    def unit(cls, d: int, n: int) -> "TruncatedTensor":
        c = np.zeros(dim_truncated(d, n))
        c[0] = 1.0
        return cls(d, n, c)

    @classmethod
    def from_levels(cls, levels: Sequence, d: int, n: int | None = None) -> "TruncatedTensor":
        """Build from per-degree arrays; missing degrees are zero."""
        n = len(levels) - 1 if n is None else n
        parts = [np.asarray(x) for x in levels]
        dtype = np.result_type(*parts, np.float64)
        c = np.zeros(dim_truncated(d, n), dtype=dtype)
        for k, (sl, part) in enumerate(zip(level_slices(d, n), parts)):
            if part.size != d**k:
                raise ValueError(f"level {k} needs {d**k} entries, got {part.size}")
            c[sl] = np.ravel(part)
        return cls(d, n, c)

    @classmethod
    def from_words(cls, d: int, n: int, entries: dict) -> "TruncatedTensor":
        c = np.zeros(dim_truncated(d, n), dtype=np.result_type(*entries.values(), np.float64) if entries else np.float64)
        for w, v in entries.items():
            c[word_index(w, d)] += v
        return cls(d, n, c)

    @classmethod
    def letter(cls, i: int, d: int, n: int) -> "TruncatedTensor":
        """The basis element e_i."""
        return cls.from_words(d, n, {(i,): 1.0})

    @classmethod
    def degree_one(cls, vec: Sequence, n: int) -> "TruncatedTensor":
        vec = np.asarray(vec)
        return cls.from_levels([0.0, vec], vec.shape[0], n)

    # access -------------------------------------------------------------

    def level(self, k: int) -> np.ndarray:
        """Degree-k block reshaped to ``(d,) * k``."""
        if not 0 <= k <= self.n:
            raise ValueError(f"degree {k} outside 0..{self.n}")
        off = level_offset(self.d, k)
        return self.coeffs[off : off + self.d**k].reshape((self.d,) * k)

    def __getitem__(self, word: Sequence[int]):
        return coordinate(self, word)

    @property
    def scalar(self):
        return self.coeffs[0]

    @property
    def size(self) -> int:
        return self.coeffs.shape[0]

    def truncated(self, m: int) -> "TruncatedTensor":
        """Same element viewed in T^m, m <= n."""
        if not 0 <= m <= self.n:
            raise ValueError(f"cannot truncate degree-{self.n} tensor to {m}")
        return TruncatedTensor(self.d, m, self.coeffs[: dim_truncated(self.d, m)])

    def extended(self, m: int) -> "TruncatedTensor":
        """Same element embedded into T^m, m >= n, with zero higher levels."""
        if m < self.n:
            raise ValueError("use truncated() to lower the degree")
        c = np.zeros(dim_truncated(self.d, m), dtype=self.coeffs.dtype)
        c[: self.size] = self.coeffs
        return TruncatedTensor(self.d, m, c)

    # arithmetic ---------------------------------------------------------

    def _check_same(self, other: "TruncatedTensor") -> None:
        if not isinstance(other, TruncatedTensor):
            raise TypeError(f"expected TruncatedTensor, got {type(other).__name__}")
        if (self.d, self.n) != (other.d, other.n):
            raise ValueError(f"shape mismatch: (d={self.d}, n={self.n}) vs (d={other.d}, n={other.n})")

    def __add__(self, other):
        self._check_same(other)
        return TruncatedTensor(self.d, self.n, self.coeffs + other.coeffs)

    def __sub__(self, other):
        self._check_same(other)
        return TruncatedTensor(self.d, self.n, self.coeffs - other.coeffs)

    def __neg__(self):
        return TruncatedTensor(self.d, self.n, -self.coeffs)

    def __mul__(self, scalar):
        if isinstance(scalar, TruncatedTensor):
            raise TypeError("use @ (or tensor_mul) for the tensor product")
        return TruncatedTensor(self.d, self.n, self.coeffs * scalar)

    __rmul__ = __mul__

    def __truediv__(self, scalar):
        return TruncatedTensor(self.d, self.n, self.coeffs / scalar)

    def __matmul__(self, other):
        return tensor_mul(self, other)

    def allclose(self, other: "TruncatedTensor", atol: float = 1e-12) -> bool:
        """Absolute tolerance scaled by the largest coefficient magnitude."""
        self._check_same(other)
        scale = max(1.0, float(np.max(np.abs(self.coeffs))), float(np.max(np.abs(other.coeffs))))
        return bool(np.max(np.abs(self.coeffs - other.coeffs)) <= atol * scale)

    def __eq__(self, other):
        if not isinstance(other, TruncatedTensor):
            return NotImplemented
        return (self.d, self.n) == (other.d, other.n) and np.array_equal(self.coeffs, other.coeffs)

    def __hash__(self):
        return hash((self.d, self.n, self.coeffs.tobytes()))

    def __repr__(self):
        return f"TruncatedTensor(d={self.d}, n={self.n}, coeffs={np.array2string(self.coeffs, precision=6)})"

    # serialization ------------------------------------------------------

    def to_dict(self) -> dict:
        if np.iscomplexobj(self.coeffs):
            coeffs = [[float(z.real), float(z.imag)] for z in self.coeffs]
        else:
            coeffs = [float(x) for x in self.coeffs]
        return {"d": self.d, "n": self.n, "coeffs": coeffs}

    @classmethod
    def from_dict(cls, obj: dict) -> "TruncatedTensor":
        try:
            d, n, raw = int(obj["d"]), int(obj["n"]), obj["coeffs"]
        except KeyError as exc:
            raise ValueError(f"tensor JSON missing field {exc}") from None
        arr = np.asarray(raw, dtype=np.float64)
        if arr.ndim == 2 and arr.shape[1] == 2:
            arr = arr[:, 0] + 1j * arr[:, 1]
        return cls(d, n, arr)

    def to_json(self, **kwargs) -> str:
        return json.dumps(self.to_dict(), **kwargs)

    @classmethod
    def from_json(cls, text: str) -> "TruncatedTensor":
        return cls.from_dict(json.loads(text))


# --------------------------------------------------------------------------
# products on flat arrays (batched over leading axes)


def mul_flat(a: np.ndarray, b: np.ndarray, d: int, n: int) -> np.ndarray:
    """Truncated product of flat coefficient arrays, batched over leading axes."""
    slices = level_slices(d, n)
    batch = np.broadcast_shapes(a.shape[:-1], b.shape[:-1])
    out = np.zeros(batch + (a.shape[-1],), dtype=np.result_type(a, b))
    for m in range(n + 1):
        acc = out[..., slices[m]]
        for k in range(m + 1):
            left = a[..., slices[k]]
            right = b[..., slices[m - k]]
            acc += (left[..., :, None] * right[..., None, :]).reshape(batch + (d**m,))
    return out


def mul_segment_exp_flat(s: np.ndarray, inc: np.ndarray, d: int, n: int) -> np.ndarray:
    """In-place s <- s (x) exp(inc) for degree-one ``inc``; s has s[..., 0] == 1.

    Horner form per level, working from the top level down so the lower
    levels read are still the old values.
    """
    slices = level_slices(d, n)
    batch = s.shape[:-1]
    for m in range(n, 0, -1):
        acc = inc / m
        for k in range(1, m):
            acc = s[..., slices[k]] + acc
            acc = (acc[..., :, None] * (inc / (m - k))[..., None, :]).reshape(batch + (d ** (k + 1),))
        s[..., slices[m]] += acc
    return s


# --------------------------------------------------------------------------
# public operations


def tensor_mul(a: TruncatedTensor, b: TruncatedTensor) -> TruncatedTensor:
    """Truncated tensor product a (x) b."""
    a._check_same(b)
    return TruncatedTensor(a.d, a.n, mul_flat(a.coeffs, b.coeffs, a.d, a.n))


def tensor_exp(a: TruncatedTensor) -> TruncatedTensor:
    """sum_{k<=n} a^k / k!, for a with zero scalar part."""
    if a.coeffs[0] != 0:
        raise ValueError("tensor_exp requires a zero scalar component")
    result = TruncatedTensor.unit(a.d, a.n).coeffs.astype(a.coeffs.dtype)
    term = result.copy()
    for k in range(1, a.n + 1):
        term = mul_flat(term, a.coeffs, a.d, a.n) / k
        result = result + term
    return TruncatedTensor(a.d, a.n, result)


def tensor_inverse(a: TruncatedTensor) -> TruncatedTensor:
    """Inverse in T^n: (1/a0) sum_k (1 - a/a0)^k."""
    a0 = a.coeffs[0]
    if a0 == 0:
        raise ValueError("tensor with zero scalar component is not invertible")
    unit = TruncatedTensor.unit(a.d, a.n).coeffs
    x = unit - a.coeffs / a0
    result = unit.astype(np.result_type(x))
    power = result.copy()
    for _ in range(a.n):
        power = mul_flat(power, x, a.d, a.n)
        result = result + power
    return TruncatedTensor(a.d, a.n, result / a0)


def project_truncate(a: TruncatedTensor, m: int) -> TruncatedTensor:
    """pi^m: keep degrees <= m (zero element for m < 0). Shape is preserved."""
    c = np.zeros_like(a.coeffs)
    if m >= 0:
        top = dim_truncated(a.d, min(m, a.n))
        c[:top] = a.coeffs[:top]
    return TruncatedTensor(a.d, a.n, c)


def project_degree(a: TruncatedTensor, m: int) -> TruncatedTensor:
    """rho^m: keep only the degree-m block. Shape is preserved."""
    if not 0 <= m <= a.n:
        raise ValueError(f"degree {m} outside 0..{a.n}")
    c = np.zeros_like(a.coeffs)
    sl = level_slices(a.d, a.n)[m]
    c[sl] = a.coeffs[sl]
    return TruncatedTensor(a.d, a.n, c)


def coordinate(a: TruncatedTensor, word: Sequence[int]):
    """pi^I(a), the coefficient of a word."""
    if len(word) > a.n:
        raise ValueError(f"word of length {len(word)} exceeds truncation degree {a.n}")
    return a.coeffs[word_index(word, a.d)]


class LinearFunctional:
    """M_lambda(a) = sum_I lambda_I a_I, dual to TruncatedTensor of the same shape."""

    __slots__ = ("lam",)

    def __init__(self, lam: TruncatedTensor):
        if not isinstance(lam, TruncatedTensor):
            lam = TruncatedTensor(*lam)
        self.lam = lam

    @classmethod
    def from_levels(cls, levels, d, n=None) -> "LinearFunctional":
        return cls(TruncatedTensor.from_levels(levels, d, n))

    @classmethod
    def zero(cls, d, n) -> "LinearFunctional":
        return cls(TruncatedTensor.zero(d, n))

    @property
    def d(self) -> int:
        return self.lam.d

    @property
    def n(self) -> int:
        return self.lam.n

    @property
    def coeffs(self) -> np.ndarray:
        return self.lam.coeffs

    def __call__(self, a):
        return pair(self, a)

    def __neg__(self):
        return LinearFunctional(-self.lam)

    def __mul__(self, scalar):
        return LinearFunctional(self.lam * scalar)

    __rmul__ = __mul__

    def __repr__(self):
        return f"LinearFunctional({self.lam!r})"


def pair(L: LinearFunctional, a: TruncatedTensor):
    """Canonical word-wise pairing <lambda, a>."""
    if (L.d, L.n) != (a.d, a.n):
        raise ValueError(f"shape mismatch: functional (d={L.d}, n={L.n}) vs tensor (d={a.d}, n={a.n})")
    return L.coeffs @ a.coeffs


def tensor_power_pairing(L: LinearFunctional, parts: Sequence[TruncatedTensor]):
    """M^{(x)m}(x_1 (x) ... (x) x_m) = prod_k M(x_k)."""
    out = 1.0
    for p in parts:
        out = out * pair(L, p)
    return out
