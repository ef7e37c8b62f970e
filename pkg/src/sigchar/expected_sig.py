"""Expected signatures of constant-coefficient diffusions and Taylor series of
characteristic functions built from them.

For dX = mu dt + sigma dW with constant coefficients the expected signature
Phi(t) = E[S(X)_{0,t}] has degree-m part Phi_m(t) solving

    d/dt Phi_m = mu_hat (x) Phi_{m-1} + 1/2 b_hat (x) Phi_{m-2},  Phi_m(0) = 0 (m >= 1),

so every Phi_m is a polynomial of degree <= m in t with tensor coefficients.

The Taylor terms E[l(S)^m] / m! of a characteristic function need signature
moments far beyond the stored degree. They are computed exactly by letting the
generator act on polynomials in the residual processes r_v = sum_u l_{uv} S^u,
which satisfy d r_v = sum_i r_{iv} o dX^i and close up at word length n.
"""

from __future__ import annotations

import itertools
import logging
from dataclasses import dataclass
from math import factorial

import numpy as np
import scipy.sparse as sp

from .tensor_algebra import LinearFunctional, TruncatedTensor, dim_truncated, level_slices, mul_flat

log = logging.getLogger(__name__)

MAX_MONOMIALS = 200_000


class SeriesTooLargeError(ValueError):
    pass


# --------------------------------------------------------------------------
# expected signature


@dataclass(frozen=True)
class ExpectedSignatureSeries:
    """Phi(t) truncated at degree n; ``coeffs[m][k]`` is the t^k coefficient of Phi_m."""

    mu: np.ndarray
    b: np.ndarray
    n: int
    coeffs: tuple

    @property
    def d(self) -> int:
        return self.mu.shape[0]

    def degree(self, m: int, t: float) -> np.ndarray:
        """Phi_m(t) as a (d,)*m array."""
        poly = self.coeffs[m]
        val = np.polynomial.polynomial.polyval(t, poly)
        return val.reshape((self.d,) * m)

    def evaluate(self, t: float) -> TruncatedTensor:
        flat = np.concatenate([np.polynomial.polynomial.polyval(t, c) for c in self.coeffs])
        return TruncatedTensor(self.d, self.n, flat)

    def derivative(self, t: float) -> TruncatedTensor:
        """d/dt Phi(t) from the polynomial coefficients."""
        parts = []
        for c in self.coeffs:
            dc = np.polynomial.polynomial.polyder(c) if c.shape[0] > 1 else np.zeros((1,) + c.shape[1:])
            parts.append(np.polynomial.polynomial.polyval(t, dc))
        return TruncatedTensor(self.d, self.n, np.concatenate(parts))


def expected_signature_const_coeff(mu, b, n: int) -> ExpectedSignatureSeries:
    """Polynomial-in-t expected signature of the constant-coefficient diffusion.

    Args:
        mu: drift vector (d,).
        b: diffusion matrix sigma sigma^T (d, d).
        n: truncation degree.
    """
    if n < 0:
        raise ValueError(f"truncation degree must be >= 0, got n={n}")
    mu = np.asarray(mu, dtype=np.float64).ravel()
    b = np.atleast_2d(np.asarray(b, dtype=np.float64))
    d = mu.shape[0]
    if b.shape != (d, d):
        raise ValueError(f"b must be {d}x{d}")
    bvec = b.ravel()
    coeffs = [np.ones((1, 1))]
    for m in range(1, n + 1):
        c = np.zeros((m + 1, d**m))
        for k in range(m):
            acc = np.zeros(d**m)
            if k < coeffs[m - 1].shape[0]:
                acc += np.outer(mu, coeffs[m - 1][k]).ravel()
            if m >= 2 and k < coeffs[m - 2].shape[0]:
                acc += 0.5 * np.outer(bvec, coeffs[m - 2][k]).ravel()
            c[k + 1] = acc / (k + 1)
        coeffs.append(c)
    mu.setflags(write=False)
    b.setflags(write=False)
    return ExpectedSignatureSeries(mu, b, n, tuple(coeffs))


def recursion_rhs(series: ExpectedSignatureSeries, t: float) -> TruncatedTensor:
    """mu_hat (x) Phi_{m-1} + 1/2 b_hat (x) Phi_{m-2}, degree by degree."""
    d, n = series.d, series.n
    phi = series.evaluate(t).coeffs
    gen = np.zeros(dim_truncated(d, n))
    sl = level_slices(d, n)
    if n >= 1:
        gen[sl[1]] = series.mu
    if n >= 2:
        gen[sl[2]] = 0.5 * series.b.ravel()
    return TruncatedTensor(d, n, mul_flat(gen, phi, d, n))


# --------------------------------------------------------------------------
# moments of linear functionals of the signature


def _word_key(word, d):
    k = 0
    for letter in word:
        k = k * d + letter
    return (len(word), k)


class _ResidualSystem:
    """Variables r_v (|v| < n, not identically zero) and their Itô dynamics.

    Each r_x is represented as a linear form {variable index or -1: coeff},
    where -1 stands for the constant 1.
    """

    def __init__(self, ell: np.ndarray, d: int, n: int, mu, b):
        self.d, self.n = d, n
        sl = level_slices(d, n)
        levels = [ell[s].reshape((d,) * k) for k, s in enumerate(sl)]
        self.levels = levels
        # r_v is identically zero when l_{uv} = 0 for every prefix u
        self.var = {}
        for k in range(n):
            for v in itertools.product(range(d), repeat=k):
                if self._nonzero_suffix(v):
                    self.var[v] = len(self.var)
        self.words = list(self.var)
        self.mu = np.asarray(mu, dtype=np.float64)
        self.b = np.asarray(b, dtype=np.float64)

    def _nonzero_suffix(self, v) -> bool:
        k = len(v)
        for j in range(k, self.n + 1):
            block = self.levels[j]
            sub = block[(Ellipsis,) + tuple(v)] if k else block
            if np.any(sub != 0):
                return True
        return False

    def form(self, x) -> dict:
        """Linear form of r_x."""
        if len(x) > self.n:
            return {}
        if len(x) == self.n:
            val = self.levels[self.n][tuple(x)] if self.n else self.levels[0]
            return {-1: float(val)} if val != 0 else {}
        idx = self.var.get(tuple(x))
        return {} if idx is None else {idx: 1.0}

    def start_values(self) -> np.ndarray:
        """r_v(0) = l_v because S_0 is the unit."""
        return np.array([float(self.levels[len(v)][tuple(v)]) if v else float(self.levels[0]) for v in self.words])

    def drift_forms(self) -> list[dict]:
        """c_v = sum_i mu_i r_{iv} + 1/2 sum_ij b_ij r_{jiv}."""
        out = []
        d = self.d
        for v in self.words:
            c = {}
            for i in range(d):
                if self.mu[i] != 0:
                    _add(c, self.form((i,) + v), self.mu[i])
                for j in range(d):
                    if self.b[i, j] != 0:
                        _add(c, self.form((j, i) + v), 0.5 * self.b[i, j])
            out.append(c)
        return out

    def quad_forms(self) -> dict:
        """q_{vw} = sum_ij b_ij r_{iv} r_{jw} as {(a, c): coeff} with -1 for constants."""
        out = {}
        d = self.d
        for p, v in enumerate(self.words):
            for q, w in enumerate(self.words):
                acc = {}
                for i in range(d):
                    fi = self.form((i,) + v)
                    if not fi:
                        continue
                    for j in range(d):
                        if self.b[i, j] == 0:
                            continue
                        fj = self.form((j,) + w)
                        for a, ca in fi.items():
                            for c, cc in fj.items():
                                key = (min(a, c), max(a, c))
                                acc[key] = acc.get(key, 0.0) + self.b[i, j] * ca * cc
                acc = {k: v_ for k, v_ in acc.items() if v_ != 0}
                if acc:
                    out[(p, q)] = acc
        return out


def _add(target: dict, form: dict, scale: float):
    for k, v in form.items():
        target[k] = target.get(k, 0.0) + scale * v


def _monomials(nvar: int, max_deg: int) -> list[tuple]:
    out = []
    for deg in range(max_deg + 1):
        for combo in itertools.combinations_with_replacement(range(nvar), deg):
            e = [0] * nvar
            for c in combo:
                e[c] += 1
            out.append(tuple(e))
    return out


def _count_monomials(nvar: int, max_deg: int) -> int:
    from math import comb

    return comb(nvar + max_deg, max_deg)


def _generator_matrix(system: _ResidualSystem, max_deg: int):
    """Sparse matrix of the generator on monomials of total degree <= max_deg.

    Column j holds the image of monomial j.
    """
    nvar = len(system.words)
    size = _count_monomials(nvar, max_deg)
    if size > MAX_MONOMIALS:
        raise SeriesTooLargeError(
            f"{size} monomials in {nvar} residual variables exceed the cap of {MAX_MONOMIALS}; lower m_max"
        )
    monos = _monomials(nvar, max_deg)
    index = {e: i for i, e in enumerate(monos)}
    drift = system.drift_forms()
    quad = system.quad_forms()
    rows, cols, vals = [], [], []

    def emit(col, expo, coeff):
        rows.append(index[tuple(expo)])
        cols.append(col)
        vals.append(coeff)

    for col, e in enumerate(monos):
        e = list(e)
        for v in range(nvar):
            if e[v] == 0:
                continue
            # first-order: c_v * d/dr_v
            base = e.copy()
            base[v] -= 1
            for a, ca in drift[v].items():
                ex = base.copy()
                if a >= 0:
                    ex[a] += 1
                emit(col, ex, ca * e[v])
        for (p, q), form in quad.items():
            # 1/2 q_{pq} d2/dr_p dr_q
            if p == q:
                if e[p] < 2:
                    continue
                factor = e[p] * (e[p] - 1)
                base = e.copy()
                base[p] -= 2
            else:
                if e[p] == 0 or e[q] == 0:
                    continue
                factor = e[p] * e[q]
                base = e.copy()
                base[p] -= 1
                base[q] -= 1
            for (a, c), coeff in form.items():
                ex = base.copy()
                if a >= 0:
                    ex[a] += 1
                if c >= 0:
                    ex[c] += 1
                emit(col, ex, 0.5 * factor * coeff)
    G = sp.csr_matrix((vals, (rows, cols)), shape=(size, size))
    return G, monos, index


def moment_polynomials(ell: np.ndarray, d: int, n: int, mu, b, m_max: int) -> np.ndarray:
    """Coefficients c[m, k] with E[l(S_t)^m] = sum_k c[m, k] t^k, for l with l_empty = 0.

    Returns an array of shape (m_max + 1, m_max * max(n, 1) + 1).
    """
    ell = np.asarray(ell, dtype=np.float64)
    if ell[0] != 0:
        raise ValueError("moment engine expects a functional with zero scalar part")
    system = _ResidualSystem(ell, d, n, mu, b)
    kmax = m_max * max(n, 1)
    out = np.zeros((m_max + 1, kmax + 1))
    out[0, 0] = 1.0
    if not system.words or () not in system.var:
        return out
    G, monos, index = _generator_matrix(system, m_max)
    r0 = system.start_values()
    expo = np.array(monos, dtype=np.int64)
    # evaluation functional at r(0); 0**0 == 1
    with np.errstate(all="ignore"):
        u = np.prod(np.where(expo == 0, 1.0, r0[None, :] ** expo), axis=1)
    GT = G.T.tocsr()
    empty = system.var[()]
    targets = []
    for m in range(m_max + 1):
        e = [0] * len(system.words)
        e[empty] = m
        targets.append(index[tuple(e)])
    targets = np.array(targets)
    for k in range(kmax + 1):
        out[:, k] = u[targets] / factorial(k)
        u = GT @ u
    return out


# --------------------------------------------------------------------------
# Taylor reconstruction


@dataclass(frozen=True)
class TaylorDiagnostics:
    """Terms i^m M^{(x)m}(Phi_m(t)), their partial sums and convergence diagnostics."""

    t: float
    terms: np.ndarray
    partial_sums: np.ndarray
    magnitudes: np.ndarray
    roc_estimate: float
    converged: bool
    lambda_norm: float

    @property
    def value(self) -> complex:
        return complex(self.partial_sums[-1])

    def to_rows(self) -> list[dict]:
        return [
            {
                "m": m,
                "term_re": float(z.real),
                "term_im": float(z.imag),
                "magnitude": float(a),
                "partial_re": float(s.real),
                "partial_im": float(s.imag),
            }
            for m, (z, a, s) in enumerate(zip(self.terms, self.magnitudes, self.partial_sums))
        ]


def shifted_functional(lam: LinearFunctional, start: TruncatedTensor | None) -> tuple[np.ndarray, complex]:
    """l and c with M_lam(x (x) S) - M_lam(x) = <l, S> - ... ; returns (l with zero scalar, phase offset).

    Without a start the offset is lam_empty (the phase of the unit); with a
    start x we have M_lam(x (x) S) - M_lam(x) = <l', S> - l'_empty where
    l'_v = sum_u x_u lam_{uv}, so the offset is zero.
    """
    d, n = lam.d, lam.n
    if start is None:
        ell = np.array(lam.coeffs, dtype=np.float64)
        offset = ell[0]
        ell[0] = 0.0
        return ell, offset
    if (start.d, start.n) != (d, n):
        raise ValueError("start tensor and functional shapes differ")
    sl = level_slices(d, n)
    x = np.real(start.coeffs)
    lam_c = np.real(lam.coeffs)
    ell = np.zeros(dim_truncated(d, n))
    for k in range(n + 1):  # |v| = k
        acc = np.zeros(d**k)
        for j in range(n - k + 1):  # |u| = j
            block = lam_c[sl[j + k]].reshape(d**j, d**k)
            acc += x[sl[j]] @ block
        ell[sl[k]] = acc
    ell[0] = 0.0
    return ell, 0.0


def taylor_cf(
    series: ExpectedSignatureSeries,
    lam: LinearFunctional,
    t: float,
    m_max: int = 24,
    start: TruncatedTensor | None = None,
    tail_tol: float = 1e-9,
) -> TaylorDiagnostics:
    """Taylor series of the characteristic function of the (generalized) signature.

    Without ``start`` the target is E[exp(i M_lam(S_t))]; with a start tensor x
    it is E[exp(i M_lam(x (x) S_t - x))]. Term m is i^m E[l(S_t)^m] / m!, the
    pairing of M^{(x)m} with the degree-m expected signature of the lifted path.
    """
    if m_max < 1:
        raise ValueError("m_max must be >= 1")
    if lam.d != series.d:
        raise ValueError("functional and series dimensions differ")
    if np.iscomplexobj(lam.coeffs) and np.any(np.imag(lam.coeffs)):
        raise ValueError("Taylor reconstruction needs a real functional")
    ell, offset = shifted_functional(lam, start)
    moments = moment_polynomials(ell, series.d, lam.n, series.mu, series.b, m_max)
    powers = float(t) ** np.arange(moments.shape[1])
    raw = moments @ powers
    m = np.arange(m_max + 1)
    terms = np.array([(1j**k) * raw[k] / factorial(k) for k in m]) * np.exp(1j * offset)
    partial = np.cumsum(terms)
    mags = np.abs(terms)
    lam_norm = float(np.linalg.norm(ell))
    roc = _roc_estimate(mags, lam_norm)
    tail = mags[-5:] if mags.size >= 5 else mags
    converged = bool(np.all(tail < tail_tol))
    if not converged:
        log.info("Taylor series not converged at t=%g: last magnitudes %s", t, tail)
    return TaylorDiagnostics(float(t), terms, partial, mags, roc, converged, lam_norm)


def _roc_estimate(mags: np.ndarray, lam_norm: float) -> float:
    """|lambda| / limsup |term_m|^{1/m}, limsup taken over the upper half of the terms."""
    m = np.arange(mags.size)
    sel = (m >= max(1, mags.size // 2)) & (mags > 0)
    if not np.any(sel) or lam_norm == 0:
        return float("inf")
    root = np.max(mags[sel] ** (1.0 / m[sel]))
    return float(lam_norm / root) if root > 0 else float("inf")
