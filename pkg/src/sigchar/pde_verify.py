"""Finite-difference residuals of Feynman-Kac type PDEs.

Derivatives are central differences: second order in the step for first
derivatives, pure second derivatives and the four-point mixed stencil.
"""

from __future__ import annotations

import itertools
import json
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .diffusion import LiftedDiffusion
from .levy_closed_form import check_skew
from .tensor_algebra import LinearFunctional, dim_truncated

TERMS = ("time", "generator", "lambda_linear", "lambda_quadratic")


@dataclass(frozen=True)
class Stencil:
    h_t: float = 1e-3
    h_x: float = 1e-3

    def __post_init__(self):
        if not (self.h_t > 0 and self.h_x > 0):
            raise ValueError("stencil steps must be positive")

    def halved(self) -> "Stencil":
        return Stencil(self.h_t / 2, self.h_x / 2)


def gradient(f: Callable, x: np.ndarray, h: float) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    m = x.shape[0]
    g = np.zeros(m, dtype=np.complex128)
    for i in range(m):
        e = np.zeros(m)
        e[i] = h
        g[i] = (f(x + e) - f(x - e)) / (2 * h)
    return g


def time_derivative(f: Callable, t: float, h: float):
    return (f(t + h) - f(t - h)) / (2 * h)


def generator_apply(f: Callable, mu, b, x, st: Stencil = Stencil()):
    """sum_i mu_i df/dx_i + 1/2 sum_{jk} b_jk d2f/dx_j dx_k by central differences.

    Entries of the Hessian with b_jk == 0 are skipped (they never contribute).
    """
    x = np.asarray(x, dtype=np.float64)
    mu = np.asarray(mu)
    b = np.asarray(b)
    m = x.shape[0]
    h = st.h_x
    out = 0.0 + 0.0j
    eye = np.eye(m) * h
    f0 = f(x)
    for i in range(m):
        if mu[i] != 0:
            out += mu[i] * (f(x + eye[i]) - f(x - eye[i])) / (2 * h)
    for i in range(m):
        if b[i, i] != 0:
            out += 0.5 * b[i, i] * (f(x + eye[i]) - 2 * f0 + f(x - eye[i])) / h**2
        for j in range(i + 1, m):
            bij = b[i, j] + b[j, i]
            if bij != 0:
                ei, ej = eye[i], eye[j]
                mixed = (f(x + ei + ej) - f(x + ei - ej) - f(x - ei + ej) + f(x - ei - ej)) / (4 * h**2)
                out += 0.5 * bij * mixed
    return out


# --------------------------------------------------------------------------
# Lévy-area PDE


def levy_pde_terms(t: float, w, Lambda, f: Callable, st: Stencil = Stencil()) -> dict:
    """Terms of (-d_t + 1/2 Laplacian) f + (i/2) sum_j (w^T Lambda)_j d_j f - 1/8 w^T Lambda Lambda^T w f."""
    A = check_skew(Lambda)
    w = np.asarray(w, dtype=np.float64).ravel()
    d = w.shape[0]
    fw = lambda y: f(t, y)
    f0 = fw(w)
    wl = w @ A
    return {
        "time": -time_derivative(lambda s: f(s, w), t, st.h_t),
        "generator": generator_apply(fw, np.zeros(d), np.eye(d), w, st),
        "lambda_linear": 0.5j * (wl @ gradient(fw, w, st.h_x)),
        "lambda_quadratic": -0.125 * (wl @ wl) * f0,
    }


def residual_levy_pde(t: float, w, Lambda, f: Callable, st: Stencil = Stencil()) -> complex:
    return complex(sum(levy_pde_terms(t, w, Lambda, f, st).values()))


# --------------------------------------------------------------------------
# general PDE of the generalized-signature characteristic function


def reduced_coordinates(d: int, n: int) -> slice:
    """Flat coordinates of T^{n-1} without the scalar: the domain of the PDE."""
    return slice(1, dim_truncated(d, n - 1))


def embed_state(y, d: int, n: int) -> np.ndarray:
    """(1, y, 0) in T^n from reduced coordinates y."""
    x = np.zeros(dim_truncated(d, n))
    x[0] = 1.0
    x[reduced_coordinates(d, n)] = y
    return x


def lambda_coefficients(L: LiftedDiffusion, lam: LinearFunctional, y) -> tuple:
    """(M_lam o mu_n, (M_lam o b_n^{(., j)})_j over reduced coordinates, lam^T b_n lam) at (1, y, 0)."""
    if (lam.d, lam.n) != (L.d, L.n):
        raise ValueError("functional and lifted model shapes differ")
    x = embed_state(y, L.d, L.n)
    mu = L.drift_batch(x)
    s = L.diffusion_batch(x)
    b = s @ s.T
    lc = lam.coeffs
    dom = reduced_coordinates(L.d, L.n)
    return lc @ mu, (lc @ b)[dom], lc @ b @ lc


def general_pde_terms(L: LiftedDiffusion, lam: LinearFunctional, f: Callable, t: float, y, st: Stencil = Stencil()) -> dict:
    """Terms of (-d_t + A_n) f + i(M o mu_n + sum_j M o b_n^{(.,j)} d_j) f - 1/2 (M^{(x)2} o b_n) f.

    ``f(t, y)`` takes y in the reduced coordinates of T^{n-1}.
    """
    y = np.asarray(y, dtype=np.float64).ravel()
    dom = reduced_coordinates(L.d, L.n)
    if y.shape != (dom.stop - dom.start,):
        raise ValueError(f"state must have {dom.stop - dom.start} reduced coordinates")
    x = embed_state(y, L.d, L.n)
    mu = L.drift_batch(x)[dom]
    s = L.diffusion_batch(x)[dom]
    b = s @ s.T
    m_mu, m_b, quad = lambda_coefficients(L, lam, y)
    fy = lambda z: f(t, z)
    f0 = fy(y)
    lin = 1j * m_mu * f0
    if y.size:
        lin = lin + 1j * (m_b @ gradient(fy, y, st.h_x))
        gen = generator_apply(fy, mu, b, y, st)
    else:
        gen = 0.0
    return {
        "time": -time_derivative(lambda r: f(r, y), t, st.h_t),
        "generator": gen,
        "lambda_linear": lin,
        "lambda_quadratic": -0.5 * quad * f0,
    }


def residual_general_pde(L: LiftedDiffusion, lam: LinearFunctional, f: Callable, point, st: Stencil = Stencil()) -> complex:
    t, y = point
    return complex(sum(general_pde_terms(L, lam, f, t, y, st).values()))


# --------------------------------------------------------------------------
# reports


@dataclass
class ResidualReport:
    points: list
    residuals: np.ndarray
    terms: dict = field(default_factory=dict)
    stencil: Stencil = Stencil()

    @property
    def max_abs(self) -> float:
        return float(np.max(np.abs(self.residuals))) if len(self.residuals) else 0.0

    @property
    def mean_abs(self) -> float:
        return float(np.mean(np.abs(self.residuals))) if len(self.residuals) else 0.0

    def to_dict(self) -> dict:
        return {
            "n_points": len(self.points),
            "max_abs_residual": self.max_abs,
            "mean_abs_residual": self.mean_abs,
            "h_t": self.stencil.h_t,
            "h_x": self.stencil.h_x,
            "terms_max_abs": {k: float(np.max(np.abs(v))) for k, v in self.terms.items()},
            "points": [
                {"t": float(t), "w": [float(v) for v in w], "residual": [float(r.real), float(r.imag)]}
                for (t, w), r in zip(self.points, self.residuals)
            ],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)


def _grid(times, values, d):
    return [(float(t), np.array(w, dtype=np.float64)) for t in times for w in itertools.product(values, repeat=d)]


def levy_residual_grid(
    Lambda, f: Callable, times=(0.2, 0.5, 1.0), values=(-1.0, 0.0, 1.0), st: Stencil = Stencil()
) -> ResidualReport:
    A = check_skew(Lambda)
    pts = _grid(times, values, A.shape[0])
    per = [levy_pde_terms(t, w, A, f, st) for t, w in pts]
    return _report(pts, per, st)


def general_residual_grid(
    L: LiftedDiffusion, lam: LinearFunctional, f: Callable, points: Sequence, st: Stencil = Stencil()
) -> ResidualReport:
    per = [general_pde_terms(L, lam, f, t, y, st) for t, y in points]
    return _report(list(points), per, st)


def _report(pts, per, st) -> ResidualReport:
    terms = {k: np.array([p[k] for p in per], dtype=np.complex128) for k in TERMS}
    res = np.array([sum(p[k] for k in TERMS) for p in per], dtype=np.complex128)
    return ResidualReport(pts, res, terms, st)
