"""Closed forms for the characteristic function of Lévy area.

For a skew matrix Lambda and Brownian motion W, L_t = 1/2 int W^T Lambda dW.
Everything here reduces to the canonical form Lambda = O^T Sigma O, with Sigma
block diagonal: 2x2 blocks [[0, -eta_i], [eta_i, 0]] followed by a zero block.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg

SKEW_TOL = 1e-12


class DecompositionError(RuntimeError):
    pass


def check_skew(Lambda, tol: float = SKEW_TOL) -> np.ndarray:
    """Return Lambda as a float array, rejecting non-skew input."""
    A = np.atleast_2d(np.asarray(Lambda, dtype=np.float64))
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ValueError(f"Lambda must be square, got shape {A.shape}")
    if not np.all(np.isfinite(A)):
        raise ValueError("Lambda must be finite")
    norm = np.linalg.norm(A)
    if np.linalg.norm(A + A.T) > tol * max(norm, np.finfo(float).tiny):
        raise ValueError("Lambda is not skew-symmetric")
    return A


def canonical_sigma(eta, d: int) -> np.ndarray:
    """Block matrix with -eta_i above the diagonal in each plane."""
    S = np.zeros((d, d))
    for i, e in enumerate(eta):
        S[2 * i, 2 * i + 1] = -e
        S[2 * i + 1, 2 * i] = e
    return S


@dataclass(frozen=True)
class SkewCanonicalForm:
    O: np.ndarray
    eta: np.ndarray
    d0: int

    @property
    def d(self) -> int:
        return self.O.shape[0]

    @property
    def d1(self) -> int:
        return len(self.eta)

    @property
    def sigma(self) -> np.ndarray:
        return canonical_sigma(self.eta, self.d)

    def reconstruct(self) -> np.ndarray:
        return self.O.T @ self.sigma @ self.O


def skew_canonical_decomposition(Lambda, zero_tol: float = 1e-10) -> SkewCanonicalForm:
    """Orthogonal O and frequencies eta with Lambda = O^T Sigma O.

    Uses the real Schur form, which for a normal matrix is block diagonal with
    2x2 rotation generators and 1x1 zeros. Planes with |eta| <= zero_tol*||Lambda||
    are moved to the kernel. Each plane is oriented so that -eta sits above the
    diagonal, and planes are sorted by decreasing eta.
    """
    A = check_skew(Lambda)
    d = A.shape[0]
    norm = np.linalg.norm(A, 2) if d else 0.0
    if norm == 0.0:
        return SkewCanonicalForm(np.eye(d), np.zeros(0), d)
    T, Z = scipy.linalg.schur(A, output="real")
    planes, kernel = [], []
    k = 0
    while k < d:
        if k + 1 < d and abs(T[k + 1, k]) > 0.0:
            beta = 0.5 * (T[k, k + 1] - T[k + 1, k])  # Z^T A Z block ~ [[0, beta], [-beta, 0]]
            u, v = Z[:, k], Z[:, k + 1]
            if abs(beta) <= zero_tol * norm:
                kernel += [u, v]
            elif beta > 0:
                planes.append((beta, v, u))
            else:
                planes.append((-beta, u, v))
            k += 2
        else:
            kernel.append(Z[:, k])
            k += 1
    planes.sort(key=lambda p: -p[0])
    rows = [r for _, a, b in planes for r in (a, b)] + kernel
    O = np.array(rows).reshape(d, d)
    eta = np.array([p[0] for p in planes])
    form = SkewCanonicalForm(O, eta, len(kernel))
    if np.linalg.norm(form.reconstruct() - A) > 1e-10 * max(1.0, np.linalg.norm(A)):
        raise DecompositionError("canonical form does not reproduce Lambda to tolerance")
    if np.linalg.norm(O @ O.T - np.eye(d)) > 1e-12:
        raise DecompositionError("canonical basis is not orthonormal to tolerance")
    return form


@dataclass(frozen=True)
class ClosedFormFactors:
    """Ingredients of the closed form at time t.

    amplitude[i] = sech(eta_i t / 2), h[i] = -(eta_i / 4) tanh(eta_i t / 2),
    gaussian_exponent = -(t/2) * |kernel part of O mu|^2.
    """

    t: float
    eta: np.ndarray
    amplitude: np.ndarray
    h: np.ndarray
    plane_exponent: np.ndarray
    gaussian_exponent: float

    @property
    def value(self) -> float:
        return float(np.prod(self.amplitude) * np.exp(self.plane_exponent.sum() + self.gaussian_exponent))


def riccati_h(eta, t):
    """h(t) = -(eta/4) tanh(eta t / 2); solves h' = 2h^2 - eta^2/8 with h(0) = 0."""
    eta = np.asarray(eta, dtype=np.float64)
    return -(eta / 4.0) * np.tanh(0.5 * eta * t)


def closed_form_factors(t: float, mu_vec, form: SkewCanonicalForm) -> ClosedFormFactors:
    mu = np.asarray(mu_vec, dtype=np.float64).ravel()
    if mu.shape != (form.d,):
        raise ValueError(f"mu must have length {form.d}")
    y = form.O @ mu
    eta = form.eta
    d1 = form.d1
    pair_sq = y[0 : 2 * d1 : 2] ** 2 + y[1 : 2 * d1 : 2] ** 2
    th = np.tanh(0.5 * eta * t)
    plane = -(pair_sq / eta) * th if d1 else np.zeros(0)
    gauss = -0.5 * t * float(np.sum(y[2 * d1 :] ** 2))
    return ClosedFormFactors(float(t), eta, 1.0 / np.cosh(0.5 * eta * t), riccati_h(eta, t), plane, gauss)


def joint_cf_bm_levy_closed(t: float, mu_vec, Lambda, zero_tol: float = 1e-10) -> complex:
    """E[exp(i <mu, W_t> + i L_t)] for W started at 0."""
    if t < 0:
        raise ValueError("t must be >= 0")
    form = skew_canonical_decomposition(Lambda, zero_tol)
    return complex(closed_form_factors(t, mu_vec, form).value)


def levy_cf_conditional_direct(t: float, w, Lambda, zero_tol: float = 1e-10) -> complex:
    """E[exp(i L_t) | W_0 = w] from the plane-wise formula in w.

    Kernel directions of Lambda do not enter, so this also holds for singular Lambda.
    """
    form = skew_canonical_decomposition(Lambda, zero_tol)
    z = form.O @ np.asarray(w, dtype=np.float64).ravel()
    d1 = form.d1
    pair_sq = z[0 : 2 * d1 : 2] ** 2 + z[1 : 2 * d1 : 2] ** 2
    val = np.prod(1.0 / np.cosh(0.5 * form.eta * t)) * np.exp(np.sum(riccati_h(form.eta, t) * pair_sq))
    return complex(val)


def levy_cf_conditional_closed(t: float, w, Lambda, zero_tol: float = 1e-10) -> complex:
    """E[exp(i L_t) | W_0 = w].

    Invertible Lambda uses the plane-wise formula directly; otherwise the
    translation link Psi(t, 1/2 w^T Lambda, Lambda) is used.
    """
    A = check_skew(Lambda)
    form = skew_canonical_decomposition(A, zero_tol)
    if form.d0 == 0:
        return levy_cf_conditional_direct(t, w, A, zero_tol)
    mu = 0.5 * (np.asarray(w, dtype=np.float64).ravel() @ A)
    return complex(closed_form_factors(t, mu, form).value)


def rotate_parameters(mu, Lambda, M, tol: float = 1e-10):
    """(M mu, M Lambda M^T) for orthogonal M."""
    M = np.asarray(M, dtype=np.float64)
    if M.ndim != 2 or M.shape[0] != M.shape[1] or np.linalg.norm(M @ M.T - np.eye(M.shape[0])) > tol:
        raise ValueError("M must be orthogonal")
    A = check_skew(Lambda)
    return M @ np.asarray(mu, dtype=np.float64), M @ A @ M.T


def random_skew(rng: np.random.Generator, d: int, scale: float = 2.0) -> np.ndarray:
    """Upper entries uniform on [-scale, scale], completed by antisymmetry."""
    U = np.triu(rng.uniform(-scale, scale, size=(d, d)), 1)
    return U - U.T


def random_orthogonal(rng: np.random.Generator, d: int) -> np.ndarray:
    from scipy.stats import ortho_group

    return ortho_group.rvs(d, random_state=rng) if d > 1 else np.array([[rng.choice([-1.0, 1.0])]])
