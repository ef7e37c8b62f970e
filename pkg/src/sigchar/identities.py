"""Pathwise algebraic identity suites on random chord paths."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .charfn_mc import lambda_tilde, start_tensor
from .path_signature import PiecewiseLinearPath, concat_paths, path_signature, reverse_path
from .tensor_algebra import LinearFunctional, TruncatedTensor, pair, tensor_inverse


@dataclass(frozen=True)
class SuiteResult:
    name: str
    max_error: float
    tol: float
    cases: int

    @property
    def passed(self) -> bool:
        return bool(self.max_error <= self.tol)

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return f"{status} {self.name}: max error {self.max_error:.3e} over {self.cases} cases (tol {self.tol:.0e})"


def random_chord_path(rng: np.random.Generator, d: int, steps: int = 12, dt: float | None = None) -> PiecewiseLinearPath:
    """Chord path through a Brownian skeleton on [0, 1]."""
    dt = 1.0 / steps if dt is None else dt
    incs = rng.standard_normal((steps, d)) * np.sqrt(dt)
    start = rng.standard_normal(d)
    return PiecewiseLinearPath(np.vstack([start, start + np.cumsum(incs, axis=0)]))


def _scaled_err(a: TruncatedTensor, b: TruncatedTensor) -> float:
    scale = max(1.0, float(np.max(np.abs(a.coeffs))), float(np.max(np.abs(b.coeffs))))
    return float(np.max(np.abs(a.coeffs - b.coeffs)) / scale)


def _draw_shape(rng, max_d, max_n):
    return int(rng.integers(1, max_d + 1)), int(rng.integers(1, max_n + 1))


def chen_suite(rng, cases=100, max_d=3, max_n=4, tol=1e-9) -> SuiteResult:
    err = 0.0
    for _ in range(cases):
        d, n = _draw_shape(rng, max_d, max_n)
        p, q = random_chord_path(rng, d), random_chord_path(rng, d, steps=7)
        lhs = path_signature(concat_paths(p, q), n)
        rhs = path_signature(p, n) @ path_signature(q, n)
        err = max(err, _scaled_err(lhs, rhs))
    return SuiteResult("chen", err, tol, cases)


def reversal_suite(rng, cases=100, max_d=3, max_n=4, tol=1e-9) -> SuiteResult:
    err = 0.0
    for _ in range(cases):
        d, n = _draw_shape(rng, max_d, max_n)
        p = random_chord_path(rng, d)
        prod = path_signature(p, n) @ path_signature(reverse_path(p), n)
        err = max(err, _scaled_err(prod, TruncatedTensor.unit(d, n)))
    return SuiteResult("time_reversal", err, tol, cases)


def refinement_suite(rng, cases=100, max_d=3, max_n=4, tol=1e-9) -> SuiteResult:
    err = 0.0
    for _ in range(cases):
        d, n = _draw_shape(rng, max_d, max_n)
        p = random_chord_path(rng, d)
        seg = int(rng.integers(0, len(p) - 1))
        q = p.refine(seg, float(rng.uniform(0.05, 0.95)))
        err = max(err, _scaled_err(path_signature(p, n), path_signature(q, n)))
    return SuiteResult("refinement", err, tol, cases)


def inverse_suite(rng, cases=100, max_d=3, max_n=4, tol=1e-9) -> SuiteResult:
    err = 0.0
    for _ in range(cases):
        d, n = _draw_shape(rng, max_d, max_n)
        a = path_signature(random_chord_path(rng, d), n)
        err = max(err, _scaled_err(a @ tensor_inverse(a), TruncatedTensor.unit(d, n)))
    return SuiteResult("inverse", err, tol, cases)


def lambda_tilde_suite(rng, cases=100, max_d=3, max_n=4, tol=1e-9) -> SuiteResult:
    """M_lam(S) = M_tilde((1, x, 0, ...) (x) S) with x the path's start point."""
    err = 0.0
    for _ in range(cases):
        d, n = _draw_shape(rng, max_d, max_n)
        p = random_chord_path(rng, d)
        x = p.vertices[0]
        lam = LinearFunctional(TruncatedTensor(d, n, rng.standard_normal(path_signature(p, n).size)))
        S = path_signature(p, n)
        X = start_tensor(x, n) @ S
        lhs = pair(lam, S)
        rhs = pair(lambda_tilde(lam, x), X)
        err = max(err, abs(lhs - rhs) / max(1.0, abs(lhs)))
    return SuiteResult("lambda_tilde", err, tol, cases)


SUITES = {
    "chen": chen_suite,
    "time_reversal": reversal_suite,
    "refinement": refinement_suite,
    "inverse": inverse_suite,
    "lambda_tilde": lambda_tilde_suite,
}


def run_all(seed: int = 0, cases: int = 100, max_d: int = 3, max_n: int = 4, tol: float = 1e-9) -> list[SuiteResult]:
    if tol < 0:
        raise ValueError("tolerance must be non-negative")
    out = []
    for k, (name, suite) in enumerate(SUITES.items()):
        rng = np.random.default_rng([seed, k])
        out.append(suite(rng, cases, max_d, max_n, tol))
    return out


def link_suite(seed: int = 0, draws: int = 5, n_paths: int = 20_000, steps: int = 200, t: float = 1.0, z_tol: float = 5.0):
    """Monte Carlo check of L_n(t, x; lam) = LL_n(t, (1, x, 0); tilde) * exp(i M_tilde((1, x, 0))).

    The left side uses chord signatures, the right side the lifted Euler scheme
    with an independent seed. Reported error is the largest z-score.
    """
    from .charfn_mc import estimate_cf_generalized, estimate_cf_signature
    from .diffusion import LiftedDiffusion, SimConfig, bm

    rng = np.random.default_rng([seed, 99])
    d, n = 2, 2
    L = LiftedDiffusion(bm(d), n)
    worst = 0.0
    for k in range(draws):
        x = rng.uniform(-1, 1, d)
        lam = LinearFunctional(TruncatedTensor(d, n, rng.uniform(-0.5, 0.5, 7)))
        tilde = lambda_tilde(lam, x)
        x0 = start_tensor(x, n)
        cfg = SimConfig(t_end=t, steps=steps, n_paths=n_paths, seed=seed + 2 * k)
        lhs = estimate_cf_signature(L.base, x, lam, t, cfg)
        rhs = estimate_cf_generalized(L, x0, tilde, t, cfg.replace(seed=seed + 2 * k + 1, scheme="euler_maruyama_lifted"))
        phase = np.exp(1j * pair(tilde, x0))
        se = np.hypot(lhs.combined_stderr, rhs.combined_stderr)
        worst = max(worst, abs(lhs.mean - rhs.mean * phase) / se)
    return SuiteResult("link_mc_zscore", float(worst), z_tol, draws)
