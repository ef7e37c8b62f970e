"""Monte Carlo estimators of characteristic functions of signatures.

All estimators average exp(i * phase) over independent paths and report the
standard error of the real and imaginary parts separately.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .diffusion import (
    DiffusionModel,
    LiftedDiffusion,
    SimConfig,
    SimulationError,
    block_normals,
    run_blocks,
    simulate_generalized_signature,
    simulate_signature,
)
from .levy_closed_form import check_skew
from .tensor_algebra import LinearFunctional, TruncatedTensor, level_slices


@dataclass(frozen=True)
class ComplexEstimate:
    mean: complex
    stderr_re: float
    stderr_im: float
    n_samples: int

    @classmethod
    def from_samples(cls, z: np.ndarray) -> "ComplexEstimate":
        z = np.asarray(z, dtype=np.complex128).ravel()
        n = z.size
        if n == 0:
            raise ValueError("no samples")
        mean = complex(z.mean())
        if n > 1:
            se_re = float(np.std(z.real, ddof=1) / np.sqrt(n))
            se_im = float(np.std(z.imag, ddof=1) / np.sqrt(n))
        else:
            se_re = se_im = float("inf")
        return cls(mean, se_re, se_im, n)

    @classmethod
    def exact(cls, value: complex, n: int) -> "ComplexEstimate":
        return cls(complex(value), 0.0, 0.0, n)

    @property
    def combined_stderr(self) -> float:
        return float(np.hypot(self.stderr_re, self.stderr_im))

    def z_score(self, other) -> float:
        """|difference| over combined standard error; ``other`` is a number or an estimate."""
        if isinstance(other, ComplexEstimate):
            se = np.hypot(self.combined_stderr, other.combined_stderr)
            diff = abs(self.mean - other.mean)
        else:
            se = self.combined_stderr
            diff = abs(self.mean - complex(other))
        if se == 0:
            return 0.0 if diff == 0 else float("inf")
        return float(diff / se)

    def agrees_with(self, other, k: float = 3.0) -> bool:
        return self.z_score(other) <= k

    def to_record(self, params: dict | None = None, cfg: SimConfig | None = None) -> dict:
        rec = {
            "params": params or {},
            "mean_re": self.mean.real,
            "mean_im": self.mean.imag,
            "stderr_re": self.stderr_re,
            "stderr_im": self.stderr_im,
            "n_paths": self.n_samples,
        }
        if cfg is not None:
            rec.update(steps=cfg.steps, seed=cfg.seed)
        return rec


@dataclass(frozen=True)
class LevyParams:
    """Skew matrix Lambda, linear weights mu, horizon t, start point w."""

    Lambda: np.ndarray
    mu_vec: np.ndarray
    t: float
    w: np.ndarray | None = None

    def __post_init__(self):
        A = check_skew(self.Lambda)
        d = A.shape[0]
        mu = np.zeros(d) if self.mu_vec is None else np.asarray(self.mu_vec, dtype=np.float64).ravel()
        w = np.zeros(d) if self.w is None else np.asarray(self.w, dtype=np.float64).ravel()
        if mu.shape != (d,) or w.shape != (d,):
            raise ValueError(f"mu and w must have length {d}")
        if not self.t >= 0:
            raise ValueError("t must be >= 0")
        object.__setattr__(self, "Lambda", A)
        object.__setattr__(self, "mu_vec", mu)
        object.__setattr__(self, "w", w)

    @property
    def d(self) -> int:
        return self.Lambda.shape[0]


def _check_failures(failed: np.ndarray):
    if np.any(failed):
        raise SimulationError(f"{int(failed.sum())} simulated paths became non-finite")


# --------------------------------------------------------------------------
# lambda tilde


def lambda_tilde(lam: LinearFunctional, x, n: int | None = None) -> LinearFunctional:
    """Functional with M_lam(S) = M_tilde((1, x, 0, ...) (x) S) for every S.

    Backward recursion over word length: tilde_I = lam_I at full length and
    tilde_I = lam_I - sum_j x_j tilde_{jI} below, including the empty word.
    """
    n = lam.n if n is None else n
    if n != lam.n:
        raise ValueError(f"functional has degree {lam.n}, expected {n}")
    d = lam.d
    x = np.asarray(x, dtype=np.float64).ravel()
    if x.shape != (d,):
        raise ValueError(f"x must have length {d}")
    sl = level_slices(d, n)
    src = lam.coeffs
    out = np.array(src, dtype=np.result_type(src, np.float64))
    for k in range(n - 1, -1, -1):
        upper = out[sl[k + 1]].reshape(d, d**k)  # first letter j, remainder I
        out[sl[k]] = src[sl[k]] - x @ upper
    return LinearFunctional(TruncatedTensor(d, n, out))


def start_tensor(x, n: int) -> TruncatedTensor:
    """(1, x, 0, ..., 0) in T^n."""
    x = np.asarray(x, dtype=np.float64).ravel()
    return TruncatedTensor.from_levels([1.0, x], x.shape[0], n)


# --------------------------------------------------------------------------
# estimators on signature paths


def _phase_estimate(lam: LinearFunctional, tensors: np.ndarray, shift=0.0) -> ComplexEstimate:
    phase = np.real_if_close(tensors @ lam.coeffs - shift)
    return ComplexEstimate.from_samples(np.exp(1j * phase))


def estimate_cf_signature(m: DiffusionModel, x, lam: LinearFunctional, t: float, cfg: SimConfig) -> ComplexEstimate:
    """E[exp(i M_lam(S^n(X_[0,t])))] with X_0 = x, via chord signatures."""
    if not np.any(lam.coeffs):
        return ComplexEstimate.exact(1.0, cfg.n_paths)
    if t <= 0:
        return ComplexEstimate.exact(np.exp(1j * lam.coeffs[0]), cfg.n_paths)
    cfg = cfg.replace(t_end=float(t), scheme="chord_signature")
    bundle = simulate_signature(m, x, lam.n, cfg)
    _check_failures(bundle.failed)
    return _phase_estimate(lam, bundle.terminal_tensor)


def estimate_cf_generalized(
    L: LiftedDiffusion, x0: TruncatedTensor, lam: LinearFunctional, t: float, cfg: SimConfig
) -> ComplexEstimate:
    """E[exp(i M_lam(X_t - X_0))] for the generalized-signature process from x0."""
    if t <= 0 or not np.any(lam.coeffs):
        return ComplexEstimate.exact(1.0, cfg.n_paths)
    cfg = cfg.replace(t_end=float(t))
    bundle = simulate_generalized_signature(L, x0, cfg)
    _check_failures(bundle.failed)
    return _phase_estimate(lam, bundle.terminal_tensor, shift=x0.coeffs @ lam.coeffs)


# --------------------------------------------------------------------------
# Brownian motion with Lévy area


def _levy_block(Lambda, w, dt, steps, keep, seed, block, nb):
    """Increments W_t - W_0 and areas 1/2 int W^T Lambda dW at the kept steps."""
    d = Lambda.shape[0]
    dW = np.sqrt(dt) * block_normals(seed, block, nb, steps, d)
    W = np.cumsum(dW, axis=1)
    W_prev = W - dW + w
    # left point equals midpoint here: dW^T Lambda dW = 0 for skew Lambda
    area = 0.5 * np.cumsum(np.einsum("psi,psi->ps", W_prev @ Lambda, dW), axis=1)
    idx = np.asarray(keep) - 1
    return W[:, idx].transpose(1, 0, 2), area[:, idx].T


def _grid_steps(times: Sequence[float], cfg: SimConfig) -> tuple[SimConfig, list[int]]:
    """Step indices of ``times`` on a grid with spacing dt = max(times)/cfg.steps."""
    times = [float(t) for t in times]
    if any(t <= 0 for t in times):
        raise ValueError("times must be positive")
    t_max = max(times)
    cfg = cfg.replace(t_end=t_max)
    ks = []
    for t in times:
        k = round(t / cfg.dt)
        if k < 1 or abs(k * cfg.dt - t) > 1e-9 * t_max:
            raise ValueError(f"time {t} is not on the simulation grid of spacing {cfg.dt}")
        ks.append(k)
    return cfg, ks


def simulate_bm_levy(Lambda, w, times: Sequence[float], cfg: SimConfig):
    """Joint samples of (W_t - w, L_t) for W_0 = w at each requested time.

    Returns:
        (increments, areas) with shapes (len(times), N, d) and (len(times), N).
    """
    A = check_skew(Lambda)
    w = np.zeros(A.shape[0]) if w is None else np.asarray(w, dtype=np.float64).ravel()
    cfg, ks = _grid_steps(times, cfg)
    keep = sorted(set(ks))

    def work(block, nb):
        return _levy_block(A, w, cfg.dt, cfg.steps, keep, cfg.seed, block, nb)

    incs, areas = run_blocks(cfg.n_paths, cfg.threads, work)
    pos = [keep.index(k) for k in ks]
    return incs[pos], areas[pos]


def estimate_joint_bm_levy_times(Lambda, mu_vec, times: Sequence[float], cfg: SimConfig, w=None) -> list[ComplexEstimate]:
    """E[exp(i <mu, W_t - W_0> + i L_t)] at several times from one set of paths."""
    A = check_skew(Lambda)
    mu = np.asarray(mu_vec, dtype=np.float64).ravel()
    incs, areas = simulate_bm_levy(A, w, times, cfg)
    out = []
    for inc, area in zip(incs, areas):
        phase = inc @ mu + area
        if not np.all(np.isfinite(phase)):
            raise SimulationError("non-finite Lévy area samples")
        out.append(ComplexEstimate.from_samples(np.exp(1j * phase)))
    return out


def estimate_joint_bm_levy(p: LevyParams, cfg: SimConfig) -> ComplexEstimate:
    """E[exp(i <mu, W_t - w> + i L_t)], L_t = 1/2 int_0^t W^T Lambda dW, W_0 = w."""
    if p.t == 0:
        return ComplexEstimate.exact(1.0, cfg.n_paths)
    if not np.any(p.Lambda) and not np.any(p.mu_vec):
        return ComplexEstimate.exact(1.0, cfg.n_paths)
    return estimate_joint_bm_levy_times(p.Lambda, p.mu_vec, [p.t], cfg.replace(t_end=p.t), w=p.w)[0]


def estimate_cf_levy(t: float, w, Lambda, cfg: SimConfig) -> ComplexEstimate:
    """E[exp(i L_t) | W_0 = w]."""
    A = check_skew(Lambda)
    return estimate_joint_bm_levy(LevyParams(A, np.zeros(A.shape[0]), t, w), cfg)
