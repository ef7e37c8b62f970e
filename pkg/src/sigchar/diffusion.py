"""Itô diffusions, their generalized-signature lift, and Monte Carlo simulation.

Randomness is organised in fixed blocks of ``PATH_BLOCK`` paths. Block ``b``
draws from a Philox stream keyed by ``(seed, b)`` and lays its normals out
path-major, so the noise of path ``i`` depends only on ``(seed, i)``. Blocks
may run on any number of threads; results are assembled in block order, which
makes every output independent of the thread count.
"""

from __future__ import annotations

import logging
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .tensor_algebra import TruncatedTensor, dim_truncated, level_slices, mul_segment_exp_flat

log = logging.getLogger(__name__)

PATH_BLOCK = 1024
SCHEMES = ("chord_signature", "euler_maruyama_lifted")


class SimulationError(RuntimeError):
    """Raised when simulated paths become non-finite."""


# --------------------------------------------------------------------------
# models


@dataclass(frozen=True)
class DiffusionModel:
    """dX = mu(X) dt + sigma(X) dW with W a d'-dimensional Brownian motion.

    ``drift`` maps (..., d) -> (..., d) and ``diffusion`` maps
    (..., d) -> (..., d, d'). Both must accept batched input.
    """

    d: int
    d_prime: int
    drift: Callable[[np.ndarray], np.ndarray]
    diffusion: Callable[[np.ndarray], np.ndarray]
    is_constant_coefficient: bool = False
    name: str = "custom"
    params: dict = field(default_factory=dict)

    def b(self, x) -> np.ndarray:
        """Diffusion matrix sigma sigma^T at x (batched)."""
        s = self.diffusion(np.asarray(x, dtype=np.float64))
        return s @ np.swapaxes(s, -1, -2)

    def to_spec(self) -> dict:
        if self.name == "custom":
            raise ValueError("custom models carry callables and cannot be serialized")
        return {"id": self.name, **self.params}


def constant_coefficient(mu, sigma, name: str = "constant") -> DiffusionModel:
    mu = np.asarray(mu, dtype=np.float64).ravel()
    sigma = np.atleast_2d(np.asarray(sigma, dtype=np.float64))
    d = mu.shape[0]
    if sigma.shape[0] != d:
        raise ValueError(f"sigma must have {d} rows, got shape {sigma.shape}")
    mu.setflags(write=False)
    sigma.setflags(write=False)

    def drift(x):
        return np.broadcast_to(mu, np.shape(x)[:-1] + (d,))

    def diffusion(x):
        return np.broadcast_to(sigma, np.shape(x)[:-1] + sigma.shape)

    params = {"mu": mu.tolist(), "sigma": sigma.tolist()} if name == "constant" else {}
    return DiffusionModel(d, sigma.shape[1], drift, diffusion, True, name, params)


def bm(d: int) -> DiffusionModel:
    """Standard d-dimensional Brownian motion."""
    m = constant_coefficient(np.zeros(d), np.eye(d), name="bm")
    return DiffusionModel(m.d, m.d_prime, m.drift, m.diffusion, True, "bm", {"d": int(d)})


def bm_drift(c) -> DiffusionModel:
    """Brownian motion with constant drift c."""
    c = np.asarray(c, dtype=np.float64).ravel()
    m = constant_coefficient(c, np.eye(c.shape[0]), name="bm_drift")
    return DiffusionModel(m.d, m.d_prime, m.drift, m.diffusion, True, "bm_drift", {"c": c.tolist()})


def scalar_linear(a: float, b: float) -> DiffusionModel:
    """Geometric Brownian motion dX = a X dt + b X dW in one dimension."""
    a, b = float(a), float(b)

    def drift(x):
        return a * np.asarray(x)

    def diffusion(x):
        return (b * np.asarray(x))[..., None]

    return DiffusionModel(1, 1, drift, diffusion, False, "scalar_linear", {"a": a, "b": b})


def model_from_spec(spec: dict) -> DiffusionModel:
    """Build a built-in model from a JSON-style dict with an ``id`` key."""
    if not isinstance(spec, dict) or "id" not in spec:
        raise ValueError(f"model spec needs an 'id' field, got {spec!r}")
    kind = spec["id"]
    try:
        if kind == "bm":
            return bm(int(spec.get("d", 2)))
        if kind == "bm_drift":
            return bm_drift(spec["c"])
        if kind == "scalar_linear":
            return scalar_linear(spec["a"], spec["b"])
        if kind == "constant":
            return constant_coefficient(spec["mu"], spec["sigma"])
    except KeyError as exc:
        raise ValueError(f"model '{kind}' is missing parameter {exc}") from None
    raise ValueError(f"unknown model id '{kind}' (expected bm, bm_drift, scalar_linear, constant)")


# --------------------------------------------------------------------------
# generalized-signature lift


class LiftedDiffusion:
    """Itô coefficients of the generalized-signature process on T^n(R^d).

    Degree i of the drift is x_{i-1} (x) mu(x_1) + 1/2 x_{i-2} (x) b(x_1), where
    x_k is the degree-k block of the state and blocks of negative degree are
    zero. Degree i of the diffusion applied to w in R^{d'} is
    x_{i-1} (x) (sigma(x_1) w). Degree 0 never moves.
    """

    def __init__(self, base: DiffusionModel, n: int):
        if n < 1:
            raise ValueError(f"lift degree must be >= 1, got n={n}")
        self.base = base
        self.n = int(n)
        self.d = base.d
        self.d_prime = base.d_prime
        self.dim = dim_truncated(self.d, self.n)
        self._slices = level_slices(self.d, self.n)

    def _x1(self, flat):
        return flat[..., self._slices[1]]

    def drift_batch(self, flat: np.ndarray) -> np.ndarray:
        flat = np.asarray(flat)
        x1 = np.real(self._x1(flat))
        mu = self.base.drift(x1)
        bhat = self.base.b(x1).reshape(x1.shape[:-1] + (self.d**2,))
        out = np.zeros(flat.shape, dtype=np.result_type(flat, np.float64))
        batch = flat.shape[:-1]
        for i in range(1, self.n + 1):
            lo = flat[..., self._slices[i - 1]]
            out[..., self._slices[i]] += (lo[..., :, None] * mu[..., None, :]).reshape(batch + (-1,))
            if i >= 2:
                lo2 = flat[..., self._slices[i - 2]]
                out[..., self._slices[i]] += 0.5 * (lo2[..., :, None] * bhat[..., None, :]).reshape(batch + (-1,))
        return out

    def diffusion_batch(self, flat: np.ndarray) -> np.ndarray:
        """Matrix sigma_n(x) of shape (..., D_n, d')."""
        flat = np.asarray(flat)
        x1 = np.real(self._x1(flat))
        sig = self.base.diffusion(x1)  # (..., d, d')
        batch = flat.shape[:-1]
        out = np.zeros(batch + (self.dim, self.d_prime), dtype=np.result_type(flat, np.float64))
        for i in range(1, self.n + 1):
            lo = flat[..., self._slices[i - 1]]
            block = lo[..., :, None, None] * sig[..., None, :, :]
            out[..., self._slices[i], :] = block.reshape(batch + (-1, self.d_prime))
        return out

    def drift(self, x: TruncatedTensor) -> TruncatedTensor:
        self._check(x)
        return TruncatedTensor(self.d, self.n, self.drift_batch(x.coeffs))

    def diffusion(self, x: TruncatedTensor) -> np.ndarray:
        self._check(x)
        return self.diffusion_batch(x.coeffs)

    def b_matrix(self, x: TruncatedTensor) -> np.ndarray:
        s = self.diffusion(x)
        return s @ s.T

    def _check(self, x: TruncatedTensor):
        if (x.d, x.n) != (self.d, self.n):
            raise ValueError(f"state must live in T^{self.n}(R^{self.d}), got d={x.d}, n={x.n}")


def lift_generalized_signature(m: DiffusionModel, n: int) -> LiftedDiffusion:
    return LiftedDiffusion(m, n)


# --------------------------------------------------------------------------
# simulation


@dataclass(frozen=True)
class SimConfig:
    t_end: float = 1.0
    steps: int = 1000
    n_paths: int = 200_000
    seed: int = 0
    scheme: str = "chord_signature"
    threads: int = 1

    def __post_init__(self):
        if not (self.t_end > 0 and np.isfinite(self.t_end)):
            raise ValueError(f"t_end must be positive, got {self.t_end}")
        if int(self.steps) < 1:
            raise ValueError(f"steps must be >= 1, got {self.steps}")
        if int(self.n_paths) < 1:
            raise ValueError(f"n_paths must be >= 1, got {self.n_paths}")
        if not 0 <= int(self.seed) < 2**64:
            raise ValueError(f"seed must be an unsigned 64-bit integer, got {self.seed}")
        if self.scheme not in SCHEMES:
            raise ValueError(f"unknown scheme '{self.scheme}', expected one of {SCHEMES}")
        if int(self.threads) < 1:
            raise ValueError(f"threads must be >= 1, got {self.threads}")

    @property
    def dt(self) -> float:
        return self.t_end / self.steps

    def replace(self, **kw) -> "SimConfig":
        from dataclasses import replace

        return replace(self, **kw)

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in ("t_end", "steps", "n_paths", "seed", "scheme", "threads")}


def resolve_threads(threads: int | None) -> int:
    """Explicit value, else SIGCHAR_THREADS, else 1."""
    if threads is not None:
        return int(threads)
    env = os.environ.get("SIGCHAR_THREADS")
    return int(env) if env else 1


@dataclass
class TrajectoryBundle:
    """Terminal (and optional checkpoint) states of simulated paths.

    ``x_at`` and ``tensor_at`` have a leading checkpoint axis aligned with
    ``checkpoint_steps``; the last checkpoint is always the terminal step.
    """

    t_end: float
    steps: int
    checkpoint_steps: tuple[int, ...]
    x_at: np.ndarray
    tensor_at: np.ndarray | None
    failed: np.ndarray
    d: int
    n: int | None = None

    @property
    def terminal_x(self) -> np.ndarray:
        return self.x_at[-1]

    @property
    def terminal_tensor(self) -> np.ndarray | None:
        return None if self.tensor_at is None else self.tensor_at[-1]

    @property
    def times(self) -> np.ndarray:
        return np.asarray(self.checkpoint_steps) * (self.t_end / self.steps)

    def tensors(self, k: int = -1) -> list[TruncatedTensor]:
        return [TruncatedTensor(self.d, self.n, row) for row in self.tensor_at[k]]


def block_rng(seed: int, block: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(int(seed), spawn_key=(int(block),))))


def block_normals(seed: int, block: int, n_block: int, steps: int, width: int) -> np.ndarray:
    """Standard normals of shape (n_block, steps, width) for one block."""
    return block_rng(seed, block).standard_normal((n_block, steps, width))


def run_blocks(n_paths: int, threads: int, work: Callable[[int, int], tuple]) -> list[np.ndarray]:
    """Apply ``work(block, n_block)`` to every block and concatenate results in block order.

    Per-block outputs put the path axis first when 1-D and second otherwise
    (checkpoint-major arrays of shape (K, n_block, ...)).
    """
    n_blocks = -(-n_paths // PATH_BLOCK)
    sizes = [min(PATH_BLOCK, n_paths - b * PATH_BLOCK) for b in range(n_blocks)]
    if threads <= 1 or n_blocks == 1:
        parts = [work(b, nb) for b, nb in enumerate(sizes)]
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(work, range(n_blocks), sizes))
    return [np.concatenate(items, axis=0 if items[0].ndim == 1 else 1) for items in zip(*parts)]


def _checkpoints(steps: int, record_steps: Sequence[int] | None) -> tuple[int, ...]:
    pts = sorted(set(int(s) for s in (record_steps or ())) | {steps})
    if pts[0] < 0 or pts[-1] > steps:
        raise ValueError(f"checkpoint steps must lie in 0..{steps}")
    return tuple(pts)


def _euler_increments(model: DiffusionModel, x0: np.ndarray, dW: np.ndarray, dt: float, keep: Sequence[int]):
    """Euler-Maruyama for one block.

    Returns the states at the ``keep`` steps (K, nb, d), all chord increments
    (nb, steps, d), and the failure mask.
    """
    nb, steps, _ = dW.shape
    if model.is_constant_coefficient:
        mu = model.drift(x0)
        sig = model.diffusion(x0)
        dx = mu * dt + dW @ sig.T
        path = x0 + np.cumsum(dx, axis=1)
        states = np.concatenate([np.broadcast_to(x0, (nb, 1, model.d)), path], axis=1)
    else:
        states = np.empty((nb, steps + 1, model.d))
        states[:, 0] = x0
        x = np.broadcast_to(x0, (nb, model.d)).copy()
        with np.errstate(all="ignore"):
            for k in range(steps):
                x = x + model.drift(x) * dt + np.einsum("...ij,...j->...i", model.diffusion(x), dW[:, k])
                states[:, k + 1] = x
        dx = np.diff(states, axis=1)
    failed = ~np.all(np.isfinite(states), axis=(1, 2))
    return states[:, list(keep)].transpose(1, 0, 2), dx, failed


def _report_failures(failed: np.ndarray, what: str):
    nf = int(failed.sum())
    if nf:
        idx = np.flatnonzero(failed)[:5].tolist()
        log.warning("%d of %d %s paths became non-finite (first indices %s)", nf, failed.size, what, idx)


def simulate_ito(m: DiffusionModel, x0, cfg: SimConfig, record_steps: Sequence[int] | None = None) -> TrajectoryBundle:
    """Euler-Maruyama paths of X on a uniform grid of ``cfg.steps`` steps."""
    x0 = np.asarray(x0, dtype=np.float64).ravel()
    if x0.shape != (m.d,):
        raise ValueError(f"x0 must have length {m.d}")
    keep = _checkpoints(cfg.steps, record_steps)
    sqdt = np.sqrt(cfg.dt)

    def work(block, nb):
        dW = sqdt * block_normals(cfg.seed, block, nb, cfg.steps, m.d_prime)
        xs, _, failed = _euler_increments(m, x0, dW, cfg.dt, keep)
        return xs, failed

    xs, failed = run_blocks(cfg.n_paths, cfg.threads, work)
    _report_failures(failed, "Euler-Maruyama")
    return TrajectoryBundle(cfg.t_end, cfg.steps, keep, xs, None, failed, m.d)


def _lifted_em_block(L: LiftedDiffusion, x0: np.ndarray, dW: np.ndarray, dt: float, keep):
    nb, steps, _ = dW.shape
    sl = L._slices
    x = np.broadcast_to(x0, (nb, L.dim)).copy()
    out = np.empty((len(keep), nb, L.dim))
    pos = {s: j for j, s in enumerate(keep)}
    if 0 in pos:
        out[pos[0]] = x
    const = L.base.is_constant_coefficient
    if const:
        mu0 = L.base.drift(x0[sl[1]])
        sig0 = L.base.diffusion(x0[sl[1]])
        bhat0 = (sig0 @ sig0.T).ravel()
    with np.errstate(all="ignore"):
        for k in range(steps):
            if const:
                mu_dt = mu0 * dt
                noise = dW[:, k] @ sig0.T
                bhat = bhat0 * (0.5 * dt)
            else:
                x1 = x[:, sl[1]]
                mu_dt = L.base.drift(x1) * dt
                s = L.base.diffusion(x1)
                noise = np.einsum("...ij,...j->...i", s, dW[:, k])
                bhat = (s @ np.swapaxes(s, -1, -2)).reshape(nb, -1) * (0.5 * dt)
            inc = mu_dt + noise
            # top-down so that lower levels still hold the previous state
            for i in range(L.n, 0, -1):
                lo = x[:, sl[i - 1]]
                upd = (lo[:, :, None] * inc[:, None, :]).reshape(nb, -1)
                if i >= 2:
                    lo2 = x[:, sl[i - 2]]
                    b = np.broadcast_to(bhat, (nb, L.d**2))
                    upd += (lo2[:, :, None] * b[:, None, :]).reshape(nb, -1)
                x[:, sl[i]] += upd
            if k + 1 in pos:
                out[pos[k + 1]] = x
    failed = ~np.all(np.isfinite(out), axis=(0, 2))
    return out, failed


def simulate_generalized_signature(
    L: LiftedDiffusion,
    x0_tensor: TruncatedTensor,
    cfg: SimConfig,
    record_steps: Sequence[int] | None = None,
) -> TrajectoryBundle:
    """Simulate the generalized-signature process started at ``x0_tensor``.

    ``chord_signature`` simulates the base process from the degree-1 part of
    the start, takes the exact signature S of its chord path and returns
    x0 (x) S. ``euler_maruyama_lifted`` steps the Itô-form lifted SDE directly.
    """
    if (x0_tensor.d, x0_tensor.n) != (L.d, L.n):
        raise ValueError(f"start tensor must live in T^{L.n}(R^{L.d})")
    if x0_tensor.coeffs[0] != 1:
        raise ValueError("start tensor must have degree-0 component 1")
    x0 = np.real(x0_tensor.coeffs).astype(np.float64)
    x1 = x0[L._slices[1]]
    keep = _checkpoints(cfg.steps, record_steps)
    sqdt = np.sqrt(cfg.dt)

    def work(block, nb):
        dW = sqdt * block_normals(cfg.seed, block, nb, cfg.steps, L.d_prime)
        if cfg.scheme == "euler_maruyama_lifted":
            tens, failed = _lifted_em_block(L, x0, dW, cfg.dt, keep)
            xs = tens[:, :, L._slices[1]]
            return xs, tens, failed
        xs, dx, failed = _euler_increments(L.base, x1, dW, cfg.dt, keep)
        tens = chord_fold(dx, L.n, x0, keep)
        return xs, tens, failed

    xs, tens, failed = run_blocks(cfg.n_paths, cfg.threads, work)
    _report_failures(failed, cfg.scheme)
    return TrajectoryBundle(cfg.t_end, cfg.steps, keep, xs, tens, failed, L.d, L.n)


def simulate_signature(
    m: DiffusionModel, x0, n: int, cfg: SimConfig, record_steps: Sequence[int] | None = None
) -> TrajectoryBundle:
    """Chord signatures S^n of X_[0,t] with X_0 = x0 (started from the unit tensor)."""
    x0 = np.asarray(x0, dtype=np.float64).ravel()
    if x0.shape != (m.d,):
        raise ValueError(f"x0 must have length {m.d}")
    keep = _checkpoints(cfg.steps, record_steps)
    sqdt = np.sqrt(cfg.dt)

    def work(block, nb):
        dW = sqdt * block_normals(cfg.seed, block, nb, cfg.steps, m.d_prime)
        xs, dx, failed = _euler_increments(m, x0, dW, cfg.dt, keep)
        return xs, chord_fold(dx, n, None, keep), failed

    xs, tens, failed = run_blocks(cfg.n_paths, cfg.threads, work)
    _report_failures(failed, "chord")
    return TrajectoryBundle(cfg.t_end, cfg.steps, keep, xs, tens, failed, m.d, n)


def chord_fold(dx: np.ndarray, n: int, x0: np.ndarray | None, keep: Sequence[int]) -> np.ndarray:
    """x0 (x) S(chord path) at the requested step counts.

    Args:
        dx: chord increments, shape (nb, steps, d).
        n: truncation degree.
        x0: flat start tensor (D_n,) or None for the unit.
        keep: sorted step counts at which to record.

    Returns:
        Array of shape (len(keep), nb, D_n).
    """
    from .tensor_algebra import mul_flat

    nb, steps, d = dx.shape
    s = np.zeros((nb, dim_truncated(d, n)))
    s[:, 0] = 1.0
    out = np.empty((len(keep),) + s.shape)
    pos = {st: j for j, st in enumerate(keep)}
    if 0 in pos:
        out[pos[0]] = s
    with np.errstate(all="ignore"):
        for k in range(steps):
            mul_segment_exp_flat(s, dx[:, k], d, n)
            if k + 1 in pos:
                out[pos[k + 1]] = s
    if x0 is not None:
        out = mul_flat(x0, out, d, n)
    return out
