"""Experiment configuration: one JSON document per experiment."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .diffusion import SimConfig, model_from_spec
from .levy_closed_form import check_skew, random_skew

LEVY_PRESETS = {
    "d2": {"Lambda": [[0.0, -1.0], [1.0, 0.0]], "mu": [0.0, 0.0]},
    "zero": {"Lambda": [[0.0, 0.0], [0.0, 0.0]], "mu": [0.5, -0.3]},
    "degenerate3": {"Lambda": [[0.0, 1.0, 0.0], [-1.0, 0.0, 0.0], [0.0, 0.0, 0.0]], "mu": [0.3, 0.2, 0.6]},
}


class ConfigError(ValueError):
    pass


@dataclass
class ExperimentConfig:
    experiment: str = "levy-table"
    model: dict = field(default_factory=lambda: {"id": "bm", "d": 2})
    levy: dict = field(default_factory=lambda: {"preset": "d2"})
    lam: list | None = None
    x0: list | None = None
    t_grid: list = field(default_factory=lambda: [0.25, 0.5, 1.0])
    sim: dict = field(default_factory=lambda: SimConfig().to_dict())
    stencil: dict = field(default_factory=lambda: {"h_t": 1e-3, "h_x": 1e-3})
    w_values: list = field(default_factory=lambda: [-1.0, 0.0, 1.0])
    taylor: dict = field(default_factory=lambda: {"m_max": 24})
    identities: dict = field(default_factory=lambda: {"cases": 100, "tol": 1e-9, "max_d": 3, "max_n": 4, "link": False})
    out: str | None = None

    def __post_init__(self):
        self.validate()

    # validation ---------------------------------------------------------

    def validate(self):
        try:
            self.sim_config()
            model_from_spec(self.model)
            self.levy_params()
        except (ValueError, TypeError) as exc:
            raise ConfigError(str(exc)) from None
        if not self.t_grid or any(float(t) <= 0 for t in self.t_grid):
            raise ConfigError("t_grid must be a non-empty list of positive times")
        if float(self.identities.get("tol", 1e-9)) < 0:
            raise ConfigError("identities.tol must be non-negative")
        if int(self.taylor.get("m_max", 24)) < 1:
            raise ConfigError("taylor.m_max must be >= 1")
        if float(self.stencil.get("h_t", 1e-3)) <= 0 or float(self.stencil.get("h_x", 1e-3)) <= 0:
            raise ConfigError("stencil steps must be positive")
        rot = self.levy.get("rotation")
        if rot is not None:
            M = np.asarray(rot, dtype=np.float64)
            if M.ndim != 2 or M.shape[0] != M.shape[1] or np.linalg.norm(M @ M.T - np.eye(M.shape[0])) > 1e-10:
                raise ConfigError("levy.rotation must be an orthogonal matrix")

    # accessors ----------------------------------------------------------

    def sim_config(self, seed: int | None = None, threads: int | None = None) -> SimConfig:
        s = dict(self.sim)
        if seed is not None:
            s["seed"] = seed
        if threads is not None:
            s["threads"] = threads
        return SimConfig(**s)

    def levy_params(self) -> tuple[np.ndarray, np.ndarray]:
        """(Lambda, mu) from a preset, explicit entries, or a seeded random draw."""
        spec = dict(self.levy)
        if "preset" in spec:
            name = spec["preset"]
            if name not in LEVY_PRESETS:
                raise ValueError(f"unknown levy preset '{name}' (known: {sorted(LEVY_PRESETS)})")
            spec = {**LEVY_PRESETS[name], **{k: v for k, v in spec.items() if k != "preset"}}
        if "random_d" in spec:
            rng = np.random.default_rng(int(spec.get("random_seed", 0)))
            d = int(spec["random_d"])
            A = random_skew(rng, d)
            mu = np.asarray(spec.get("mu", rng.uniform(-1, 1, d)), dtype=np.float64)
        else:
            if "Lambda" not in spec:
                raise ValueError("levy section needs 'preset', 'Lambda' or 'random_d'")
            A = check_skew(spec["Lambda"])
            mu = np.asarray(spec.get("mu", np.zeros(A.shape[0])), dtype=np.float64)
        if mu.shape != (A.shape[0],):
            raise ValueError(f"levy.mu must have length {A.shape[0]}")
        rot = spec.get("rotation")
        if rot is not None:
            M = np.asarray(rot, dtype=np.float64)
            A, mu = M @ A @ M.T, M @ mu
        return A, mu

    def functional(self, d: int):
        """lambda from ``lam`` levels, defaulting to (0, 0, Lambda/2)."""
        from .tensor_algebra import LinearFunctional

        if self.lam is None:
            A, _ = self.levy_params()
            return LinearFunctional.from_levels([0.0, np.zeros(A.shape[0]), 0.5 * A], A.shape[0])
        return LinearFunctional.from_levels(self.lam, d)

    def start_point(self, d: int) -> np.ndarray:
        x = np.zeros(d) if self.x0 is None else np.asarray(self.x0, dtype=np.float64).ravel()
        if x.shape != (d,):
            raise ConfigError(f"x0 must have length {d}")
        return x

    # serialization ------------------------------------------------------

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_dict(cls, obj: dict) -> "ExperimentConfig":
        if not isinstance(obj, dict):
            raise ConfigError("config must be a JSON object")
        known = set(cls.__dataclass_fields__)
        extra = set(obj) - known
        if extra:
            raise ConfigError(f"unknown config fields: {sorted(extra)}")
        defaults = asdict(cls())
        merged = {**defaults, **obj}
        if isinstance(obj.get("sim"), dict):
            merged["sim"] = {**defaults["sim"], **obj["sim"]}
        if isinstance(obj.get("identities"), dict):
            merged["identities"] = {**defaults["identities"], **obj["identities"]}
        return cls(**merged)

    @classmethod
    def from_json(cls, text: str, source: str = "<config>") -> "ExperimentConfig":
        try:
            obj = json.loads(text)
        except json.JSONDecodeError as exc:
            lines = text.splitlines()
            context = lines[exc.lineno - 1] if 0 < exc.lineno <= len(lines) else ""
            raise ConfigError(f"{source}:{exc.lineno}:{exc.colno}: {exc.msg}\n    {context}\n    {' ' * (exc.colno - 1)}^") from None
        return cls.from_dict(obj)

    @classmethod
    def load(cls, path: str | Path) -> "ExperimentConfig":
        path = Path(path)
        return cls.from_json(path.read_text(), source=str(path))
