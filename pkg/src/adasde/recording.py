"""Test functions over recorded states and the trajectory record they fill.

Discrete runs and integrated paths are recorded through the same interface:
at each checkpoint the runner builds a StateView (theta, optional momentum,
optional noise-normalized second moment u, continuous time t) and evaluates
every registered test function on it, one value per seed.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .problems import CovarianceSpec, Problem

__all__ = ["StateView", "TestFunction", "TestFunctionSet", "TrajectoryRecord", "NonFiniteError"]


class NonFiniteError(RuntimeError):
    """A NaN or infinity appeared while advancing a trajectory."""

    def __init__(self, step: int, detail: str = ""):
        self.step = step
        super().__init__(f"non-finite state at step {step}" + (f": {detail}" if detail else ""))


@dataclass(frozen=True)
class StateView:
    """Snapshot handed to test functions; arrays have shape (seeds, d)."""

    theta: np.ndarray
    t: float
    k: int
    problem: Problem
    m: np.ndarray | None = None
    u: np.ndarray | None = None
    cov: CovarianceSpec | None = None


@dataclass(frozen=True)
class TestFunction:
    __test__ = False  # not a pytest collectable

    name: str
    fn: Callable[[StateView], np.ndarray]

    def __call__(self, view: StateView) -> np.ndarray:
        return np.asarray(self.fn(view), dtype=float)


def _coord(which: str, i: int) -> TestFunction:
    def fn(view: StateView) -> np.ndarray:
        arr = getattr(view, which)
        if arr is None:
            raise ValueError(f"state has no {which} block")
        return arr[:, i]

    return TestFunction(f"{which}_{i}", fn)


def _theta_norm_sq(view: StateView) -> np.ndarray:
    return np.sum(view.theta**2, axis=-1)


def _loss(view: StateView) -> np.ndarray:
    return view.problem.loss(view.theta)


def _grad_norm(view: StateView) -> np.ndarray:
    g = view.problem.full_gradient(view.theta)
    return np.sqrt(np.sum(g**2, axis=-1))


def _cov_trace(view: StateView) -> np.ndarray:
    if view.cov is None:
        raise ValueError("state has no covariance spec; cov_trace unavailable")
    diag = view.cov.diagonal(view.problem, view.theta)
    return np.broadcast_to(np.sum(diag, axis=-1), view.theta.shape[:-1]).copy()


class TestFunctionSet:
    """Ordered, named scalar functions of the recorded state."""

    __test__ = False  # not a pytest collectable

    def __init__(self, functions: list[TestFunction]):
        names = [f.name for f in functions]
        if len(set(names)) != len(names):
            raise ValueError("duplicate test function names")
        self.functions = list(functions)

    @property
    def names(self) -> list[str]:
        return [f.name for f in self.functions]

    def evaluate(self, view: StateView) -> dict[str, np.ndarray]:
        out = {}
        for f in self.functions:
            vals = f(view)
            if not np.all(np.isfinite(vals)):
                raise ValueError(f"test function {f.name!r} produced non-finite values")
            out[f.name] = vals
        return out

    @classmethod
    def defaults(
        cls,
        dim: int,
        include_m: bool = False,
        include_u: bool = True,
        with_cov_trace: bool = True,
        max_coords: int = 4,
    ) -> "TestFunctionSet":
        """Built-in set: coordinates, ||theta||^2, loss, ||grad||, tr Sigma, u_i, m_i."""
        fns: list[TestFunction] = [_coord("theta", i) for i in range(min(dim, max_coords))]
        fns.append(TestFunction("theta_norm_sq", _theta_norm_sq))
        fns.append(TestFunction("loss", _loss))
        fns.append(TestFunction("grad_norm", _grad_norm))
        if with_cov_trace:
            fns.append(TestFunction("cov_trace", _cov_trace))
        if include_u:
            fns.extend(_coord("u", i) for i in range(min(dim, max_coords)))
        if include_m:
            fns.extend(_coord("m", i) for i in range(min(dim, max_coords)))
        return cls(fns)

    @classmethod
    def from_names(cls, names: list[str], dim: int) -> "TestFunctionSet":
        """Build a set from the CLI-facing function names."""
        lookup: dict[str, TestFunction] = {
            "theta_norm_sq": TestFunction("theta_norm_sq", _theta_norm_sq),
            "loss": TestFunction("loss", _loss),
            "grad_norm": TestFunction("grad_norm", _grad_norm),
            "cov_trace": TestFunction("cov_trace", _cov_trace),
        }
        fns = []
        for name in names:
            if name in lookup:
                fns.append(lookup[name])
                continue
            parts = name.rsplit("_", 1)
            if len(parts) == 2 and parts[0] in ("theta", "u", "m") and parts[1].isdigit():
                i = int(parts[1])
                if i >= dim:
                    raise ValueError(f"test function {name!r} indexes beyond dimension {dim}")
                fns.append(_coord(parts[0], i))
            else:
                raise ValueError(f"unknown test function {name!r}")
        return cls(fns)


@dataclass
class TrajectoryRecord:
    """Per-checkpoint test-function samples over seeds.

    ``values[name]`` has shape (checkpoints, seeds); ``times`` is strictly
    increasing and shared by every function.
    """

    times: np.ndarray
    steps: np.ndarray
    values: dict[str, np.ndarray]
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        self.steps = np.asarray(self.steps)
        if np.any(np.diff(self.times) <= 0):
            raise ValueError("checkpoint times must be strictly increasing")
        counts = {v.shape for v in self.values.values()}
        if len(counts) > 1:
            raise ValueError("all functions must share the same (checkpoints, seeds) shape")
        for name, v in self.values.items():
            if v.shape[0] != self.times.size:
                raise ValueError(f"function {name!r} has {v.shape[0]} rows, expected {self.times.size}")

    @property
    def seed_count(self) -> int:
        first = next(iter(self.values.values()))
        return first.shape[1]

    @property
    def names(self) -> list[str]:
        return list(self.values)

    def mean(self, name: str) -> np.ndarray:
        return np.mean(self.values[name], axis=1)

    def se(self, name: str) -> np.ndarray:
        v = self.values[name]
        return np.std(v, axis=1, ddof=1) / np.sqrt(v.shape[1])


class _Recorder:
    """Accumulates checkpoint evaluations into a TrajectoryRecord."""

    def __init__(self, fns: TestFunctionSet):
        self.fns = fns
        self.times: list[float] = []
        self.steps: list[int] = []
        self.rows: dict[str, list[np.ndarray]] = {name: [] for name in fns.names}

    def record(self, view: StateView) -> None:
        self.times.append(view.t)
        self.steps.append(view.k)
        for name, vals in self.fns.evaluate(view).items():
            self.rows[name].append(vals)

    def build(self, meta: dict | None = None) -> TrajectoryRecord:
        values = {name: np.stack(rows) for name, rows in self.rows.items()}
        return TrajectoryRecord(
            times=np.array(self.times),
            steps=np.array(self.steps, dtype=int),
            values=values,
            meta=meta or {},
        )
