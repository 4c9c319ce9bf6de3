"""Discrete update rules and the trajectory runner.

Conventions that matter for comparisons with the continuous systems:

* The parameter update divides by the pre-update second-moment estimate
  (v_k, not v_{k+1}).
* Adam's second-moment correction at step k uses 1 - beta2^k, which is
  undefined at k = 0; we take v_hat = v there and start correcting at k = 1.
* One gradient is drawn per step and never reused across optimizers.
* States broadcast: theta/m/v of shape (seeds, d) advance a whole ensemble
  in lockstep (the step index k is shared).
"""
from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .ngos import GradientOracle
from .recording import NonFiniteError, StateView, TestFunctionSet, TrajectoryRecord, _Recorder

__all__ = [
    "HyperParams",
    "OptimizerState",
    "ALGORITHMS",
    "rmsprop_step",
    "adam_step",
    "sgd_step",
    "step_function",
    "svag_transform_hparams",
    "run_discrete",
    "NonFiniteError",
]

ALGORITHMS = ("rmsprop", "adam", "sgd")


@dataclass(frozen=True)
class HyperParams:
    eta: float
    beta: float = 0.999
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 0.0

    def __post_init__(self):
        if not self.eta > 0:
            raise ValueError("eta must be positive")
        for name in ("beta", "beta1", "beta2"):
            val = getattr(self, name)
            if not 0.0 <= val <= 1.0:
                raise ValueError(f"{name} out of [0,1]: {val}")
        if self.epsilon < 0:
            raise ValueError("epsilon must be nonnegative")


@dataclass(frozen=True)
class OptimizerState:
    """Iterate (theta, m, v) at step k; arrays share a trailing dimension d."""

    theta: np.ndarray
    m: np.ndarray
    v: np.ndarray
    k: int = 0

    def __post_init__(self):
        theta = np.asarray(self.theta, dtype=float)
        m = np.broadcast_to(np.asarray(self.m, dtype=float), theta.shape).copy()
        v = np.broadcast_to(np.asarray(self.v, dtype=float), theta.shape).copy()
        if np.any(v < 0):
            raise ValueError("v must be nonnegative coordinatewise")
        if self.k < 0:
            raise ValueError("step index must be nonnegative")
        object.__setattr__(self, "theta", theta)
        object.__setattr__(self, "m", m)
        object.__setattr__(self, "v", v)

    @classmethod
    def initial(cls, theta0, v0, m0=0.0) -> "OptimizerState":
        theta0 = np.asarray(theta0, dtype=float)
        return cls(theta=theta0, m=np.broadcast_to(m0, theta0.shape),
                   v=np.broadcast_to(v0, theta0.shape), k=0)


def rmsprop_step(state: OptimizerState, g: np.ndarray, hp: HyperParams) -> OptimizerState:
    """theta' = theta - eta * g / (sqrt(v) + eps); v' = beta v + (1-beta) g^2."""
    g = np.asarray(g, dtype=float)
    denom = np.sqrt(state.v) + hp.epsilon
    if np.any(denom == 0.0):
        raise ValueError("sqrt(v) + epsilon vanishes in some coordinate")
    theta = state.theta - hp.eta * g / denom
    v = hp.beta * state.v + (1.0 - hp.beta) * g * g
    return replace(state, theta=theta, v=v, k=state.k + 1)


def adam_step(state: OptimizerState, g: np.ndarray, hp: HyperParams) -> OptimizerState:
    """Momentum and second-moment updates with bias correction.

    The correction for v uses the pre-update v at exponent k (identity at
    k = 0 by convention); the correction for m uses the post-update m at
    exponent k + 1.
    """
    g = np.asarray(g, dtype=float)
    k = state.k
    bc1 = 1.0 - hp.beta1 ** (k + 1)
    if bc1 == 0.0:
        raise ValueError("beta1 = 1 makes the momentum correction undefined")
    m = hp.beta1 * state.m + (1.0 - hp.beta1) * g
    if k == 0:
        v_hat = state.v
    else:
        bc2 = 1.0 - hp.beta2**k
        if bc2 == 0.0:
            raise ValueError("beta2 = 1 makes the second-moment correction undefined")
        v_hat = state.v / bc2
    denom = np.sqrt(v_hat) + hp.epsilon
    if np.any(denom == 0.0):
        raise ValueError("sqrt(v_hat) + epsilon vanishes in some coordinate")
    theta = state.theta - hp.eta * (m / bc1) / denom
    v = hp.beta2 * state.v + (1.0 - hp.beta2) * g * g
    return replace(state, theta=theta, m=m, v=v, k=k + 1)


def sgd_step(state: OptimizerState, g: np.ndarray, hp: HyperParams) -> OptimizerState:
    g = np.asarray(g, dtype=float)
    return replace(state, theta=state.theta - hp.eta * g, k=state.k + 1)


_STEPS = {"rmsprop": rmsprop_step, "adam": adam_step, "sgd": sgd_step}


def step_function(algo: str):
    try:
        return _STEPS[algo]
    except KeyError:
        raise ValueError(f"unknown algorithm {algo!r}; expected one of {ALGORITHMS}") from None


def svag_transform_hparams(hp: HyperParams, ell: float, algo: str) -> HyperParams:
    """Hyperparameters for simulating at amplified noise scale ell.

    eta shrinks by ell, epsilon grows by ell, and each decay used by the
    algorithm moves toward 1 so that (1 - beta) shrinks by ell^2.
    """
    if ell < 1:
        raise ValueError("ell must be >= 1")
    if algo not in ("rmsprop", "adam"):
        raise ValueError(f"noise-amplified simulation applies to rmsprop/adam, not {algo!r}")
    kwargs = dict(eta=hp.eta / ell, epsilon=hp.epsilon * ell)
    if algo == "rmsprop":
        kwargs["beta"] = 1.0 - (1.0 - hp.beta) / ell**2
    else:
        kwargs["beta1"] = 1.0 - (1.0 - hp.beta1) / ell**2
        kwargs["beta2"] = 1.0 - (1.0 - hp.beta2) / ell**2
    return replace(hp, **kwargs)


def effective_time_step(algo: str, eta: float) -> float:
    """Continuous time advanced per discrete step: eta for SGD, eta^2 otherwise."""
    return eta if algo == "sgd" else eta * eta


def run_discrete(
    problem,
    oracle: GradientOracle,
    algo: str,
    hp: HyperParams,
    init: OptimizerState,
    steps: int,
    fns: TestFunctionSet,
    checkpoints,
    rng: np.random.Generator,
    cov=None,
) -> TrajectoryRecord:
    """Run an ensemble of discrete trajectories and record test functions.

    ``init.theta`` of shape (seeds, d) advances all seeds through a shared
    vectorized noise stream; a (d,) initial state runs a single trajectory.
    Checkpoints are step indices in [0, steps]; recorded states carry
    u = v / sigma_effective^2 so discrete and continuous records share a
    domain. Any non-finite value aborts with the offending step index.
    """
    step = step_function(algo)
    checkpoints = sorted(set(int(c) for c in checkpoints))
    if checkpoints and (checkpoints[0] < 0 or checkpoints[-1] > steps):
        raise ValueError("checkpoints must lie in [0, steps]")
    state = init
    if state.theta.ndim == 1:
        state = OptimizerState(state.theta[None, :], state.m[None, :], state.v[None, :], state.k)

    sigma = oracle.sigma_effective
    dt_e = effective_time_step(algo, hp.eta)
    adaptive = algo in ("rmsprop", "adam")
    recorder = _Recorder(fns)

    def snapshot(s: OptimizerState) -> None:
        u = s.v / sigma**2 if (adaptive and sigma > 0) else None
        view = StateView(
            theta=s.theta,
            t=s.k * dt_e,
            k=s.k,
            problem=problem,
            m=s.m if algo == "adam" else None,
            u=u,
            cov=cov,
        )
        recorder.record(view)

    want = set(checkpoints)
    if 0 in want:
        snapshot(state)
    for n in range(1, steps + 1):
        g = oracle.sample(state.theta, rng)
        state = step(state, g, hp)
        if not (np.all(np.isfinite(state.theta)) and np.all(np.isfinite(state.v)) and np.all(np.isfinite(state.m))):
            raise NonFiniteError(state.k, f"algo={algo}, eta={hp.eta}")
        if n in want:
            snapshot(state)
    meta = {"algo": algo, "eta": hp.eta, "sigma": sigma, "steps": steps}
    return recorder.build(meta)
