"""The two fixed neural-ODE parameterizations: plant surrogate and controller.

Surrogate: 9-dim latent, dxi/dt = tanh(W1 (xi, u) + b1), output phi_hat = w2.xi + b2.
Controller: 5-dim latent, dxi/dt = W1 (xi, phi, phi_d) + b1 (linear layer),
output u squashed into the input range through tanh, so saturation is
structural and no external clipping is ever needed.

Flattening order for both parameter vectors is W1 row-major, then b1,
then w2, then b2; checkpoints rely on this layout.
"""

import json
from dataclasses import dataclass

import numpy as np

MODEL_LATENT_DIM = 9
MODEL_IN_DIM = MODEL_LATENT_DIM + 1          # latent + pressure input
MODEL_N_PARAMS = MODEL_LATENT_DIM * MODEL_IN_DIM + MODEL_LATENT_DIM + MODEL_LATENT_DIM + 1  # 109

CTRL_LATENT_DIM = 5
CTRL_IN_DIM = CTRL_LATENT_DIM + 2            # latent + measured angle + desired angle
CTRL_N_PARAMS = CTRL_LATENT_DIM * CTRL_IN_DIM + CTRL_LATENT_DIM + CTRL_LATENT_DIM + 1       # 46

CHECKPOINT_FORMAT = 1


@dataclass(frozen=True)
class InputRange:
    """Feasible difference-pressure input interval [bar]."""

    u_min: float = -6.0
    u_max: float = 6.0

    def __post_init__(self):
        if not self.u_min < self.u_max:
            raise ValueError("u_min must be below u_max")

    @property
    def lo(self):
        return self.u_min

    @property
    def hi(self):
        return self.u_max


@dataclass(frozen=True)
class OutputRange:
    """Feasible joint-angle interval [rad]."""

    phi_min: float = -1.0
    phi_max: float = 1.0

    def __post_init__(self):
        if not self.phi_min < self.phi_max:
            raise ValueError("phi_min must be below phi_max")

    @property
    def lo(self):
        return self.phi_min

    @property
    def hi(self):
        return self.phi_max


def _check_finite(name, arr):
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite entries")


@dataclass(frozen=True)
class ModelParams:
    """Plant-surrogate parameters; 109 scalars total."""

    w1: np.ndarray  # (9, 10)
    b1: np.ndarray  # (9,)
    w2: np.ndarray  # (9,)
    b2: float

    def __post_init__(self):
        object.__setattr__(self, "w1", np.asarray(self.w1, dtype=float))
        object.__setattr__(self, "b1", np.asarray(self.b1, dtype=float))
        object.__setattr__(self, "w2", np.asarray(self.w2, dtype=float))
        if self.w1.shape != (MODEL_LATENT_DIM, MODEL_IN_DIM):
            raise ValueError(f"w1 must be {(MODEL_LATENT_DIM, MODEL_IN_DIM)}, got {self.w1.shape}")
        if self.b1.shape != (MODEL_LATENT_DIM,) or self.w2.shape != (MODEL_LATENT_DIM,):
            raise ValueError("b1/w2 must be 9-vectors")
        for name in ("w1", "b1", "w2"):
            _check_finite(name, getattr(self, name))
        if not np.isfinite(self.b2):
            raise ValueError("b2 is non-finite")
        assert self.flatten().shape == (MODEL_N_PARAMS,)

    def flatten(self) -> np.ndarray:
        return np.concatenate([self.w1.ravel(), self.b1, self.w2, [self.b2]])

    @classmethod
    def from_flat(cls, theta) -> "ModelParams":
        theta = np.asarray(theta, dtype=float)
        if theta.shape != (MODEL_N_PARAMS,):
            raise ValueError(f"model parameter vector must have {MODEL_N_PARAMS} entries, got {theta.shape}")
        n = MODEL_LATENT_DIM * MODEL_IN_DIM
        return cls(
            w1=theta[:n].reshape(MODEL_LATENT_DIM, MODEL_IN_DIM).copy(),
            b1=theta[n:n + MODEL_LATENT_DIM].copy(),
            w2=theta[n + MODEL_LATENT_DIM:n + 2 * MODEL_LATENT_DIM].copy(),
            b2=float(theta[-1]),
        )


@dataclass(frozen=True)
class ControllerParams:
    """Feedback-controller parameters; 46 scalars total."""

    w1: np.ndarray  # (5, 7)
    b1: np.ndarray  # (5,)
    w2: np.ndarray  # (5,)
    b2: float

    def __post_init__(self):
        object.__setattr__(self, "w1", np.asarray(self.w1, dtype=float))
        object.__setattr__(self, "b1", np.asarray(self.b1, dtype=float))
        object.__setattr__(self, "w2", np.asarray(self.w2, dtype=float))
        if self.w1.shape != (CTRL_LATENT_DIM, CTRL_IN_DIM):
            raise ValueError(f"w1 must be {(CTRL_LATENT_DIM, CTRL_IN_DIM)}, got {self.w1.shape}")
        if self.b1.shape != (CTRL_LATENT_DIM,) or self.w2.shape != (CTRL_LATENT_DIM,):
            raise ValueError("b1/w2 must be 5-vectors")
        for name in ("w1", "b1", "w2"):
            _check_finite(name, getattr(self, name))
        if not np.isfinite(self.b2):
            raise ValueError("b2 is non-finite")
        assert self.flatten().shape == (CTRL_N_PARAMS,)

    def flatten(self) -> np.ndarray:
        return np.concatenate([self.w1.ravel(), self.b1, self.w2, [self.b2]])

    @classmethod
    def from_flat(cls, theta) -> "ControllerParams":
        theta = np.asarray(theta, dtype=float)
        if theta.shape != (CTRL_N_PARAMS,):
            raise ValueError(f"controller parameter vector must have {CTRL_N_PARAMS} entries, got {theta.shape}")
        n = CTRL_LATENT_DIM * CTRL_IN_DIM
        return cls(
            w1=theta[:n].reshape(CTRL_LATENT_DIM, CTRL_IN_DIM).copy(),
            b1=theta[n:n + CTRL_LATENT_DIM].copy(),
            w2=theta[n + CTRL_LATENT_DIM:n + 2 * CTRL_LATENT_DIM].copy(),
            b2=float(theta[-1]),
        )


def model_rhs(params: ModelParams, xi: np.ndarray, u: float) -> np.ndarray:
    """Latent derivative of the surrogate: tanh(W1 (xi, u) + b1)."""
    aug = np.append(xi, u)
    return np.tanh(params.w1 @ aug + params.b1)


def model_output(params: ModelParams, xi: np.ndarray) -> float:
    """Predicted angle [rad]: affine readout of the latent state."""
    return float(params.w2 @ xi + params.b2)


def controller_rhs(params: ControllerParams, xi: np.ndarray, phi: float, phi_d: float) -> np.ndarray:
    """Latent derivative of the controller: W1 (xi, phi, phi_d) + b1 (no activation)."""
    aug = np.concatenate([xi, [phi, phi_d]])
    return params.w1 @ aug + params.b1


def controller_output(params: ControllerParams, xi: np.ndarray, rng: InputRange = InputRange()) -> float:
    """Control pressure [bar], squashed strictly inside (u_min, u_max)."""
    ubar = np.tanh(float(params.w2 @ xi + params.b2))
    return (rng.u_max - rng.u_min) * (0.5 * ubar + 0.5) + rng.u_min


def init_model_params(seed: int) -> ModelParams:
    """Weights ~ U(-1/sqrt(fan_in), 1/sqrt(fan_in)), biases zero."""
    rng = np.random.default_rng(seed)
    s1 = 1.0 / np.sqrt(MODEL_IN_DIM)
    s2 = 1.0 / np.sqrt(MODEL_LATENT_DIM)
    return ModelParams(
        w1=rng.uniform(-s1, s1, (MODEL_LATENT_DIM, MODEL_IN_DIM)),
        b1=np.zeros(MODEL_LATENT_DIM),
        w2=rng.uniform(-s2, s2, MODEL_LATENT_DIM),
        b2=0.0,
    )


def init_controller_params(seed: int) -> ControllerParams:
    rng = np.random.default_rng(seed)
    s1 = 1.0 / np.sqrt(CTRL_IN_DIM)
    s2 = 1.0 / np.sqrt(CTRL_LATENT_DIM)
    return ControllerParams(
        w1=rng.uniform(-s1, s1, (CTRL_LATENT_DIM, CTRL_IN_DIM)),
        b1=np.zeros(CTRL_LATENT_DIM),
        w2=rng.uniform(-s2, s2, CTRL_LATENT_DIM),
        b2=0.0,
    )


class ModelField:
    """Surrogate vector field with analytic VJPs, for the generic gradient engine.

    params is the flat 109-vector; state is the 9-dim latent; the exogenous
    input u is the pressure command.
    """

    dim = MODEL_LATENT_DIM

    def f(self, theta, x, u):
        n = MODEL_LATENT_DIM * MODEL_IN_DIM
        w1 = theta[:n].reshape(MODEL_LATENT_DIM, MODEL_IN_DIM)
        b1 = theta[n:n + MODEL_LATENT_DIM]
        aug = np.append(x, u)
        return np.tanh(w1 @ aug + b1)

    def vjp(self, theta, x, u, w):
        n = MODEL_LATENT_DIM * MODEL_IN_DIM
        w1 = theta[:n].reshape(MODEL_LATENT_DIM, MODEL_IN_DIM)
        b1 = theta[n:n + MODEL_LATENT_DIM]
        aug = np.append(x, u)
        t = np.tanh(w1 @ aug + b1)
        wt = w * (1.0 - t * t)
        gtheta = np.zeros(MODEL_N_PARAMS)
        gtheta[:n] = np.outer(wt, aug).ravel()
        gtheta[n:n + MODEL_LATENT_DIM] = wt
        gx = w1[:, :MODEL_LATENT_DIM].T @ wt
        return gtheta, gx


def save_checkpoint(params, path):
    """Write a flat-scalar JSON checkpoint; round-trips doubles exactly."""
    if isinstance(params, ModelParams):
        kind, dims = "model", {"latent": MODEL_LATENT_DIM, "input": MODEL_IN_DIM}
    elif isinstance(params, ControllerParams):
        kind, dims = "controller", {"latent": CTRL_LATENT_DIM, "input": CTRL_IN_DIM}
    else:
        raise TypeError(f"cannot checkpoint {type(params)}")
    payload = {
        "format_version": CHECKPOINT_FORMAT,
        "kind": kind,
        "dims": dims,
        "layout": "w1 row-major, b1, w2, b2",
        "theta": [float(v) for v in params.flatten()],
    }
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=1)
        fh.write("\n")


def load_checkpoint(path):
    with open(path) as fh:
        payload = json.load(fh)
    if payload.get("format_version") != CHECKPOINT_FORMAT:
        raise ValueError(f"unsupported checkpoint format: {payload.get('format_version')}")
    theta = np.array(payload["theta"], dtype=float)
    kind = payload.get("kind")
    if kind == "model":
        return ModelParams.from_flat(theta)
    if kind == "controller":
        return ControllerParams.from_flat(theta)
    raise ValueError(f"unknown checkpoint kind: {kind}")
