"""Fixed-step RK4 trajectory engine with exact reverse-mode gradients.

Gradients are computed by backpropagating through the unrolled RK4 graph
(discretize-then-differentiate), so they are the exact derivatives of the
discrete loss that the optimizer actually sees. Adam and global-norm
clipping live here too since they share the parameter-vector conventions.
"""

from dataclasses import dataclass, replace

import numpy as np


class IntegrationError(RuntimeError):
    """A non-finite value appeared during integration."""

    def __init__(self, msg, step=None, stage=None):
        super().__init__(msg)
        self.step = step
        self.stage = stage


@dataclass(frozen=True)
class Grid:
    """Uniform time grid: samples at t0, t0+dt, ..., t0+T (T/dt + 1 samples)."""

    T: float
    dt: float = 0.01
    t0: float = 0.0

    def __post_init__(self):
        if self.dt <= 0:
            raise ValueError(f"dt must be positive, got {self.dt}")
        steps = self.T / self.dt
        if abs(steps - round(steps)) > 1e-9 or self.T <= 0:
            raise ValueError(f"T={self.T} is not an integer number of dt={self.dt} steps")

    @property
    def n_steps(self) -> int:
        return int(round(self.T / self.dt))

    @property
    def n_samples(self) -> int:
        return self.n_steps + 1

    def times(self) -> np.ndarray:
        return self.t0 + self.dt * np.arange(self.n_samples)


@dataclass
class AdamState:
    """Adam moments plus hyperparameters; step_count is the number of updates taken."""

    m: np.ndarray
    v: np.ndarray
    step_count: int = 0
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


@dataclass
class GradResult:
    loss: float
    grad: np.ndarray


def rk4_step(rhs, x, t, dt, u=0.0):
    """One classical RK4 step of dx/dt = rhs(x, t, u) with u held constant.

    Accepts scalar or vector state; returns the same kind. Raises
    IntegrationError if any stage evaluates to a non-finite value.
    """
    scalar = np.isscalar(x) or np.ndim(x) == 0
    x = np.asarray(x, dtype=float)
    ks = []
    for i in range(4):
        if i == 0:
            xs, ts = x, t
        elif i == 1:
            xs, ts = x + 0.5 * dt * ks[0], t + 0.5 * dt
        elif i == 2:
            xs, ts = x + 0.5 * dt * ks[1], t + 0.5 * dt
        else:
            xs, ts = x + dt * ks[2], t + dt
        k = np.asarray(rhs(xs, ts, u), dtype=float)
        if not np.all(np.isfinite(k)):
            raise IntegrationError(f"non-finite RK4 stage {i + 1} at t={t}", stage=i + 1)
        ks.append(k)
    out = x + (dt / 6.0) * (ks[0] + 2.0 * ks[1] + 2.0 * ks[2] + ks[3])
    return float(out) if scalar else out


def rollout(rhs, x0, u, grid: Grid) -> np.ndarray:
    """Integrate rhs over the grid with zero-order-held input samples u.

    u must have one sample per step (len n_steps) or per grid sample
    (len n_samples; the final sample is then unused by the dynamics).
    Returns the (n_samples, dim) state trajectory with trajectory[0] = x0.
    """
    u = np.asarray(u, dtype=float)
    n = grid.n_steps
    if u.ndim != 1 or len(u) not in (n, n + 1):
        raise ValueError(f"input length {u.shape} does not match grid with {n} steps")
    x0 = np.atleast_1d(np.asarray(x0, dtype=float))
    traj = np.empty((n + 1, x0.shape[0]))
    traj[0] = x0
    t = grid.t0
    for i in range(n):
        try:
            traj[i + 1] = rk4_step(rhs, traj[i], t, grid.dt, u[i])
        except IntegrationError as e:
            raise IntegrationError(f"integration failed at step {i}: {e}", step=i, stage=e.stage) from e
        t += grid.dt
    return traj


def rollout_grad(vfield, loss, params, x0, u, grid: Grid) -> GradResult:
    """Exact gradient of loss(params, trajectory) through the unrolled RK4 rollout.

    vfield must provide f(params, x, u) -> dx and
    vjp(params, x, u, w) -> (w.df/dparams, w.df/dx); loss must provide
    value(params, traj) -> float and grads(params, traj) -> (dparams, dtraj).
    The returned gradient includes both the direct parameter dependence of the
    loss and the path through the trajectory.
    """
    u = np.asarray(u, dtype=float)
    n = grid.n_steps
    if len(u) not in (n, n + 1):
        raise ValueError(f"input length {len(u)} does not match grid with {n} steps")
    x0 = np.atleast_1d(np.asarray(x0, dtype=float))
    dt = grid.dt

    traj = np.empty((n + 1, x0.shape[0]))
    traj[0] = x0
    for i in range(n):
        x = traj[i]
        k1 = vfield.f(params, x, u[i])
        k2 = vfield.f(params, x + 0.5 * dt * k1, u[i])
        k3 = vfield.f(params, x + 0.5 * dt * k2, u[i])
        k4 = vfield.f(params, x + dt * k3, u[i])
        traj[i + 1] = x + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    if not np.all(np.isfinite(traj)):
        bad = int(np.argwhere(~np.isfinite(traj))[0][0])
        raise IntegrationError(f"non-finite state at step {bad}", step=bad)

    value = float(loss.value(params, traj))
    gparams, gtraj = loss.grads(params, traj)
    gparams = np.array(gparams, dtype=float)

    # Reverse sweep: a is dL/dx_{i+1}; stages are recomputed from the stored
    # trajectory so the backward pass sees exactly the forward-pass values.
    a = gtraj[n].astype(float).copy()
    for i in range(n - 1, -1, -1):
        x = traj[i]
        k1 = vfield.f(params, x, u[i])
        x2 = x + 0.5 * dt * k1
        k2 = vfield.f(params, x2, u[i])
        x3 = x + 0.5 * dt * k2
        k3 = vfield.f(params, x3, u[i])
        x4 = x + dt * k3

        ak4 = (dt / 6.0) * a
        gp4, gx4 = vfield.vjp(params, x4, u[i], ak4)
        ak3 = (dt / 3.0) * a + dt * gx4
        gp3, gx3 = vfield.vjp(params, x3, u[i], ak3)
        ak2 = (dt / 3.0) * a + 0.5 * dt * gx3
        gp2, gx2 = vfield.vjp(params, x2, u[i], ak2)
        ak1 = (dt / 6.0) * a + 0.5 * dt * gx2
        gp1, gx1 = vfield.vjp(params, x, u[i], ak1)

        gparams += gp1 + gp2 + gp3 + gp4
        a = a + gx1 + gx2 + gx3 + gx4
        a += gtraj[i]

    if not np.all(np.isfinite(gparams)):
        bad = int(np.argwhere(~np.isfinite(gparams))[0][0])
        raise IntegrationError(f"non-finite gradient component {bad}")
    return GradResult(loss=value, grad=gparams)


def clip_global_norm(grad: np.ndarray, max_norm: float = 1.0) -> np.ndarray:
    """Scale grad so its L2 norm is at most max_norm; direction is preserved."""
    if max_norm <= 0:
        raise ValueError("max_norm must be positive")
    norm = float(np.linalg.norm(grad))
    if norm <= max_norm:
        return grad.copy()
    return grad * (max_norm / norm)


def adam_init(n_params: int, lr: float = 1e-3) -> AdamState:
    return AdamState(m=np.zeros(n_params), v=np.zeros(n_params), lr=lr)


def adam_step(params: np.ndarray, grad: np.ndarray, state: AdamState):
    """Standard bias-corrected Adam update; returns (new_params, new_state)."""
    if params.shape != grad.shape or params.shape != state.m.shape:
        raise ValueError("params/grad/state dimensions disagree")
    k = state.step_count + 1
    m = state.beta1 * state.m + (1.0 - state.beta1) * grad
    v = state.beta2 * state.v + (1.0 - state.beta2) * grad * grad
    m_hat = m / (1.0 - state.beta1**k)
    v_hat = v / (1.0 - state.beta2**k)
    new_params = params - state.lr * m_hat / (np.sqrt(v_hat) + state.eps)
    return new_params, replace(state, m=m, v=v, step_count=k)
