"""Dataset assembly and the two training stages.

Stage one fits the 9-dim latent surrogate to logged (input, angle) trials
by gradient descent through the unrolled integrator, with best-checkpoint
early stopping on the held-out trial. Stage two trains the 5-dim controller
entirely against the frozen surrogate: each optimizer step draws a fresh
batch of constant references, rolls the coupled 14-dim system out, and
descends the mean tracking loss plus a small L2 penalty on the controller
parameters.
"""

import time
from dataclasses import dataclass, field, replace

import numpy as np

from . import _kernels
from .odecore import Grid, adam_init, adam_step, clip_global_norm
from .nets import (InputRange, OutputRange, ModelParams, ControllerParams,
                   CTRL_N_PARAMS, init_model_params, init_controller_params)
from .siggen import SampledSignal, SplineGenConfig, generate_sinusoidal, draw_spline
from .plant import SimulationFault


class TrainingDiverged(RuntimeError):
    """Loss or gradient went non-finite; carries the partial report."""

    def __init__(self, message, report=None):
        super().__init__(message)
        self.report = report


class DataCollectionError(RuntimeError):
    """Plant fault during collection; carries the trials finished so far."""

    def __init__(self, message, partial=()):
        super().__init__(message)
        self.partial = tuple(partial)


@dataclass(frozen=True)
class Dataset:
    """Six (input, measured angle) trials on one grid; five train, one held out.

    truth optionally carries the noiseless angle series for logging; learning
    code never reads it.
    """

    trials: tuple
    train_indices: tuple = (0, 1, 2, 3, 4)
    val_index: int = 5
    truth: tuple = ()

    def __post_init__(self):
        if len(self.trials) != 6:
            raise ValueError(f"dataset needs exactly 6 trials, got {len(self.trials)}")
        grid = self.trials[0][0].grid
        rng_u = InputRange()
        rng_phi = OutputRange()
        for i, (u_sig, phi_sig) in enumerate(self.trials):
            if u_sig.grid != grid or phi_sig.grid != grid:
                raise ValueError(f"trial {i} is not on the shared grid")
            if np.any(u_sig.values < rng_u.lo) or np.any(u_sig.values > rng_u.hi):
                raise ValueError(f"trial {i} input leaves [{rng_u.lo}, {rng_u.hi}]")
            if np.any(phi_sig.values < rng_phi.lo) or np.any(phi_sig.values > rng_phi.hi):
                raise ValueError(f"trial {i} output leaves [{rng_phi.lo}, {rng_phi.hi}]")
        used = set(self.train_indices) | {self.val_index}
        if sorted(used) != list(range(6)) or len(self.train_indices) != 5:
            raise ValueError("split must cover all 6 trials as 5 train + 1 validation")

    @property
    def grid(self):
        return self.trials[0][0].grid


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-3
    clip_norm: float = 1.0
    model_steps: int = 50000
    controller_steps: int = 12000
    ref_batch: int = 50
    reg_weight: float = 4e-4
    val_every: int = 100
    patience: int | None = None  # None: never abort early, keep best checkpoint
    seed: int = 0

    def __post_init__(self):
        for name in ("learning_rate", "clip_norm", "model_steps",
                     "controller_steps", "ref_batch", "val_every"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.reg_weight < 0:
            raise ValueError("reg_weight must be >= 0")

    def ci_profile(self):
        """Reduced budgets for fast continuous-integration runs.

        The controller keeps 6000 steps: below ~3000 it is still bandwidth
        limited, while the full 12000 overfit the surrogate's residual error.
        """
        return replace(self, model_steps=5000, controller_steps=6000)


@dataclass
class TrainReport:
    train_curve: np.ndarray
    val_steps: np.ndarray
    val_curve: np.ndarray
    best_step: int
    wall_clock_s: float
    checkpoint: str | None = None
    components: dict = field(default_factory=dict)

    def __post_init__(self):
        if len(self.val_curve) and not np.min(self.val_curve) <= self.val_curve[0]:
            raise ValueError("best validation loss exceeds the step-0 loss")


def derived_seed(seed, *labels):
    """Stable per-purpose child seed so stages never share RNG streams."""
    return int(np.random.SeedSequence(entropy=seed, spawn_key=labels)
               .generate_state(1)[0])


def default_probe_plan(T=5.0, seed=0, dt=0.01):
    """Six probing inputs: two sinusoids (1 and 2 Hz) plus four spline draws.

    The last spline is the held-out validation trial.
    """
    plan = [generate_sinusoidal(T, 1, dt=dt), generate_sinusoidal(T, 2, dt=dt)]
    for i in range(4):
        cfg = SplineGenConfig(seed=derived_seed(seed, 10 + i))
        plan.append(draw_spline(T, cfg, dt=dt))
    return plan


def collect_dataset(plant, plan, seed=None):
    """Run each probing input on the plant from the saturation reset.

    Logs the noisy angle at every control tick; measurements are clamped to
    the physical angle range so sensor noise cannot leak outside the hard
    stop. Returns a Dataset with the last trial held out for validation.
    """
    if len(plan) != 6:
        raise ValueError(f"probe plan must contain 6 signals, got {len(plan)}")
    if seed is not None:
        plant.reseed(seed)
    grid = plan[0].grid
    lo, hi = plant.cfg.phi_min, plant.cfg.phi_max
    trials = []
    truth = []
    for u_sig in plan:
        phi_meas = np.empty(grid.n_samples)
        phi_true = np.empty(grid.n_samples)
        try:
            plant.reset_to_saturation()
            for n in range(grid.n_samples):
                phi_true[n] = plant.state.phi
                phi_meas[n] = min(max(plant.measure(), lo), hi)
                if n < grid.n_steps:
                    plant.step(u_sig.values[n], dt=grid.dt)
        except SimulationFault as err:
            raise DataCollectionError(
                f"plant fault in trial {len(trials)}: {err}", partial=trials) from err
        trials.append((u_sig, SampledSignal(grid, phi_meas)))
        truth.append(phi_true)
    return Dataset(trials=tuple(trials), truth=tuple(truth))


def trajectory_loss(target, predicted):
    """Integral of |target - predicted| over the trial, left-Riemann at dt."""
    if target.grid != predicted.grid:
        raise ValueError("trajectory_loss needs signals on the same grid")
    n = target.grid.n_steps
    return float(target.grid.dt * np.sum(
        np.abs(target.values[:n] - predicted.values[:n])))


def predict_trajectory(params, u_sig):
    """Surrogate angle prediction for one input signal (latent starts at 0)."""
    theta = params.flatten() if isinstance(params, ModelParams) else np.asarray(params)
    grid = u_sig.grid
    traj = _kernels.model_rollout(theta, u_sig.values, grid.n_steps, grid.dt)
    w2 = theta[99:108]
    b2 = theta[108]
    return SampledSignal(grid, traj @ w2 + b2)


def train_model(dataset, cfg):
    """Fit the surrogate to the five training trials; early-stop on the sixth.

    All five trials enter every gradient step (one summed batch). Validation
    loss is computed every cfg.val_every steps and the parameters with the
    best validation loss are returned.
    """
    grid = dataset.grid
    n_steps, dt = grid.n_steps, grid.dt
    tr = [dataset.trials[i] for i in dataset.train_indices]
    u_batch = np.ascontiguousarray([p[0].values for p in tr])
    phi_batch = np.ascontiguousarray([p[1].values for p in tr])
    u_val, phi_val = (dataset.trials[dataset.val_index][k].values for k in (0, 1))

    theta = init_model_params(cfg.seed).flatten()
    adam = adam_init(theta.size, lr=cfg.learning_rate)
    train_curve = np.empty(cfg.model_steps)
    val_steps, val_curve = [], []
    best_val = np.inf
    best_theta = theta.copy()
    best_step = 0
    t0 = time.monotonic()

    def check_val(step):
        nonlocal best_val, best_theta, best_step
        v = _kernels.model_fit_loss(theta, u_val, phi_val, n_steps, dt)
        val_steps.append(step)
        val_curve.append(v)
        if v < best_val:
            best_val = v
            best_theta = theta.copy()
            best_step = step

    check_val(0)
    for step in range(cfg.model_steps):
        loss, grad = _kernels.model_fit_loss_grad(theta, u_batch, phi_batch,
                                                  n_steps, dt)
        if not (np.isfinite(loss) and np.all(np.isfinite(grad))):
            raise TrainingDiverged(
                f"model training diverged at step {step}",
                report=_report(train_curve[:step], val_steps, val_curve,
                               best_step, t0))
        train_curve[step] = loss
        theta, adam = adam_step(theta, clip_global_norm(grad, cfg.clip_norm), adam)
        done = step + 1
        if done % cfg.val_every == 0 or done == cfg.model_steps:
            check_val(done)
        if cfg.patience is not None and done - best_step >= cfg.patience:
            train_curve = train_curve[:done]
            break

    report = _report(train_curve, val_steps, val_curve, best_step, t0)
    return ModelParams.from_flat(best_theta), report


def _report(train_curve, val_steps, val_curve, best_step, t0, components=None):
    return TrainReport(train_curve=np.asarray(train_curve, dtype=float),
                       val_steps=np.asarray(val_steps, dtype=int),
                       val_curve=np.asarray(val_curve, dtype=float),
                       best_step=int(best_step),
                       wall_clock_s=time.monotonic() - t0,
                       components=components or {})


def closed_loop_rollout(model_params, ctrl_params, phi_d):
    """Roll the coupled (surrogate, controller) system over one reference.

    Both latents start at zero. Returns (predicted angle, emitted control)
    sampled on the reference grid.
    """
    theta_m = model_params.flatten() if isinstance(model_params, ModelParams) \
        else np.asarray(model_params)
    theta_c = ctrl_params.flatten() if isinstance(ctrl_params, ControllerParams) \
        else np.asarray(ctrl_params)
    grid = phi_d.grid
    u_rng = InputRange()
    _, phihat, u = _kernels.closedloop_rollout(theta_m, theta_c, phi_d.values,
                                               grid.n_steps, grid.dt,
                                               u_rng.lo, u_rng.hi)
    return SampledSignal(grid, phihat), SampledSignal(grid, u)


def train_controller(model_params, cfg, grid=None):
    """Train the controller against the frozen surrogate.

    Every step draws cfg.ref_batch fresh constant references uniform over
    the angle range, and descends
    reg_weight * ||theta_c||_2 + mean tracking loss.
    """
    if grid is None:
        grid = Grid(T=5.0)
    theta_m = model_params.flatten() if isinstance(model_params, ModelParams) \
        else np.asarray(model_params)
    n_steps, dt = grid.n_steps, grid.dt
    u_rng = InputRange()
    out_rng = OutputRange()
    ref_rng = np.random.default_rng(derived_seed(cfg.seed, 1))

    theta_c = init_controller_params(cfg.seed).flatten()
    adam = adam_init(theta_c.size, lr=cfg.learning_rate)
    objective = np.empty(cfg.controller_steps)
    tracking = np.empty(cfg.controller_steps)
    regularizer = np.empty(cfg.controller_steps)
    t0 = time.monotonic()

    for step in range(cfg.controller_steps):
        levels = ref_rng.uniform(out_rng.lo, out_rng.hi, size=cfg.ref_batch)
        phid_batch = np.ascontiguousarray(
            np.broadcast_to(levels[:, None], (cfg.ref_batch, grid.n_samples)))
        track, grad = _kernels.closedloop_loss_grad(theta_m, theta_c, phid_batch,
                                                    n_steps, dt, u_rng.lo, u_rng.hi)
        nrm = float(np.linalg.norm(theta_c))
        reg = cfg.reg_weight * nrm
        if nrm > 0.0:
            grad = grad + (cfg.reg_weight / nrm) * theta_c
        obj = reg + track
        if not (np.isfinite(obj) and np.all(np.isfinite(grad))):
            raise TrainingDiverged(
                f"controller training diverged at step {step}",
                report=_report(objective[:step], [], [], step, t0,
                               components={"tracking": tracking[:step].copy(),
                                           "regularizer": regularizer[:step].copy()}))
        objective[step] = obj
        tracking[step] = track
        regularizer[step] = reg
        theta_c, adam = adam_step(theta_c, clip_global_norm(grad, cfg.clip_norm), adam)

    report = _report(objective, [], [], cfg.controller_steps, t0,
                     components={"tracking": tracking, "regularizer": regularizer})
    return ControllerParams.from_flat(theta_c), report


class ClosedLoopField:
    """Coupled 14-dim vector field with the surrogate frozen.

    Duck-typed for the generic gradient engine: the differentiated parameter
    vector is the controller's 46 entries, the per-step exogenous input is
    the reference sample.
    """

    dim = 14

    def __init__(self, theta_m, u_range=None):
        self.theta_m = np.asarray(theta_m, dtype=float)
        self.w1m = self.theta_m[:90].reshape(9, 10)
        self.b1m = self.theta_m[90:99]
        self.w2m = self.theta_m[99:108]
        self.b2m = self.theta_m[108]
        r = u_range if u_range is not None else InputRange()
        self.u_min, self.u_max = r.lo, r.hi

    def _unpack(self, theta_c):
        return (theta_c[:35].reshape(5, 7), theta_c[35:40],
                theta_c[40:45], theta_c[45])

    def f(self, theta_c, y, phid):
        w1c, b1c, w2c, b2c = self._unpack(theta_c)
        xm, xc = y[:9], y[9:]
        phihat = self.w2m @ xm + self.b2m
        ubar = np.tanh(w2c @ xc + b2c)
        u = (self.u_max - self.u_min) * (0.5 * ubar + 0.5) + self.u_min
        km = np.tanh(self.w1m @ np.append(xm, u) + self.b1m)
        kc = w1c @ np.concatenate([xc, [phihat, phid]]) + b1c
        return np.concatenate([km, kc])

    def vjp(self, theta_c, y, phid, w):
        w1c, b1c, w2c, b2c = self._unpack(theta_c)
        xm, xc = y[:9], y[9:]
        phihat = self.w2m @ xm + self.b2m
        ubar = np.tanh(w2c @ xc + b2c)
        u = (self.u_max - self.u_min) * (0.5 * ubar + 0.5) + self.u_min
        km = np.tanh(self.w1m @ np.append(xm, u) + self.b1m)

        wm = w[:9] * (1.0 - km * km)
        wc = w[9:]
        gxm = self.w1m[:, :9].T @ wm
        gu = self.w1m[:, 9] @ wm
        gxc = w1c[:, :5].T @ wc
        gphihat = w1c[:, 5] @ wc

        aug_c = np.concatenate([xc, [phihat, phid]])
        gw1c = np.outer(wc, aug_c)
        apre = gu * 0.5 * (self.u_max - self.u_min) * (1.0 - ubar * ubar)
        gw2c = apre * xc
        gxc = gxc + apre * w2c
        gxm = gxm + gphihat * self.w2m
        gtheta = np.concatenate([gw1c.ravel(), wc, gw2c, [apre]])
        return gtheta, np.concatenate([gxm, gxc])


class FitLoss:
    """Model-training loss: integral of |target - predicted angle|.

    The output map (w2, b2) lives inside the differentiated parameter
    vector, so grads carries a direct parameter term.
    """

    def __init__(self, target, dt):
        self.target = np.asarray(target, dtype=float)
        self.dt = dt

    def value(self, theta, traj):
        n = traj.shape[0] - 1
        pred = traj[:n] @ theta[99:108] + theta[108]
        return self.dt * np.sum(np.abs(self.target[:n] - pred))

    def grads(self, theta, traj):
        n = traj.shape[0] - 1
        w2 = theta[99:108]
        pred = traj[:n] @ w2 + theta[108]
        go = -self.dt * np.sign(self.target[:n] - pred)
        gtraj = np.zeros_like(traj)
        gtraj[:n] = go[:, None] * w2[None, :]
        gparams = np.zeros(theta.size)
        gparams[99:108] = go @ traj[:n]
        gparams[108] = np.sum(go)
        return gparams, gtraj


class TrackingLoss:
    """Controller-training loss against the frozen surrogate's angle output."""

    def __init__(self, phi_d, dt, theta_m):
        self.phi_d = np.asarray(phi_d, dtype=float)
        self.dt = dt
        theta_m = np.asarray(theta_m, dtype=float)
        self.w2m = theta_m[99:108]
        self.b2m = theta_m[108]

    def value(self, theta_c, traj):
        n = traj.shape[0] - 1
        pred = traj[:n, :9] @ self.w2m + self.b2m
        return self.dt * np.sum(np.abs(self.phi_d[:n] - pred))

    def grads(self, theta_c, traj):
        n = traj.shape[0] - 1
        pred = traj[:n, :9] @ self.w2m + self.b2m
        go = -self.dt * np.sign(self.phi_d[:n] - pred)
        gtraj = np.zeros_like(traj)
        gtraj[:n, :9] = go[:, None] * self.w2m[None, :]
        return np.zeros(CTRL_N_PARAMS), gtraj
