"""Probing-input and reference-signal generators.

Probing inputs excite the plant for data collection: amplitude-scaled
sinusoids and random cubic splines. References are what the closed loop is
asked to track: constant steps, double steps, and smooth splines. Every
generator is a pure function of its config and seed.
"""

from dataclasses import dataclass

import numpy as np
from scipy.interpolate import CubicSpline

from .odecore import Grid
from .nets import OutputRange


@dataclass(frozen=True)
class SampledSignal:
    """Scalar signal sampled on a uniform grid (inputs in bar, refs in rad)."""

    grid: Grid
    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        object.__setattr__(self, "values", v)
        if v.shape != (self.grid.n_samples,):
            raise ValueError(
                f"signal length {v.shape} does not match grid ({self.grid.n_samples},)")
        if not np.all(np.isfinite(v)):
            raise ValueError("signal contains non-finite values")


@dataclass(frozen=True)
class SplineGenConfig:
    """Random-spline generator settings: knot gap bounds and value bounds."""

    dt_min: float = 0.4
    dt_max: float = 1.2
    u_min: float = -6.0
    u_max: float = 6.0
    seed: int = 0

    def __post_init__(self):
        if not 0 < self.dt_min < self.dt_max:
            raise ValueError("need 0 < dt_min < dt_max")
        if not self.u_min < self.u_max:
            raise ValueError("need u_min < u_max")


def generate_sinusoidal(T, f, dt=0.01):
    """sin(2*pi*f*t) scaled by sqrt(2*pi*f)/2, so faster probes push harder."""
    if f < 1 or int(f) != f:
        raise ValueError("frequency must be a positive integer")
    grid = Grid(T=T, dt=dt)
    t = grid.times()
    omega = 2.0 * np.pi * f
    return SampledSignal(grid, np.sin(omega * t) * np.sqrt(omega) / 2.0)


def _spline_knots(T, dt_min, dt_max, lo, hi, rng, keep_branch):
    """Knot sequence starting at (0, 0); gaps uniform in [dt_min, dt_max].

    With keep_branch on, each new knot keeps the previous value with
    probability 1/2 (flat stretches probe the creep response); otherwise the
    value is a fresh uniform draw.
    """
    ts = [0.0]
    us = [0.0]
    while ts[-1] < T:
        ts.append(ts[-1] + rng.uniform(dt_min, dt_max))
        if keep_branch and rng.random() < 0.5:
            us.append(us[-1])
        else:
            us.append(rng.uniform(lo, hi))
    return np.array(ts), np.array(us)


def draw_spline(T, cfg, dt=0.01):
    """Random cubic-spline probing input, clipped to the value bounds."""
    rng = np.random.default_rng(cfg.seed)
    ts, us = _spline_knots(T, cfg.dt_min, cfg.dt_max, cfg.u_min, cfg.u_max,
                           rng, keep_branch=True)
    grid = Grid(T=T, dt=dt)
    values = CubicSpline(ts, us)(grid.times())
    return SampledSignal(grid, np.clip(values, cfg.u_min, cfg.u_max))


def draw_step_reference(grid, out_range=OutputRange(), seed=0):
    """Constant reference at a level uniform over the output range."""
    rng = np.random.default_rng(seed)
    level = rng.uniform(out_range.lo, out_range.hi)
    return SampledSignal(grid, np.full(grid.n_samples, level))


def draw_double_step_reference(grid, out_range=OutputRange(), seed=0):
    """Two plateaus with one grid-aligned switch in the middle of the trial."""
    rng = np.random.default_rng(seed)
    level1 = rng.uniform(out_range.lo, out_range.hi)
    level2 = rng.uniform(out_range.lo, out_range.hi)
    t_s = rng.uniform(0.3 * grid.T, 0.7 * grid.T)
    n_s = int(round(t_s / grid.dt))
    values = np.full(grid.n_samples, level1)
    values[n_s:] = level2
    return SampledSignal(grid, values)


def draw_cubic_spline_reference(grid, out_range=OutputRange(), seed=0):
    """Smooth reference: spline knots every 0.8-1.8 s, always fresh levels."""
    rng = np.random.default_rng(seed)
    ts, us = _spline_knots(grid.T, 0.8, 1.8, out_range.lo, out_range.hi,
                           rng, keep_branch=False)
    values = CubicSpline(ts, us)(grid.times())
    return SampledSignal(grid, np.clip(values, out_range.lo, out_range.hi))
