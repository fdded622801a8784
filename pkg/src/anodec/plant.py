"""Synthetic antagonistic pneumatic actuator used as the stand-in plant.

A 1-DOF arm driven by two opposing muscles. The surrogate reproduces the
behaviors that make the real hardware hard to control: first-order pressure
lag, Bouc-Wen hysteresis in the transmitted torque, slow creep under load,
optional gravity loading, and a hard stop at +-1 rad. Learning code never
sees the internal state; it interacts only through (u in, measured angle
out) at the control rate.

Default coefficients come from the calibration runs in the test suite:
open-loop steps settle in 0.5-1.5 s, the quasi-static hysteresis loop is
wider than 10% of the output range, and creep drifts the arm by more than
0.02 rad over 5 s of zero input.
"""

import csv
import dataclasses
from dataclasses import dataclass

import numpy as np
import yaml

from . import _kernels


class SimulationFault(RuntimeError):
    """Plant state went non-finite; carries the offending state dump."""

    def __init__(self, message, state=None):
        super().__init__(message)
        self.state = state


@dataclass(frozen=True)
class PlantState:
    """Internal actuator state. phi/omega are the arm, p1/p2 the bellows
    pressures [bar], z the hysteresis state, creep the slow torque offset."""

    phi: float
    omega: float
    p1: float
    p2: float
    z: float
    creep: float

    def as_array(self):
        return np.array([self.phi, self.omega, self.p1, self.p2, self.z, self.creep])

    @staticmethod
    def from_array(a):
        return PlantState(float(a[0]), float(a[1]), float(a[2]), float(a[3]),
                          float(a[4]), float(a[5]))


@dataclass(frozen=True)
class PlantConfig:
    inertia: float = 0.01            # [kg m^2]
    damping: float = 0.12            # viscous [N m s/rad]
    quad_damping: float = 0.05       # aerodynamic-style [N m s^2/rad^2]
    radius: float = 0.03             # pulley radius [m]
    force_gain: float = 60.0         # muscle force per bar at zero contraction [N/bar]
    contraction_mid: float = 0.5     # contraction ratio at phi = 0
    contraction_slope: float = 0.36  # contraction change per rad
    bw_alpha: float = 6.0            # Bouc-Wen parameters
    bw_beta: float = 3.0
    bw_gamma: float = 3.0
    bw_exp: float = 1.0
    hyst_weight: float = 0.8         # hysteresis torque at saturated z [N m]
    creep_gain: float = 0.07         # steady creep torque per bar of (p1-p2) [N m/bar]
    creep_tau: float = 2.0           # creep time constant [s]
    pressure_tau: float = 0.05       # pressure lag time constant [s]
    mean_pressure: float = 4.0       # [bar]
    supply_pressure: float = 8.0     # [bar]
    gravity: bool = False            # Setup 2 loading
    mass: float = 0.6                # [kg], used when gravity is on
    lever: float = 0.25              # [m], used when gravity is on
    noise_std: float = 0.002         # sensor noise sigma [rad]
    trial_time: float = 5.0          # [s]; 8.0 for Setup 2
    phi_min: float = -1.0            # hard stop [rad]
    phi_max: float = 1.0
    u_min: float = -6.0              # feasible input range [bar]
    u_max: float = 6.0
    n_substeps: int = 4              # internal RK4 sub-steps per control tick
    settle_time: float = 3.0         # saturation-reset hold duration [s]

    def __post_init__(self):
        for name in ("inertia", "pressure_tau", "creep_tau", "trial_time",
                     "settle_time"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.noise_std < 0:
            raise ValueError("noise_std must be >= 0")
        if self.n_substeps < 1:
            raise ValueError("n_substeps must be >= 1")
        if not self.phi_min < self.phi_max:
            raise ValueError("phi_min must be < phi_max")
        if not self.u_min < self.u_max:
            raise ValueError("u_min must be < u_max")
        # both desired pressures must stay physical over the whole input range
        half = 0.5 * max(abs(self.u_min), abs(self.u_max))
        if self.mean_pressure - half < 0 or self.mean_pressure + half > self.supply_pressure:
            raise ValueError("mean_pressure +- u_max/2 leaves [0, supply_pressure]")

    def pack(self):
        """Flat coefficient vector consumed by the compiled stepper."""
        cfg = np.zeros(_kernels.PLANT_CFG_LEN)
        cfg[_kernels._PJ] = self.inertia
        cfg[_kernels._PD] = self.damping
        cfg[_kernels._PD2] = self.quad_damping
        cfg[_kernels._PR] = self.radius
        cfg[_kernels._PGF] = self.force_gain
        cfg[_kernels._PC0] = self.contraction_mid
        cfg[_kernels._PC1] = self.contraction_slope
        cfg[_kernels._PBA] = self.bw_alpha
        cfg[_kernels._PBB] = self.bw_beta
        cfg[_kernels._PBG] = self.bw_gamma
        cfg[_kernels._PBN] = self.bw_exp
        cfg[_kernels._PWH] = self.hyst_weight
        cfg[_kernels._PCG] = self.creep_gain
        cfg[_kernels._PCT] = self.creep_tau
        cfg[_kernels._PPT] = self.pressure_tau
        cfg[_kernels._PPM] = self.mean_pressure
        cfg[_kernels._PPS] = self.supply_pressure
        cfg[_kernels._PGR] = 1.0 if self.gravity else 0.0
        cfg[_kernels._PML] = self.mass * 9.81 * self.lever
        cfg[_kernels._PFL] = self.phi_min
        cfg[_kernels._PFH] = self.phi_max
        return cfg

    def as_dict(self):
        return dataclasses.asdict(self)

    def to_yaml(self, path):
        with open(path, "w") as fh:
            yaml.safe_dump(self.as_dict(), fh, sort_keys=True)

    @staticmethod
    def from_yaml(path):
        with open(path) as fh:
            raw = yaml.safe_load(fh)
        if raw is None:
            raw = {}
        if not isinstance(raw, dict):
            raise ValueError(f"plant config {path} must be a mapping")
        known = {f.name for f in dataclasses.fields(PlantConfig)}
        unknown = sorted(set(raw) - known)
        if unknown:
            raise ValueError(f"unknown plant config keys: {', '.join(unknown)}")
        return PlantConfig(**raw)


def couple_pressures(u, p_m):
    """Split one difference-pressure input into the two bellows setpoints."""
    return p_m + 0.5 * u, p_m - 0.5 * u


def rest_state(cfg):
    """Symmetric rest: centered arm, both bellows at mean pressure."""
    return PlantState(phi=0.0, omega=0.0, p1=cfg.mean_pressure,
                      p2=cfg.mean_pressure, z=0.0, creep=0.0)


def plant_step(state, u, dt, cfg, ext_torque=0.0, clamped=False,
               _packed=None):
    """Advance the plant one control interval of dt under constant input u.

    u is assumed already inside [u_min, u_max]; the stateful Plant wrapper
    owns clipping and its warning counter. Raises SimulationFault if the
    state leaves the finite range.
    """
    packed = cfg.pack() if _packed is None else _packed
    pd1, pd2 = couple_pressures(u, cfg.mean_pressure)
    s = _kernels.plant_step_kernel(state.as_array(), pd1, pd2, dt,
                                   cfg.n_substeps, ext_torque, clamped, packed)
    if not np.all(np.isfinite(s)):
        raise SimulationFault(f"non-finite plant state after step: {s!r}",
                              state=s.copy())
    return PlantState.from_array(s)


def measure(state, rng, noise_std):
    """Angle sample with additive Gaussian sensor noise."""
    if noise_std == 0.0:
        return state.phi
    return state.phi + noise_std * rng.standard_normal()


def reset_to_saturation(cfg):
    """Drive the arm into its saturation state by holding u_max for the
    configured settle time; this is the trial-invariant initial condition."""
    packed = cfg.pack()
    state = rest_state(cfg)
    n = int(round(cfg.settle_time / 0.01))
    for _ in range(n):
        state = plant_step(state, cfg.u_max, 0.01, cfg, _packed=packed)
    return state


class Plant:
    """Stateful stepper around the pure plant dynamics.

    Owns the sensor-noise stream and the input-clipping warning counter.
    One instance per concurrent trial.
    """

    def __init__(self, cfg=None, seed=0):
        self.cfg = cfg if cfg is not None else PlantConfig()
        self.state = rest_state(self.cfg)
        self.clip_warnings = 0
        self._rng = np.random.default_rng(seed)
        self._packed = self.cfg.pack()

    def reset_to_saturation(self):
        self.state = reset_to_saturation(self.cfg)
        return self.state

    def reseed(self, seed):
        """Restart the sensor-noise stream (used to pair evaluation trials)."""
        self._rng = np.random.default_rng(seed)

    def step(self, u, dt=0.01, ext_torque=0.0, clamped=False):
        u = float(u)
        if u < self.cfg.u_min or u > self.cfg.u_max:
            self.clip_warnings += 1
            u = min(max(u, self.cfg.u_min), self.cfg.u_max)
        self.state = plant_step(self.state, u, dt, self.cfg,
                                ext_torque=ext_torque, clamped=clamped,
                                _packed=self._packed)
        return self.state

    def measure(self):
        return measure(self.state, self._rng, self.cfg.noise_std)


def write_trial_csv(path, t, u, phi, phi_meas):
    """Persist one trial log. Columns: t [s], u [bar], phi [rad], phi_meas [rad]."""
    arrays = [np.asarray(x, dtype=float) for x in (t, u, phi, phi_meas)]
    n = len(arrays[0])
    if any(len(a) != n for a in arrays):
        raise ValueError("trial columns must have equal length")
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "u", "phi", "phi_meas"])
        for row in zip(*arrays):
            w.writerow([repr(float(v)) for v in row])


def read_trial_csv(path):
    """Inverse of write_trial_csv; returns (t, u, phi, phi_meas) arrays."""
    with open(path, newline="") as fh:
        r = csv.reader(fh)
        header = next(r)
        if header != ["t", "u", "phi", "phi_meas"]:
            raise ValueError(f"unexpected trial CSV header in {path}: {header}")
        rows = [[float(v) for v in row] for row in r]
    cols = np.array(rows).T if rows else np.zeros((4, 0))
    return cols[0], cols[1], cols[2], cols[3]
