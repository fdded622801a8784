"""Closed-loop evaluation on the synthetic plant.

Trials stream the reference to the controller one tick at a time; nothing
downstream of the current sample is ever visible to it. RMSE is scored in
degrees against the noiseless plant angle, while the controller itself only
sees the noisy measurement. Suites present bit-identical reference draws to
every controller so comparisons are paired.
"""

import csv
import dataclasses
import json
import os
from dataclasses import dataclass, field

import numpy as np

from .odecore import Grid, rk4_step
from .nets import ControllerParams, InputRange, controller_output
from .siggen import (SampledSignal, draw_step_reference,
                     draw_double_step_reference, draw_cubic_spline_reference)
from .plant import SimulationFault
from . import baseline
from .learn import derived_seed

DISTRIBUTIONS = ("steps", "double_steps", "splines")
_DIST_CODE = {"steps": 1, "double_steps": 2, "splines": 3}
SETUP1_COUNTS = {"steps": 2, "double_steps": 2, "splines": 12}
SETUP2_COUNTS = {"steps": 2, "double_steps": 2, "splines": 4}


@dataclass(frozen=True)
class DisturbanceEvent:
    start: float          # [s]
    duration: float       # [s]
    kind: str             # "impulse" or "clamp"
    magnitude: float = 0.0  # torque [N m]; unused for clamp

    def __post_init__(self):
        if self.kind not in ("impulse", "clamp"):
            raise ValueError(f"unknown disturbance kind {self.kind!r}")
        if self.start < 0 or self.duration <= 0:
            raise ValueError("event needs start >= 0 and duration > 0")

    def active_at(self, t):
        return self.start - 1e-12 <= t < self.start + self.duration - 1e-12


@dataclass(frozen=True)
class DisturbanceSchedule:
    events: tuple = ()

    def __post_init__(self):
        ev = tuple(sorted(self.events, key=lambda e: e.start))
        object.__setattr__(self, "events", ev)
        for a, b in zip(ev, ev[1:]):
            if a.start + a.duration > b.start + 1e-12:
                raise ValueError("disturbance events overlap")

    def event_at(self, t):
        for e in self.events:
            if e.active_at(t):
                return e
        return None


def default_disturbance_schedule(T=10.0, impulse_torque=0.5, clamp_duration=0.5):
    """Two pokes then four holds, spaced so each recovery window fits in T."""
    if T < 10.0:
        raise ValueError("default schedule needs a trial of at least 10 s")
    events = [DisturbanceEvent(1.0, 0.1, "impulse", impulse_torque),
              DisturbanceEvent(2.5, 0.1, "impulse", impulse_torque)]
    for k in range(4):
        events.append(DisturbanceEvent(4.0 + 1.5 * k, clamp_duration, "clamp"))
    return DisturbanceSchedule(tuple(events))


@dataclass
class TrialRecord:
    controller_id: str
    distribution: str
    index: int
    reference: SampledSignal
    phi: np.ndarray         # noiseless plant angle
    phi_meas: np.ndarray    # what the controller saw
    u: np.ndarray           # what the controller emitted
    disturbances: DisturbanceSchedule
    rmse_deg: float
    failed: bool = False
    fail_cause: str = ""

    def __post_init__(self):
        n = self.reference.grid.n_samples
        if not (len(self.phi) == len(self.phi_meas) == len(self.u) == n):
            raise ValueError("trial series must share the reference grid")
        if not self.failed and not self.rmse_deg >= 0:
            raise ValueError("rmse_deg must be >= 0")


@dataclass
class SuiteReport:
    seed: int
    counts: dict
    controller_ids: tuple
    records: list = field(default_factory=list)

    @property
    def partial(self):
        return any(r.failed for r in self.records)

    def summary(self):
        """Rows of (controller, distribution, n, mean/std of RMSE [deg])."""
        rows = []
        for cid in self.controller_ids:
            for dist in DISTRIBUTIONS:
                vals = [r.rmse_deg for r in self.records
                        if r.controller_id == cid and r.distribution == dist
                        and not r.failed]
                if not vals:
                    continue
                arr = np.array(vals)
                rows.append({"controller": cid, "distribution": dist,
                             "n": len(vals),
                             "mean_rmse_deg": float(arr.mean()),
                             "std_rmse_deg": float(arr.std())})
        return rows


class AnodecController:
    """Runtime wrapper around trained controller parameters.

    Emits u from the current latent, then advances the latent one RK4 step
    with the tick's (measured angle, reference) held constant. Output is
    structurally inside the input range through the tanh squash.
    """

    def __init__(self, ctrl_params, dt=0.01, u_range=None):
        self.params = ctrl_params if isinstance(ctrl_params, ControllerParams) \
            else ControllerParams.from_flat(np.asarray(ctrl_params))
        self.dt = dt
        self.u_range = u_range if u_range is not None else InputRange()
        self.xi = np.zeros(5)

    def reset(self):
        self.xi = np.zeros(5)

    def step(self, phi_d, phi_meas):
        u = controller_output(self.params, self.xi, self.u_range)
        p = self.params

        def rhs(x, t, _u):
            return p.w1 @ np.concatenate([x, [phi_meas, phi_d]]) + p.b1

        self.xi = rk4_step(rhs, self.xi, 0.0, self.dt)
        return u


class PidController:
    """Adapter giving the PID baseline the streaming controller interface."""

    def __init__(self, **gains):
        self._gains = gains
        self.state = baseline.pid_reset(**gains)

    def reset(self):
        self.state = baseline.pid_reset(**self._gains)

    def step(self, phi_d, phi_meas):
        u, self.state = baseline.pid_step(self.state, phi_d, phi_meas)
        return u


def rmse_deg(reference, measured):
    """Root-mean-square tracking error in degrees."""
    if isinstance(reference, SampledSignal) and isinstance(measured, SampledSignal):
        if reference.grid != measured.grid:
            raise ValueError("rmse_deg needs signals on the same grid")
        ref, meas = reference.values, measured.values
    else:
        ref = np.asarray(reference, dtype=float)
        meas = np.asarray(measured, dtype=float)
        if ref.shape != meas.shape:
            raise ValueError("rmse_deg needs series of equal length")
    return float(np.sqrt(np.mean((ref - meas) ** 2)) * 180.0 / np.pi)


def apply_disturbance(state, event):
    """State adjustment at event onset: a clamp freezes the arm in place."""
    if event.kind == "clamp":
        return dataclasses.replace(state, omega=0.0)
    return state


def run_trial(plant, controller, reference, disturbances=None,
              controller_id="", distribution="", index=0):
    """One closed-loop episode from the saturation reset.

    Per tick: log the true and measured angle, hand the controller only
    (phi_d[n], phi_meas[n]), apply its u over the next interval. Disturbance
    events act on the plant, never on what the controller is told.
    """
    sched = disturbances if disturbances is not None else DisturbanceSchedule()
    grid = reference.grid
    controller.reset()

    phi = np.full(grid.n_samples, np.nan)
    phi_meas = np.full(grid.n_samples, np.nan)
    u_log = np.full(grid.n_samples, np.nan)
    failed = False
    cause = ""
    clamp_started = set()
    t = grid.t0
    try:
        plant.reset_to_saturation()
        for n in range(grid.n_samples):
            event = sched.event_at(t)
            if event is not None and event.kind == "clamp" \
                    and event.start not in clamp_started:
                plant.state = apply_disturbance(plant.state, event)
                clamp_started.add(event.start)
            phi[n] = plant.state.phi
            phi_meas[n] = plant.measure()
            u_log[n] = controller.step(reference.values[n], phi_meas[n])
            if n < grid.n_steps:
                ext = event.magnitude if event is not None and event.kind == "impulse" else 0.0
                clamped = event is not None and event.kind == "clamp"
                plant.step(u_log[n], dt=grid.dt, ext_torque=ext, clamped=clamped)
            t += grid.dt
    except SimulationFault as err:
        failed = True
        cause = str(err)

    score = float("nan") if failed else rmse_deg(reference.values, phi)
    return TrialRecord(controller_id=controller_id, distribution=distribution,
                       index=index, reference=reference, phi=phi,
                       phi_meas=phi_meas, u=u_log, disturbances=sched,
                       rmse_deg=score, failed=failed, fail_cause=cause)


def draw_reference(distribution, grid, seed):
    if distribution == "steps":
        return draw_step_reference(grid, seed=seed)
    if distribution == "double_steps":
        return draw_double_step_reference(grid, seed=seed)
    if distribution == "splines":
        return draw_cubic_spline_reference(grid, seed=seed)
    raise ValueError(f"unknown reference distribution {distribution!r}")


def evaluate_suite(plant, controllers, counts=None, seed=0, disturbances=None):
    """Score every controller on the same reference draws.

    controllers is an ordered mapping id -> streaming controller. The plant
    noise stream is re-seeded per (trial, controller) so runs are exactly
    reproducible; references depend only on (seed, distribution, index) and
    are therefore identical across controllers.
    """
    counts = dict(SETUP1_COUNTS if counts is None else counts)
    grid = Grid(T=plant.cfg.trial_time)
    refs = []
    for dist in DISTRIBUTIONS:
        for i in range(counts.get(dist, 0)):
            ref_seed = derived_seed(seed, _DIST_CODE[dist], i)
            refs.append((dist, i, draw_reference(dist, grid, ref_seed)))

    report = SuiteReport(seed=seed, counts=counts,
                         controller_ids=tuple(controllers))
    for ci, (cid, controller) in enumerate(controllers.items()):
        for dist, i, ref in refs:
            plant.reseed(derived_seed(seed, _DIST_CODE[dist], i, 100 + ci))
            rec = run_trial(plant, controller, ref, disturbances=disturbances,
                            controller_id=cid, distribution=dist, index=i)
            report.records.append(rec)
    return report


def export_report(report, out_dir):
    """Write the summary (CSV + JSON) and one CSV per trial; returns paths.

    Floats are serialized with repr so a re-import reproduces them exactly.
    """
    os.makedirs(out_dir, exist_ok=True)
    paths = []

    summary_rows = report.summary()
    csv_path = os.path.join(out_dir, "summary.csv")
    with open(csv_path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["controller", "distribution", "n", "mean_rmse_deg", "std_rmse_deg"])
        for row in summary_rows:
            w.writerow([row["controller"], row["distribution"], row["n"],
                        repr(float(row["mean_rmse_deg"])),
                        repr(float(row["std_rmse_deg"]))])
    paths.append(csv_path)

    trial_meta = []
    for rec in report.records:
        name = f"trial_{rec.controller_id}_{rec.distribution}_{rec.index:02d}.csv"
        tpath = os.path.join(out_dir, name)
        t = rec.reference.grid.times()
        with open(tpath, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t", "phi_d", "phi", "phi_meas", "u"])
            for k in range(len(t)):
                w.writerow([repr(float(t[k])), repr(float(rec.reference.values[k])),
                            repr(float(rec.phi[k])), repr(float(rec.phi_meas[k])),
                            repr(float(rec.u[k]))])
        trial_meta.append({"controller": rec.controller_id,
                           "distribution": rec.distribution,
                           "index": rec.index,
                           "rmse_deg": rec.rmse_deg,
                           "failed": rec.failed,
                           "fail_cause": rec.fail_cause,
                           "file": name})
        paths.append(tpath)

    json_path = os.path.join(out_dir, "summary.json")
    payload = {"seed": report.seed, "counts": report.counts,
               "controllers": list(report.controller_ids),
               "partial": report.partial,
               "summary": summary_rows, "trials": trial_meta}
    with open(json_path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")
    paths.append(json_path)
    return paths


def load_report(out_dir):
    """Rebuild a SuiteReport from an exported directory."""
    with open(os.path.join(out_dir, "summary.json")) as fh:
        payload = json.load(fh)
    report = SuiteReport(seed=payload["seed"], counts=payload["counts"],
                         controller_ids=tuple(payload["controllers"]))
    for meta in payload["trials"]:
        rows = []
        with open(os.path.join(out_dir, meta["file"]), newline="") as fh:
            r = csv.reader(fh)
            next(r)
            for row in r:
                rows.append([float(v) for v in row])
        cols = np.array(rows).T
        grid = Grid(T=round((len(rows) - 1) * (cols[0][1] - cols[0][0]), 9))
        ref = SampledSignal(grid, cols[1])
        report.records.append(TrialRecord(
            controller_id=meta["controller"], distribution=meta["distribution"],
            index=meta["index"], reference=ref, phi=cols[2], phi_meas=cols[3],
            u=cols[4], disturbances=DisturbanceSchedule(),
            rmse_deg=meta["rmse_deg"], failed=meta["failed"],
            fail_cause=meta["fail_cause"]))
    return report
