"""Acceptance suite: one test per shipping criterion, one printed line each.

Run with `pytest tests/test_acceptance.py -v -s` to see the per-criterion
lines as they pass. The session trains one model and one controller at the
CI budget by default (ANODEC_ACCEPTANCE=canonical switches to the full
budgets and the tighter model bound). Criteria are ordered cheap-first so
structural breakage surfaces before any training runs.
"""

import filecmp
import time

import numpy as np
import pytest

from anodec import cli
from anodec.evaluate import (AnodecController, default_disturbance_schedule,
                             run_trial)
from anodec.learn import (ClosedLoopField, FitLoss, TrackingLoss, TrainConfig,
                          closed_loop_rollout, collect_dataset,
                          default_probe_plan, predict_trajectory)
from anodec.nets import (CTRL_N_PARAMS, MODEL_N_PARAMS, ModelField,
                         init_controller_params, init_model_params)
from anodec.odecore import Grid, rk4_step, rollout_grad
from anodec.plant import (Plant, PlantConfig, plant_step, rest_state,
                          reset_to_saturation)
from anodec.siggen import SampledSignal


def check(criterion, ok, detail):
    print(f"criterion {criterion:>2} {'PASS' if ok else 'FAIL'}: {detail}")
    assert ok, f"criterion {criterion}: {detail}"


def fd_gradient(loss_of, theta, h=1e-5):
    g = np.zeros_like(theta)
    for i in range(len(theta)):
        up, dn = theta.copy(), theta.copy()
        up[i] += h
        dn[i] -= h
        g[i] = (loss_of(up) - loss_of(dn)) / (2 * h)
    return g


def max_rel_err(grad, grad_fd):
    scale = np.max(np.abs(grad_fd))
    denom = np.maximum(np.abs(grad_fd), max(1e-2 * scale, 1e-12))
    return float(np.max(np.abs(grad - grad_fd) / denom))


def test_criterion_01_parameter_counts():
    n_model = init_model_params(0).flatten().size
    n_ctrl = init_controller_params(0).flatten().size
    ok = (n_model == MODEL_N_PARAMS == 109) and (n_ctrl == CTRL_N_PARAMS == 46)
    check(1, ok, f"model={n_model} controller={n_ctrl} (want 109/46 exact)")


def test_criterion_02_gradient_fidelity():
    grid = Grid(T=0.1)
    worst_model = 0.0
    for k in range(20):
        rng = np.random.default_rng(1000 + k)
        theta = init_model_params(1000 + k).flatten() + 0.1 * rng.normal(size=109)
        u = rng.uniform(-6, 6, grid.n_steps)
        target = rng.uniform(-1, 1, grid.n_samples)
        field, loss = ModelField(), FitLoss(target, grid.dt)
        res = rollout_grad(field, loss, theta, np.zeros(9), u, grid)

        def loss_of(th):
            return rollout_grad(field, loss, th, np.zeros(9), u, grid).loss

        worst_model = max(worst_model, max_rel_err(res.grad, fd_gradient(loss_of, theta)))

    worst_loop = 0.0
    for k in range(20):
        rng = np.random.default_rng(2000 + k)
        theta_m = init_model_params(500 + k).flatten() + 0.1 * rng.normal(size=109)
        theta_c = init_controller_params(500 + k).flatten() + 0.1 * rng.normal(size=46)
        phid = rng.uniform(-1, 1) * np.ones(grid.n_samples)
        field = ClosedLoopField(theta_m)
        loss = TrackingLoss(phid, grid.dt, theta_m)
        res = rollout_grad(field, loss, theta_c, np.zeros(14), phid, grid)

        def loss_of(th):
            return rollout_grad(field, loss, th, np.zeros(14), phid, grid).loss

        worst_loop = max(worst_loop, max_rel_err(res.grad, fd_gradient(loss_of, theta_c)))

    ok = worst_model <= 1e-4 and worst_loop <= 1e-4
    check(2, ok, f"max rel err vs central FD: model {worst_model:.2e}, "
                 f"closed-loop {worst_loop:.2e} (bound 1e-4, 20 instances each)")


def test_criterion_03_rk4_order():
    def decay(x, t, u):
        return -x

    errs = []
    for dt in (0.02, 0.01):
        x, t = 1.0, 0.0
        for _ in range(int(round(1.0 / dt))):
            x = rk4_step(decay, x, t, dt)
            t += dt
        errs.append(abs(x - np.exp(-1.0)))
    ratio = errs[0] / errs[1]
    ok = 12.0 <= ratio <= 20.0
    check(3, ok, f"halving dt shrinks exp-decay error by {ratio:.2f}x "
                 "(4th order wants [12, 20])")


def test_criterion_04_plant_pathology():
    cfg = PlantConfig()
    packed = cfg.pack()

    period, dt = 20.0, 0.01
    n = int(round(period / dt))
    state = rest_state(cfg)
    us, phis = [], []
    for cycle in range(2):
        for i in range(n):
            frac = i / n
            u = 6.0 * (4 * frac - 1) if frac < 0.5 else 6.0 * (3 - 4 * frac)
            state = plant_step(state, u, dt, cfg, _packed=packed)
            if cycle == 1:
                us.append(u)
                phis.append(state.phi)
    us, phis = np.array(us), np.array(phis)
    area = 0.5 * abs(np.sum(us * np.roll(phis, -1) - np.roll(us, -1) * phis))

    state = reset_to_saturation(cfg)
    traj = [state.phi]
    for _ in range(500):
        state = plant_step(state, 0.0, dt, cfg, _packed=packed)
        traj.append(state.phi)
    drift = abs(traj[500] - traj[100])

    ok = area > 0.01 and drift >= 0.02
    check(4, ok, f"hysteresis loop area {area:.3f} rad*bar (> 0.01), "
                 f"zero-input creep {drift:.4f} rad over the 1-5 s hold (>= 0.02)")


def test_criterion_05_data_protocol(acceptance_dataset):
    ds1 = acceptance_dataset
    total1 = ds1.grid.T * len(ds1.trials)
    cfg2 = PlantConfig(gravity=True, trial_time=8.0)
    ds2 = collect_dataset(Plant(cfg2, seed=42),
                          default_probe_plan(T=8.0, seed=13))
    total2 = ds2.grid.T * len(ds2.trials)
    ok = (len(ds1.trials) == 6 and len(ds1.train_indices) == 5
          and total1 == 30.0 and len(ds2.trials) == 6 and total2 == 48.0)
    check(5, ok, f"6 trials, 5/1 split, {total1:.0f} s interaction (setup 1) "
                 f"and {total2:.0f} s (setup 2); want 30/48 exact")


def test_criterion_06_model_quality(acceptance_dataset, acceptance_model,
                                    acceptance_profile):
    params, report = acceptance_model
    u_val, phi_val = acceptance_dataset.trials[acceptance_dataset.val_index]
    pred = predict_trajectory(params, u_val)
    rmse = float(np.sqrt(np.mean((pred.values - phi_val.values) ** 2)))

    bound = 0.1 if acceptance_profile == "canonical" else 0.15
    t_bound = 1800.0 if acceptance_profile == "canonical" else 180.0
    early_ok = float(np.min(report.val_curve)) <= float(report.val_curve[-1])
    ok = rmse <= bound and early_ok and report.wall_clock_s <= t_bound
    check(6, ok, f"validation RMSE {rmse:.4f} rad (bound {bound} "
                 f"{acceptance_profile}), early-stop <= final-step "
                 f"{early_ok}, trained in {report.wall_clock_s:.0f} s "
                 f"(bound {t_bound:.0f})")


def test_criterion_07_controller_on_model(acceptance_model,
                                          acceptance_controller):
    model_params, _ = acceptance_model
    ctrl, _ = acceptance_controller
    grid = Grid(T=5.0)
    rng = np.random.default_rng(12345)
    hits, worst = 0, 0.0
    for phid in rng.uniform(-0.9, 0.9, 20):
        ref = SampledSignal(grid, np.full(grid.n_samples, phid))
        phihat, _ = closed_loop_rollout(model_params, ctrl, ref)
        err = abs(float(phihat.values[-1]) - phid)
        worst = max(worst, err)
        hits += err <= 0.05
    ok = hits >= 18
    check(7, ok, f"{hits}/20 held-out step references settle within "
                 f"0.05 rad on the learned model (worst {worst:.3f}, need >= 18)")


def test_criterion_08_end_to_end_ordering(acceptance_suite):
    report, elapsed = acceptance_suite
    rows = {(r["controller"], r["distribution"]): r["mean_rmse_deg"]
            for r in report.summary()}
    a_spl, p_spl = rows[("anodec", "splines")], rows[("pid", "splines")]
    a_all = np.mean([r.rmse_deg for r in report.records
                     if r.controller_id == "anodec"])
    p_all = np.mean([r.rmse_deg for r in report.records
                     if r.controller_id == "pid"])
    ok = (a_spl <= p_spl) and (a_all <= 1.1 * p_all) and elapsed < 300.0
    check(8, ok, f"splines {a_spl:.2f} vs {p_spl:.2f} deg, overall {a_all:.2f} "
                 f"vs {p_all:.2f} deg (cap {1.1 * p_all:.2f}) in {elapsed:.0f} s; "
                 "hardware-scale context: 4.48 vs 10.01 deg")


def test_criterion_09_structural_saturation(acceptance_suite):
    report, _ = acceptance_suite
    ok = True
    for rec in report.records:
        if rec.failed:
            ok = False
            break
        if rec.controller_id == "anodec":
            ok = ok and bool(np.all(np.abs(rec.u) < 6.0))
        else:
            ok = ok and bool(np.all(np.abs(rec.u) <= 6.0))
    n = sum(len(r.u) for r in report.records)
    check(9, ok, f"{n} control samples: learned controller strictly inside "
                 "(-6, 6) bar, PID inside after clipping (zero tolerance)")


def test_criterion_10_disturbance_robustness(acceptance_controller):
    ctrl, _ = acceptance_controller
    grid = Grid(T=10.0)
    ref = SampledSignal(grid, np.full(grid.n_samples, 0.3))
    sched = default_disturbance_schedule(T=grid.T)
    rec = run_trial(Plant(PlantConfig(), seed=7), AnodecController(ctrl), ref,
                    disturbances=sched)

    finite = not rec.failed and np.all(np.isfinite(rec.phi)) \
        and np.all(np.isfinite(rec.u))
    bounded = bool(np.all(np.abs(rec.phi) <= 1.0))
    err = np.abs(rec.phi - 0.3)
    recovered = True
    slowest = 0.0
    for ev in sched.events:
        i0 = max(0, int(round((ev.start - 0.5) / grid.dt)))
        i1 = int(round(ev.start / grid.dt))
        pre = max(float(np.max(err[i0:i1])), 0.01)
        r0 = int(round((ev.start + ev.duration) / grid.dt))
        r1 = min(grid.n_samples, r0 + int(round(1.0 / grid.dt)) + 1)
        below = np.nonzero(err[r0:r1] < 2.0 * pre)[0]
        if len(below) == 0:
            recovered = False
        else:
            slowest = max(slowest, below[0] * grid.dt)
    ok = finite and bounded and recovered
    check(10, ok, f"2 impulses + 4 clamps: finite {finite}, |phi|<=1 {bounded}, "
                  f"error back under 2x pre-event within 1 s of every release "
                  f"(slowest {slowest:.2f} s)")


def test_criterion_11_determinism(tmp_path):
    outs = []
    for tag in ("a", "b"):
        out = str(tmp_path / tag)
        code = cli.main(["pipeline", "--seed", "0", "--ci-profile", "--out", out])
        assert code == 0
        outs.append(out)
    targets = ["model/model.json", "controller/controller.json",
               "eval/summary.csv", "eval/summary.json"]
    same = {rel: filecmp.cmp(f"{outs[0]}/{rel}", f"{outs[1]}/{rel}",
                             shallow=False) for rel in targets}
    ok = all(same.values())
    check(11, ok, "CI pipeline twice, same seed: checkpoints and suite "
                  f"summaries byte-identical ({sum(same.values())}/4 files)")
