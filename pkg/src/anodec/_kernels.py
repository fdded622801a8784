"""Compiled hot paths: rollouts, fused BPTT gradients, and the plant stepper.

These kernels are the exact same math as the pure-numpy reference engine in
odecore/nets (tests pin them against each other); they exist because the
training loops take tens of thousands of 500-step rollouts. Everything is
single-threaded with plain IEEE arithmetic so results are run-to-run
deterministic. Parameter vectors use the documented flat layout
(w1 row-major, b1, w2, b2).
"""

import numpy as np
from numba import njit

# -- model net constants (9-dim latent, input (xi, u)) --
_ML = 9
_MI = 10
_MN = _ML * _MI + _ML + _ML + 1  # 109

# -- controller net constants (5-dim latent, input (xi, phi, phi_d)) --
_CL = 5
_CI = 7
_CN = _CL * _CI + _CL + _CL + 1  # 46

_JD = _ML + _CL  # joint closed-loop state dimension


@njit(cache=True)
def _model_stage(w1, b1, x, u, k):
    """k <- tanh(w1 @ (x, u) + b1)."""
    for i in range(_ML):
        acc = b1[i]
        for j in range(_ML):
            acc += w1[i, j] * x[j]
        acc += w1[i, _ML] * u
        k[i] = np.tanh(acc)


@njit(cache=True)
def model_rollout(theta, u, n_steps, dt):
    """Latent trajectory (n_steps+1, 9) of the surrogate from xi(0) = 0."""
    w1 = theta[:_ML * _MI].reshape(_ML, _MI)
    b1 = theta[_ML * _MI:_ML * _MI + _ML]
    traj = np.zeros((n_steps + 1, _ML))
    k1 = np.empty(_ML)
    k2 = np.empty(_ML)
    k3 = np.empty(_ML)
    k4 = np.empty(_ML)
    xs = np.empty(_ML)
    for n in range(n_steps):
        x = traj[n]
        un = u[n]
        _model_stage(w1, b1, x, un, k1)
        for j in range(_ML):
            xs[j] = x[j] + 0.5 * dt * k1[j]
        _model_stage(w1, b1, xs, un, k2)
        for j in range(_ML):
            xs[j] = x[j] + 0.5 * dt * k2[j]
        _model_stage(w1, b1, xs, un, k3)
        for j in range(_ML):
            xs[j] = x[j] + dt * k3[j]
        _model_stage(w1, b1, xs, un, k4)
        for j in range(_ML):
            traj[n + 1, j] = x[j] + (dt / 6.0) * (k1[j] + 2.0 * k2[j] + 2.0 * k3[j] + k4[j])
    return traj


@njit(cache=True)
def model_fit_loss(theta, u, phi, n_steps, dt):
    """Left-Riemann integral of |phi - phi_hat| for one trial (forward only)."""
    traj = model_rollout(theta, u, n_steps, dt)
    w2 = theta[_ML * _MI + _ML:_ML * _MI + 2 * _ML]
    b2 = theta[_MN - 1]
    loss = 0.0
    for n in range(n_steps):
        phihat = b2
        for j in range(_ML):
            phihat += w2[j] * traj[n, j]
        loss += dt * abs(phi[n] - phihat)
    return loss


@njit(cache=True)
def model_fit_loss_grad(theta, u_batch, phi_batch, n_steps, dt):
    """Summed trial loss and its exact gradient through the unrolled RK4 graph.

    u_batch/phi_batch are (B, n_steps+1); returns (loss, grad[109]).
    Trials are processed in index order so the reduction is deterministic.
    """
    w1 = theta[:_ML * _MI].reshape(_ML, _MI)
    b1 = theta[_ML * _MI:_ML * _MI + _ML]
    w2 = theta[_ML * _MI + _ML:_ML * _MI + 2 * _ML]
    b2 = theta[_MN - 1]

    grad = np.zeros(_MN)
    gw1 = grad[:_ML * _MI].reshape(_ML, _MI)
    gb1 = grad[_ML * _MI:_ML * _MI + _ML]
    gw2 = grad[_ML * _MI + _ML:_ML * _MI + 2 * _ML]

    n_trials = u_batch.shape[0]
    X = np.zeros((n_steps + 1, _ML))
    K = np.empty((n_steps, 4, _ML))
    xs = np.empty((4, _ML))
    a = np.empty(_ML)
    ak = np.empty(_ML)
    wt = np.empty(_ML)
    gx = np.empty((4, _ML))
    loss = 0.0

    for b in range(n_trials):
        u = u_batch[b]
        phi = phi_batch[b]

        # forward, storing states and all stage values
        for j in range(_ML):
            X[0, j] = 0.0
        for n in range(n_steps):
            un = u[n]
            for j in range(_ML):
                xs[0, j] = X[n, j]
            _model_stage(w1, b1, xs[0], un, K[n, 0])
            for j in range(_ML):
                xs[1, j] = X[n, j] + 0.5 * dt * K[n, 0, j]
            _model_stage(w1, b1, xs[1], un, K[n, 1])
            for j in range(_ML):
                xs[2, j] = X[n, j] + 0.5 * dt * K[n, 1, j]
            _model_stage(w1, b1, xs[2], un, K[n, 2])
            for j in range(_ML):
                xs[3, j] = X[n, j] + dt * K[n, 2, j]
            _model_stage(w1, b1, xs[3], un, K[n, 3])
            for j in range(_ML):
                X[n + 1, j] = X[n, j] + (dt / 6.0) * (
                    K[n, 0, j] + 2.0 * K[n, 1, j] + 2.0 * K[n, 2, j] + K[n, 3, j])

        for n in range(n_steps):
            phihat = b2
            for j in range(_ML):
                phihat += w2[j] * X[n, j]
            loss += dt * abs(phi[n] - phihat)

        # reverse sweep; a = dL/dX[n+1]
        for j in range(_ML):
            a[j] = 0.0
        for n in range(n_steps - 1, -1, -1):
            un = u[n]
            # rebuild stage inputs from the stored states and stage slopes
            for j in range(_ML):
                xs[0, j] = X[n, j]
                xs[1, j] = X[n, j] + 0.5 * dt * K[n, 0, j]
                xs[2, j] = X[n, j] + 0.5 * dt * K[n, 1, j]
                xs[3, j] = X[n, j] + dt * K[n, 2, j]
            for s in range(3, -1, -1):
                if s == 3:
                    for j in range(_ML):
                        ak[j] = (dt / 6.0) * a[j]
                elif s == 2:
                    for j in range(_ML):
                        ak[j] = (dt / 3.0) * a[j] + dt * gx[3, j]
                elif s == 1:
                    for j in range(_ML):
                        ak[j] = (dt / 3.0) * a[j] + 0.5 * dt * gx[2, j]
                else:
                    for j in range(_ML):
                        ak[j] = (dt / 6.0) * a[j] + 0.5 * dt * gx[1, j]
                for i in range(_ML):
                    wt[i] = ak[i] * (1.0 - K[n, s, i] * K[n, s, i])
                for j in range(_ML):
                    acc = 0.0
                    for i in range(_ML):
                        acc += w1[i, j] * wt[i]
                    gx[s, j] = acc
                for i in range(_ML):
                    for j in range(_ML):
                        gw1[i, j] += wt[i] * xs[s, j]
                    gw1[i, _ML] += wt[i] * un
                    gb1[i] += wt[i]
            for j in range(_ML):
                a[j] += gx[0, j] + gx[1, j] + gx[2, j] + gx[3, j]
            # left-Riemann loss term at sample n
            phihat = b2
            for j in range(_ML):
                phihat += w2[j] * X[n, j]
            e = phi[n] - phihat
            go = -dt * np.sign(e)
            for j in range(_ML):
                a[j] += go * w2[j]
                gw2[j] += go * X[n, j]
            grad[_MN - 1] += go

    return loss, grad


@njit(cache=True)
def _joint_stage(w1m, b1m, w2m, b2m, w1c, b1c, w2c, b2c, u_min, u_max,
                 y, phid, k, aux):
    """One evaluation of the coupled field; aux gets (ubar, u, phihat)."""
    phihat = b2m
    for j in range(_ML):
        phihat += w2m[j] * y[j]
    pre = b2c
    for j in range(_CL):
        pre += w2c[j] * y[_ML + j]
    ubar = np.tanh(pre)
    u = (u_max - u_min) * (0.5 * ubar + 0.5) + u_min
    for i in range(_ML):
        acc = b1m[i]
        for j in range(_ML):
            acc += w1m[i, j] * y[j]
        acc += w1m[i, _ML] * u
        k[i] = np.tanh(acc)
    for i in range(_CL):
        acc = b1c[i]
        for j in range(_CL):
            acc += w1c[i, j] * y[_ML + j]
        acc += w1c[i, _CL] * phihat + w1c[i, _CL + 1] * phid
        k[_ML + i] = acc
    aux[0] = ubar
    aux[1] = u
    aux[2] = phihat


@njit(cache=True)
def closedloop_rollout(theta_m, theta_c, phid, n_steps, dt, u_min, u_max):
    """Joint 14-dim rollout from zero; returns (latent traj, phi_hat, u) samples.

    phi_hat and u are read out at the grid samples (u[n] is the control the
    loop emits at sample n); phid is held constant within each step.
    """
    w1m = theta_m[:_ML * _MI].reshape(_ML, _MI)
    b1m = theta_m[_ML * _MI:_ML * _MI + _ML]
    w2m = theta_m[_ML * _MI + _ML:_ML * _MI + 2 * _ML]
    b2m = theta_m[_MN - 1]
    w1c = theta_c[:_CL * _CI].reshape(_CL, _CI)
    b1c = theta_c[_CL * _CI:_CL * _CI + _CL]
    w2c = theta_c[_CL * _CI + _CL:_CL * _CI + 2 * _CL]
    b2c = theta_c[_CN - 1]

    traj = np.zeros((n_steps + 1, _JD))
    phihat = np.empty(n_steps + 1)
    uout = np.empty(n_steps + 1)
    k1 = np.empty(_JD)
    k2 = np.empty(_JD)
    k3 = np.empty(_JD)
    k4 = np.empty(_JD)
    ys = np.empty(_JD)
    aux = np.empty(3)

    for n in range(n_steps + 1):
        ph = b2m
        for j in range(_ML):
            ph += w2m[j] * traj[n, j]
        phihat[n] = ph
        pre = b2c
        for j in range(_CL):
            pre += w2c[j] * traj[n, _ML + j]
        uout[n] = (u_max - u_min) * (0.5 * np.tanh(pre) + 0.5) + u_min
        if n == n_steps:
            break
        y = traj[n]
        pd = phid[n]
        _joint_stage(w1m, b1m, w2m, b2m, w1c, b1c, w2c, b2c, u_min, u_max, y, pd, k1, aux)
        for j in range(_JD):
            ys[j] = y[j] + 0.5 * dt * k1[j]
        _joint_stage(w1m, b1m, w2m, b2m, w1c, b1c, w2c, b2c, u_min, u_max, ys, pd, k2, aux)
        for j in range(_JD):
            ys[j] = y[j] + 0.5 * dt * k2[j]
        _joint_stage(w1m, b1m, w2m, b2m, w1c, b1c, w2c, b2c, u_min, u_max, ys, pd, k3, aux)
        for j in range(_JD):
            ys[j] = y[j] + dt * k3[j]
        _joint_stage(w1m, b1m, w2m, b2m, w1c, b1c, w2c, b2c, u_min, u_max, ys, pd, k4, aux)
        for j in range(_JD):
            traj[n + 1, j] = y[j] + (dt / 6.0) * (k1[j] + 2.0 * k2[j] + 2.0 * k3[j] + k4[j])
    return traj, phihat, uout


@njit(cache=True)
def closedloop_loss_grad(theta_m, theta_c, phid_batch, n_steps, dt, u_min, u_max):
    """Mean tracking loss over a reference batch and its gradient in theta_c.

    The surrogate parameters are constants here (frozen model); the loss per
    reference is the left-Riemann integral of |phi_d - phi_hat|. References
    are reduced in index order.
    """
    w1m = theta_m[:_ML * _MI].reshape(_ML, _MI)
    b1m = theta_m[_ML * _MI:_ML * _MI + _ML]
    w2m = theta_m[_ML * _MI + _ML:_ML * _MI + 2 * _ML]
    b2m = theta_m[_MN - 1]
    w1c = theta_c[:_CL * _CI].reshape(_CL, _CI)
    b1c = theta_c[_CL * _CI:_CL * _CI + _CL]
    w2c = theta_c[_CL * _CI + _CL:_CL * _CI + 2 * _CL]
    b2c = theta_c[_CN - 1]
    du = u_max - u_min

    grad = np.zeros(_CN)
    gw1c = grad[:_CL * _CI].reshape(_CL, _CI)
    gb1c = grad[_CL * _CI:_CL * _CI + _CL]
    gw2c = grad[_CL * _CI + _CL:_CL * _CI + 2 * _CL]

    n_refs = phid_batch.shape[0]
    Y = np.zeros((n_steps + 1, _JD))
    K = np.empty((n_steps, 4, _JD))
    UB = np.empty((n_steps, 4))
    ys = np.empty((4, _JD))
    aux = np.empty(3)
    a = np.empty(_JD)
    ak = np.empty(_JD)
    wt = np.empty(_ML)
    gx = np.empty((4, _JD))
    loss = 0.0

    for b in range(n_refs):
        phid = phid_batch[b]

        for j in range(_JD):
            Y[0, j] = 0.0
        for n in range(n_steps):
            pd = phid[n]
            for j in range(_JD):
                ys[0, j] = Y[n, j]
            _joint_stage(w1m, b1m, w2m, b2m, w1c, b1c, w2c, b2c, u_min, u_max, ys[0], pd, K[n, 0], aux)
            UB[n, 0] = aux[0]
            for j in range(_JD):
                ys[1, j] = Y[n, j] + 0.5 * dt * K[n, 0, j]
            _joint_stage(w1m, b1m, w2m, b2m, w1c, b1c, w2c, b2c, u_min, u_max, ys[1], pd, K[n, 1], aux)
            UB[n, 1] = aux[0]
            for j in range(_JD):
                ys[2, j] = Y[n, j] + 0.5 * dt * K[n, 1, j]
            _joint_stage(w1m, b1m, w2m, b2m, w1c, b1c, w2c, b2c, u_min, u_max, ys[2], pd, K[n, 2], aux)
            UB[n, 2] = aux[0]
            for j in range(_JD):
                ys[3, j] = Y[n, j] + dt * K[n, 2, j]
            _joint_stage(w1m, b1m, w2m, b2m, w1c, b1c, w2c, b2c, u_min, u_max, ys[3], pd, K[n, 3], aux)
            UB[n, 3] = aux[0]
            for j in range(_JD):
                Y[n + 1, j] = Y[n, j] + (dt / 6.0) * (
                    K[n, 0, j] + 2.0 * K[n, 1, j] + 2.0 * K[n, 2, j] + K[n, 3, j])

        for n in range(n_steps):
            phihat = b2m
            for j in range(_ML):
                phihat += w2m[j] * Y[n, j]
            loss += dt * abs(phid[n] - phihat)

        for j in range(_JD):
            a[j] = 0.0
        for n in range(n_steps - 1, -1, -1):
            pd = phid[n]
            for j in range(_JD):
                ys[0, j] = Y[n, j]
                ys[1, j] = Y[n, j] + 0.5 * dt * K[n, 0, j]
                ys[2, j] = Y[n, j] + 0.5 * dt * K[n, 1, j]
                ys[3, j] = Y[n, j] + dt * K[n, 2, j]
            for s in range(3, -1, -1):
                if s == 3:
                    for j in range(_JD):
                        ak[j] = (dt / 6.0) * a[j]
                elif s == 2:
                    for j in range(_JD):
                        ak[j] = (dt / 3.0) * a[j] + dt * gx[3, j]
                elif s == 1:
                    for j in range(_JD):
                        ak[j] = (dt / 3.0) * a[j] + 0.5 * dt * gx[2, j]
                else:
                    for j in range(_JD):
                        ak[j] = (dt / 6.0) * a[j] + 0.5 * dt * gx[1, j]

                # model half: k[:9] = tanh(w1m @ (xm, u) + b1m), params frozen
                for i in range(_ML):
                    wt[i] = ak[i] * (1.0 - K[n, s, i] * K[n, s, i])
                for j in range(_ML):
                    acc = 0.0
                    for i in range(_ML):
                        acc += w1m[i, j] * wt[i]
                    gx[s, j] = acc
                gu = 0.0
                for i in range(_ML):
                    gu += w1m[i, _ML] * wt[i]

                # controller half: k[9:] = w1c @ (xc, phihat, phid) + b1c
                phihat_s = b2m
                for j in range(_ML):
                    phihat_s += w2m[j] * ys[s, j]
                gphihat = 0.0
                for j in range(_CL):
                    acc = 0.0
                    for i in range(_CL):
                        acc += w1c[i, j] * ak[_ML + i]
                    gx[s, _ML + j] = acc
                for i in range(_CL):
                    wci = ak[_ML + i]
                    for j in range(_CL):
                        gw1c[i, j] += wci * ys[s, _ML + j]
                    gw1c[i, _CL] += wci * phihat_s
                    gw1c[i, _CL + 1] += wci * pd
                    gb1c[i] += wci
                    gphihat += w1c[i, _CL] * wci

                # u = du*(0.5*tanh(w2c.xc + b2c) + 0.5) + u_min
                ub = UB[n, s]
                apre = gu * 0.5 * du * (1.0 - ub * ub)
                for j in range(_CL):
                    gw2c[j] += apre * ys[s, _ML + j]
                    gx[s, _ML + j] += apre * w2c[j]
                grad[_CN - 1] += apre

                # phihat = w2m.xm + b2m feeds the controller input
                for j in range(_ML):
                    gx[s, j] += gphihat * w2m[j]

            for j in range(_JD):
                a[j] += gx[0, j] + gx[1, j] + gx[2, j] + gx[3, j]
            phihat = b2m
            for j in range(_ML):
                phihat += w2m[j] * Y[n, j]
            e = phid[n] - phihat
            go = -dt * np.sign(e)
            for j in range(_ML):
                a[j] += go * w2m[j]

    loss /= n_refs
    for j in range(_CN):
        grad[j] /= n_refs
    return loss, grad


# -- synthetic plant stepping --
# packed config layout (see plant.PlantConfig.pack)
_PJ = 0      # inertia
_PD = 1      # viscous damping
_PD2 = 2     # quadratic damping
_PR = 3      # pulley radius
_PGF = 4     # force-map gain
_PC0 = 5     # contraction at mid stroke
_PC1 = 6     # contraction slope
_PBA = 7     # Bouc-Wen alpha
_PBB = 8     # Bouc-Wen beta
_PBG = 9     # Bouc-Wen gamma
_PBN = 10    # Bouc-Wen exponent
_PWH = 11    # hysteresis torque weight
_PCG = 12    # creep gain
_PCT = 13    # creep time constant
_PPT = 14    # pressure lag time constant
_PPM = 15    # mean pressure
_PPS = 16    # supply pressure
_PGR = 17    # gravity flag
_PML = 18    # mass * g * lever
_PFL = 19    # phi_min
_PFH = 20    # phi_max
PLANT_CFG_LEN = 21


@njit(cache=True)
def _plant_derivs(s, pd1, pd2, ext_torque, clamped, cfg, ds):
    phi = s[0]
    om = s[1]
    p1 = s[2]
    p2 = s[3]
    z = s[4]
    c = s[5]

    kap1 = cfg[_PC0] + cfg[_PC1] * phi
    kap2 = cfg[_PC0] - cfg[_PC1] * phi
    if kap1 < 0.0:
        kap1 = 0.0
    elif kap1 > 1.0:
        kap1 = 1.0
    if kap2 < 0.0:
        kap2 = 0.0
    elif kap2 > 1.0:
        kap2 = 1.0
    f1 = cfg[_PGF] * p1 * (1.0 - kap1)
    f2 = cfg[_PGF] * p2 * (1.0 - kap2)

    torque = cfg[_PR] * (f1 - f2) - cfg[_PD] * om - cfg[_PD2] * om * abs(om) \
        - cfg[_PWH] * z + c + ext_torque
    if cfg[_PGR] != 0.0:
        torque -= cfg[_PML] * np.sin(phi)

    if clamped:
        ds[0] = 0.0
        ds[1] = 0.0
    else:
        ds[0] = om
        ds[1] = torque / cfg[_PJ]
    ds[2] = (pd1 - p1) / cfg[_PPT]
    ds[3] = (pd2 - p2) / cfg[_PPT]
    ds[4] = om * (cfg[_PBA] - (cfg[_PBB] * np.sign(z * om) + cfg[_PBG]) * abs(z) ** cfg[_PBN])
    ds[5] = (cfg[_PCG] * (p1 - p2) - c) / cfg[_PCT]


@njit(cache=True)
def plant_step_kernel(s, pd1, pd2, dt, n_sub, ext_torque, clamped, cfg):
    """Advance the plant one control interval; RK4 sub-steps at dt/n_sub.

    pd1/pd2 are the desired bellows pressures held over the interval. The
    hard stop clamps phi to its range and zeroes outward velocity after
    every sub-step. Returns the new state vector.
    """
    h = dt / n_sub
    out = s.copy()
    k1 = np.empty(6)
    k2 = np.empty(6)
    k3 = np.empty(6)
    k4 = np.empty(6)
    tmp = np.empty(6)
    for _ in range(n_sub):
        _plant_derivs(out, pd1, pd2, ext_torque, clamped, cfg, k1)
        for j in range(6):
            tmp[j] = out[j] + 0.5 * h * k1[j]
        _plant_derivs(tmp, pd1, pd2, ext_torque, clamped, cfg, k2)
        for j in range(6):
            tmp[j] = out[j] + 0.5 * h * k2[j]
        _plant_derivs(tmp, pd1, pd2, ext_torque, clamped, cfg, k3)
        for j in range(6):
            tmp[j] = out[j] + h * k3[j]
        _plant_derivs(tmp, pd1, pd2, ext_torque, clamped, cfg, k4)
        for j in range(6):
            out[j] += (h / 6.0) * (k1[j] + 2.0 * k2[j] + 2.0 * k3[j] + k4[j])
        if out[0] >= cfg[_PFH]:
            out[0] = cfg[_PFH]
            if out[1] > 0.0:
                out[1] = 0.0
        elif out[0] <= cfg[_PFL]:
            out[0] = cfg[_PFL]
            if out[1] < 0.0:
                out[1] = 0.0
        for j in range(2, 4):
            if out[j] < 0.0:
                out[j] = 0.0
            elif out[j] > cfg[_PPS]:
                out[j] = cfg[_PPS]
    return out
