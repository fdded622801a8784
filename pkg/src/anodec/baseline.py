"""Hand-tuned PID baseline (effectively PI: the derivative gain is zero).

Discrete at the 100 Hz control rate, forward-Euler integral accumulated
before acting, output clipped to the feasible input range. When the raw
output saturates, the integral update for that step is discarded so the
accumulator cannot wind up against the clamp; the behavior is switchable
for ablations.
"""

from dataclasses import dataclass, replace


@dataclass(frozen=True)
class PidState:
    integral: float = 0.0      # [rad s]
    prev_error: float | None = None
    kp: float = 2.0
    ki: float = 30.0
    kd: float = 0.0
    dt: float = 0.01
    u_min: float = -6.0
    u_max: float = 6.0
    anti_windup: bool = True

    def __post_init__(self):
        if self.dt <= 0:
            raise ValueError("dt must be positive")
        if not self.u_min < self.u_max:
            raise ValueError("u_min must be < u_max")


def pid_reset(kp=2.0, ki=30.0, kd=0.0, dt=0.01, u_min=-6.0, u_max=6.0,
              anti_windup=True):
    """Fresh controller state with zero accumulator and canonical gains."""
    return PidState(kp=kp, ki=ki, kd=kd, dt=dt, u_min=u_min, u_max=u_max,
                    anti_windup=anti_windup)


def pid_step(state, phi_d, phi_meas):
    """One control tick on the measured (noisy) angle; returns (u, state')."""
    e = phi_d - phi_meas
    integral = state.integral + e * state.dt
    deriv = 0.0 if state.prev_error is None else (e - state.prev_error) / state.dt
    u_raw = state.kp * e + state.ki * integral + state.kd * deriv
    u = min(max(u_raw, state.u_min), state.u_max)
    if state.anti_windup and u != u_raw:
        integral = state.integral
    return u, replace(state, integral=integral, prev_error=e)
