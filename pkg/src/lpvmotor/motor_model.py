"""Surface PMSM physics in the alpha-beta stationary frame.

Holds the motor parameter set with its temperature maps, the nonlinear
plant derivatives, the reference feedforward that inverts the plant on the
desired trajectory, and the tracking-error dynamics driven by the residual
control inputs.
"""

from __future__ import annotations

import bisect
import math
from dataclasses import dataclass

import numpy as np

# r/min is accepted only at I/O boundaries; everything internal is rad/s.
RPM_TO_RAD_S = math.pi / 30.0
RAD_S_TO_RPM = 30.0 / math.pi

# Sanity band for winding temperatures, degrees C.
TEMP_MIN_C = -50.0
TEMP_MAX_C = 250.0


@dataclass(frozen=True)
class MotorParams:
    """Physical SPMSM constants.

    ``stator_resistance`` is referenced at 75 C and ``flux_linkage`` at
    30 C; both are mapped to other temperatures by :func:`resistance_at`
    and :func:`flux_at`.  ``magnet_temp_coeff`` is in %/C and is negative
    for NdFeB magnets.
    """

    pole_pairs: int = 4
    stator_resistance: float = 0.2       # ohm, at 75 C
    stator_inductance: float = 0.4e-3    # H
    flux_linkage: float = 16.3e-3        # Wb, at 30 C
    inertia: float = 3.24e-5             # kg m^2
    friction: float = 0.004              # N m s/rad
    magnet_temp_coeff: float = -0.12     # %/C

    def __post_init__(self) -> None:
        if self.pole_pairs <= 0 or self.pole_pairs != int(self.pole_pairs):
            raise ValueError(f"pole_pairs must be a positive integer, got {self.pole_pairs}")
        for name in ("stator_resistance", "stator_inductance", "flux_linkage", "inertia"):
            if getattr(self, name) <= 0.0:
                raise ValueError(f"{name} must be strictly positive, got {getattr(self, name)}")
        if self.friction < 0.0:
            raise ValueError(f"friction must be non-negative, got {self.friction}")


@dataclass
class MotorState:
    """Mechanical angle/speed and stationary-frame currents."""

    theta: float = 0.0    # rad, mechanical
    omega: float = 0.0    # rad/s, mechanical
    i_alpha: float = 0.0  # A
    i_beta: float = 0.0   # A

    def as_array(self) -> np.ndarray:
        return np.array([self.theta, self.omega, self.i_alpha, self.i_beta])


@dataclass(frozen=True)
class ReferenceSample:
    """Desired speed and its first two time derivatives at one instant."""

    omega_ref: float        # rad/s
    omega_ref_dot: float    # rad/s^2
    omega_ref_ddot: float   # rad/s^3


@dataclass
class ErrorState:
    """Tracking errors: integral of speed error, speed error, current errors."""

    e_z: float = 0.0      # rad
    e_omega: float = 0.0  # rad/s
    e_alpha: float = 0.0  # A
    e_beta: float = 0.0   # A

    def as_array(self) -> np.ndarray:
        return np.array([self.e_z, self.e_omega, self.e_alpha, self.e_beta])


def _check_temp(temp_c: float) -> None:
    if not TEMP_MIN_C <= temp_c <= TEMP_MAX_C:
        raise ValueError(
            f"temperature {temp_c} C outside sanity band [{TEMP_MIN_C}, {TEMP_MAX_C}]"
        )


def resistance_at(params: MotorParams, temp_c: float) -> float:
    """Winding resistance at ``temp_c``; equals the reference value at 75 C."""
    _check_temp(temp_c)
    return params.stator_resistance * (235.0 + temp_c) / 310.0


def flux_at(params: MotorParams, temp_c: float) -> float:
    """Magnet flux linkage at ``temp_c``; equals the reference value at 30 C.

    Raises ValueError if the linear demagnetization law predicts a
    non-positive flux (fully demagnetized magnet).
    """
    _check_temp(temp_c)
    flux = params.flux_linkage * (1.0 + params.magnet_temp_coeff * (temp_c - 30.0) / 100.0)
    if flux <= 0.0:
        raise ValueError(f"flux linkage {flux} Wb non-positive at {temp_c} C (demagnetized)")
    return flux


def torque_constant(params: MotorParams, temp_c: float) -> float:
    """Torque constant 3/2 * p * flux at the given temperature, V s/rad."""
    return 1.5 * params.pole_pairs * flux_at(params, temp_c)


def _plant_rhs(
    theta: float,
    omega: float,
    i_alpha: float,
    i_beta: float,
    v_alpha: float,
    v_beta: float,
    tau_load: float,
    r_s: float,
    flux: float,
    params: MotorParams,
) -> tuple[float, float, float, float]:
    """Scalar kernel for the nonlinear plant; callers supply R_s and flux."""
    p = params.pole_pairs
    k_t = 1.5 * p * flux
    sin_pt = math.sin(p * theta)
    cos_pt = math.cos(p * theta)
    d_omega = (
        -params.friction * omega - k_t * sin_pt * i_alpha + k_t * cos_pt * i_beta - tau_load
    ) / params.inertia
    d_ia = (-r_s * i_alpha + p * flux * omega * sin_pt + v_alpha) / params.stator_inductance
    d_ib = (-r_s * i_beta - p * flux * omega * cos_pt + v_beta) / params.stator_inductance
    return omega, d_omega, d_ia, d_ib


def plant_derivative(
    state: MotorState,
    v_alpha: float,
    v_beta: float,
    tau_load: float,
    temp_c: float,
    params: MotorParams,
) -> np.ndarray:
    """Time derivative of (theta, omega, i_alpha, i_beta)."""
    r_s = resistance_at(params, temp_c)
    flux = flux_at(params, temp_c)
    return np.array(
        _plant_rhs(
            state.theta, state.omega, state.i_alpha, state.i_beta,
            v_alpha, v_beta, tau_load, r_s, flux, params,
        )
    )


def feedforward(
    ref: ReferenceSample,
    theta: float,
    omega: float,
    temp_c: float,
    u_alpha: float,
    u_beta: float,
    params: MotorParams,
) -> tuple[float, float, float, float]:
    """Desired currents and motor voltages for a twice-differentiable reference.

    Returns ``(i_alpha_ref, i_beta_ref, v_alpha, v_beta)``.  The desired
    current derivatives are evaluated analytically through the chain rule
    with the measured ``omega`` standing in for d(theta)/dt, so no numeric
    differentiation is involved.  The control inputs ``u_alpha``/``u_beta``
    are subtracted from the feedforward voltages.
    """
    p = params.pole_pairs
    flux = flux_at(params, temp_c)
    k_t = 1.5 * p * flux
    if k_t < 1e-12:
        raise ValueError(f"torque constant {k_t} too small for feedforward inversion")
    r_s = resistance_at(params, temp_c)
    sin_pt = math.sin(p * theta)
    cos_pt = math.cos(p * theta)

    tau_ref = params.inertia * ref.omega_ref_dot + params.friction * ref.omega_ref
    tau_ref_dot = params.inertia * ref.omega_ref_ddot + params.friction * ref.omega_ref_dot
    i_a_ref = -tau_ref * sin_pt / k_t
    i_b_ref = tau_ref * cos_pt / k_t
    di_a_ref = -(tau_ref_dot * sin_pt + tau_ref * p * omega * cos_pt) / k_t
    di_b_ref = (tau_ref_dot * cos_pt - tau_ref * p * omega * sin_pt) / k_t

    l_s = params.stator_inductance
    v_alpha = l_s * di_a_ref + r_s * i_a_ref - p * flux * ref.omega_ref * sin_pt - u_alpha
    v_beta = l_s * di_b_ref + r_s * i_b_ref + p * flux * ref.omega_ref * cos_pt - u_beta
    return i_a_ref, i_b_ref, v_alpha, v_beta


def error_derivative(
    err: ErrorState,
    theta: float,
    u_alpha: float,
    u_beta: float,
    tau_load: float,
    temp_c: float,
    params: MotorParams,
    b1_physical: bool = True,
) -> np.ndarray:
    """Time derivative of the tracking-error state.

    The load torque enters the speed-error equation with a positive sign
    (the plant sees it negatively, the error flips it).  With
    ``b1_physical`` (default) the torque is divided by the inertia, which
    is the physically consistent reading; disabling it injects the raw
    torque for compatibility with the plain-integrator disturbance channel
    used by the LPV matrices.
    """
    p = params.pole_pairs
    flux = flux_at(params, temp_c)
    r_s = resistance_at(params, temp_c)
    k_t = 1.5 * p * flux
    sin_pt = math.sin(p * theta)
    cos_pt = math.cos(p * theta)
    j_m = params.inertia

    tau_term = tau_load / j_m if b1_physical else tau_load
    d_ez = err.e_omega
    d_ew = (-params.friction * err.e_omega - k_t * sin_pt * err.e_alpha
            + k_t * cos_pt * err.e_beta) / j_m + tau_term
    d_ea = (-r_s * err.e_alpha + p * flux * sin_pt * err.e_omega + u_alpha) / params.stator_inductance
    d_eb = (-r_s * err.e_beta - p * flux * cos_pt * err.e_omega + u_beta) / params.stator_inductance
    return np.array([d_ez, d_ew, d_ea, d_eb])


def _quintic_blend(s: float) -> tuple[float, float, float]:
    """C2 smoothstep 10s^3 - 15s^4 + 6s^5 and its first two derivatives."""
    q = s * s * s * (10.0 + s * (-15.0 + 6.0 * s))
    dq = 30.0 * s * s * (1.0 + s * (-2.0 + s))
    ddq = 60.0 * s * (1.0 + s * (-3.0 + 2.0 * s))
    return q, dq, ddq


class SpeedProfile:
    """Piecewise speed reference with rate- and curvature-limited steps.

    Step changes are realized as quintic S-curves over ``ramp_time`` so the
    second derivative of the reference exists and is continuous, which the
    feedforward needs.  All speeds here are rad/s; use
    :meth:`from_rpm_steps` to build from r/min step commands.
    """

    def __init__(self, initial: float, steps: list[tuple[float, float]], ramp_time: float = 0.01):
        if ramp_time <= 0.0:
            raise ValueError("ramp_time must be positive")
        times = [t for t, _ in steps]
        if any(t2 - t1 < ramp_time for t1, t2 in zip(times, times[1:])):
            raise ValueError("step commands closer than one ramp_time")
        self.initial = float(initial)
        self.steps = [(float(t), float(w)) for t, w in sorted(steps)]
        self.ramp_time = float(ramp_time)
        self._times = [t for t, _ in self.steps]

    @classmethod
    def from_rpm_steps(
        cls, initial_rpm: float, steps_rpm: list[tuple[float, float]], ramp_time: float = 0.01
    ) -> "SpeedProfile":
        return cls(
            initial_rpm * RPM_TO_RAD_S,
            [(t, w * RPM_TO_RAD_S) for t, w in steps_rpm],
            ramp_time,
        )

    def sample(self, t: float) -> ReferenceSample:
        k = bisect.bisect_right(self._times, t)
        if k == 0:
            return ReferenceSample(self.initial, 0.0, 0.0)
        t_k, level_k = self.steps[k - 1]
        prev = self.initial if k == 1 else self.steps[k - 2][1]
        dt = t - t_k
        if dt >= self.ramp_time:
            return ReferenceSample(level_k, 0.0, 0.0)
        s = dt / self.ramp_time
        q, dq, ddq = _quintic_blend(s)
        delta = level_k - prev
        return ReferenceSample(
            prev + delta * q,
            delta * dq / self.ramp_time,
            delta * ddq / self.ramp_time**2,
        )
