"""Scheduling parameters and the generalized LPV plant for the SPMSM.

The error dynamics become linear once the rotor-angle trigonometry and the
temperature-dependent flux are folded into three measured scheduling
parameters.  This module builds that parameter box, the scheduled system
matrices, and the weighted performance channels used for synthesis.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .motor_model import MotorParams, flux_at, resistance_at

N_STATES = 4
N_DIST = 1
N_INPUTS = 2
N_MEAS = 2
N_PERF = 6
N_PARAMS = 3


@dataclass(frozen=True)
class SchedulingPoint:
    """Measured scheduling vector: flux-modulated rotor trigonometry and temperature."""

    rho1: float  # V s/rad, p*flux*sin(p*theta)
    rho2: float  # V s/rad, p*flux*cos(p*theta)
    rho3: float  # C, winding temperature

    def as_array(self) -> np.ndarray:
        return np.array([self.rho1, self.rho2, self.rho3])


@dataclass(frozen=True)
class ParameterBox:
    """Componentwise bounds and rate bounds for the scheduling vector.

    An axis with ``lower == upper`` is degenerate: the parameter is frozen
    there and contributes neither grid resolution nor rate vertices.
    """

    lower: tuple[float, float, float]
    upper: tuple[float, float, float]
    rate: tuple[float, float, float]

    def __post_init__(self) -> None:
        for lo, hi in zip(self.lower, self.upper):
            if lo > hi:
                raise ValueError(f"lower bound {lo} exceeds upper bound {hi}")
        if any(r < 0.0 for r in self.rate):
            raise ValueError(f"rate bounds must be non-negative, got {self.rate}")

    def degenerate_axes(self) -> tuple[bool, bool, bool]:
        return tuple(lo == hi for lo, hi in zip(self.lower, self.upper))

    def contains(self, rho: SchedulingPoint, tol: float = 1e-9) -> bool:
        vals = rho.as_array()
        spans = [max(hi - lo, 1.0) for lo, hi in zip(self.lower, self.upper)]
        return all(
            lo - tol * s <= v <= hi + tol * s
            for v, lo, hi, s in zip(vals, self.lower, self.upper, spans)
        )


@dataclass(frozen=True)
class PerformanceWeights:
    """Scalar penalties on the four error states and the two control inputs."""

    integral: float = 1.0       # on e_z
    speed: float = 10.0         # on e_omega
    current_alpha: float = 0.1  # on e_alpha
    current_beta: float = 0.1   # on e_beta
    input_alpha: float = 0.01   # on u_alpha
    input_beta: float = 0.01    # on u_beta

    def __post_init__(self) -> None:
        vals = (self.integral, self.speed, self.current_alpha, self.current_beta,
                self.input_alpha, self.input_beta)
        if any(v < 0.0 for v in vals):
            raise ValueError(f"weights must be non-negative, got {vals}")
        if not any(v > 0.0 for v in vals[:4]):
            raise ValueError("at least one state weight must be strictly positive")
        if not any(v > 0.0 for v in vals[4:]):
            raise ValueError("at least one input weight must be strictly positive")

    def state_diag(self) -> np.ndarray:
        return np.array([self.integral, self.speed, self.current_alpha, self.current_beta])

    def input_diag(self) -> np.ndarray:
        return np.array([self.input_alpha, self.input_beta])


@dataclass(frozen=True)
class GeneralizedPlant:
    """State-space data of the weighted open-loop channel at one scheduling point.

    Only A depends on the scheduling point; B2, C2, D12 and D21 are constant
    across the box, which the controller reconstruction relies on.
    """

    A: np.ndarray
    B1: np.ndarray
    B2: np.ndarray
    C1: np.ndarray
    C2: np.ndarray
    D11: np.ndarray
    D12: np.ndarray
    D21: np.ndarray

    @property
    def n(self) -> int:
        return self.A.shape[0]

    @property
    def n_w(self) -> int:
        return self.B1.shape[1]

    @property
    def n_u(self) -> int:
        return self.B2.shape[1]

    @property
    def n_z(self) -> int:
        return self.C1.shape[0]

    @property
    def n_y(self) -> int:
        return self.C2.shape[0]


def scheduling_from(
    theta: float,
    temp_c: float,
    params: MotorParams,
    box: ParameterBox | None = None,
) -> SchedulingPoint:
    """Scheduling vector measured from rotor angle and temperature."""
    if box is not None and not box.lower[2] <= temp_c <= box.upper[2]:
        raise ValueError(
            f"temperature {temp_c} C outside scheduling box [{box.lower[2]}, {box.upper[2]}]"
        )
    p_flux = params.pole_pairs * flux_at(params, temp_c)
    angle = params.pole_pairs * theta
    return SchedulingPoint(p_flux * np.sin(angle), p_flux * np.cos(angle), temp_c)


def default_box(
    params: MotorParams,
    temp_min: float = 30.0,
    temp_max: float = 130.0,
    omega_max: float = 400.0 * np.pi / 30.0,
    temp_rate_max: float = 50.0,
) -> ParameterBox:
    """Outer parameter box for the given operating envelope.

    The trigonometric parameters are bounded by the temperature-maximized
    flux (conservative outer bound, since flux varies over the temperature
    range), and their rate bounds combine the angle sweep at ``omega_max``
    with the flux drift at ``temp_rate_max``.
    """
    if temp_min > temp_max:
        raise ValueError("temp_min must not exceed temp_max")
    if omega_max <= 0.0:
        raise ValueError("omega_max must be positive")
    p = params.pole_pairs
    flux_max = max(flux_at(params, temp_min), flux_at(params, temp_max))
    rho_bound = p * flux_max
    flux_rate = params.flux_linkage * abs(params.magnet_temp_coeff) / 100.0 * temp_rate_max
    nu_trig = p * p * flux_max * omega_max + p * flux_rate
    return ParameterBox(
        lower=(-rho_bound, -rho_bound, temp_min),
        upper=(rho_bound, rho_bound, temp_max),
        rate=(nu_trig, nu_trig, temp_rate_max),
    )


def min_trig_radius(params: MotorParams, temp_min: float, temp_max: float) -> float:
    """Smallest magnitude of the trig scheduling pair over the temperature box.

    The pair always sits on the circle of radius p*flux(T), so nothing
    physical ever enters the disc below this radius; gridded constraints
    inside it would demand stabilizing a demagnetized machine.
    """
    return params.pole_pairs * min(
        flux_at(params, temp_min), flux_at(params, temp_max)
    )


def circle_grid(
    params: MotorParams,
    temp_min: float,
    temp_max: float,
    n_angle: int,
    n_temp: int,
) -> list[SchedulingPoint]:
    """Scheduling points on the physical flux circle instead of the box.

    Grids the electrical angle uniformly (endpoint excluded, by symmetry)
    against temperatures; less conservative than the box because only
    reachable parameter values are constrained.
    """
    if n_angle < 3:
        raise ValueError("need at least 3 angles to cover the circle")
    temps = [temp_min] if temp_min == temp_max else np.linspace(temp_min, temp_max, n_temp)
    points = []
    for temp_c in temps:
        radius = params.pole_pairs * flux_at(params, temp_c)
        for angle in np.linspace(0.0, 2.0 * np.pi, n_angle, endpoint=False):
            points.append(SchedulingPoint(
                radius * np.sin(angle), radius * np.cos(angle), float(temp_c)
            ))
    return points


def error_plant(
    rho: SchedulingPoint,
    params: MotorParams,
    b1_physical: bool = True,
) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Scheduled error-dynamics matrices (A, B1, B2, C).

    ``b1_physical`` selects the load-torque channel scaled by 1/J_m
    (consistent with the error dynamics); disabling it uses the plain unit
    entry of the LPV disturbance column.
    """
    j_m = params.inertia
    l_s = params.stator_inductance
    r_s = resistance_at(params, rho.rho3)
    a = np.array([
        [0.0, 1.0, 0.0, 0.0],
        [0.0, -params.friction / j_m, -1.5 * rho.rho1 / j_m, 1.5 * rho.rho2 / j_m],
        [0.0, rho.rho1 / l_s, -r_s / l_s, 0.0],
        [0.0, -rho.rho2 / l_s, 0.0, -r_s / l_s],
    ])
    b1 = np.array([[0.0], [1.0 / j_m if b1_physical else 1.0], [0.0], [0.0]])
    b2 = np.array([[0.0, 0.0], [0.0, 0.0], [1.0 / l_s, 0.0], [0.0, 1.0 / l_s]])
    c2 = np.array([[1.0, 0.0, 0.0, 0.0], [0.0, 1.0, 0.0, 0.0]])
    return a, b1, b2, c2


def generalized_plant(
    rho: SchedulingPoint,
    params: MotorParams,
    weights: PerformanceWeights,
    b1_physical: bool = True,
) -> GeneralizedPlant:
    """Weighted synthesis plant at one scheduling point."""
    a, b1, b2, c2 = error_plant(rho, params, b1_physical)
    c1 = np.vstack([np.diag(weights.state_diag()), np.zeros((N_INPUTS, N_STATES))])
    d12 = np.vstack([np.zeros((N_STATES, N_INPUTS)), np.diag(weights.input_diag())])
    d11 = np.zeros((N_PERF, N_DIST))
    d21 = np.zeros((N_MEAS, N_DIST))
    return GeneralizedPlant(A=a, B1=b1, B2=b2, C1=c1, C2=c2, D11=d11, D12=d12, D21=d21)


@dataclass(frozen=True)
class PlantBasis:
    """Affine expansion of the plant over the scheduling vector.

    ``A_coeffs[0]`` is the constant term and ``A_coeffs[1 + i]`` the
    coefficient of parameter i; all other matrices are constant.
    """

    A_coeffs: np.ndarray  # (1 + N_PARAMS, n, n)
    B1: np.ndarray
    B2: np.ndarray
    C1: np.ndarray
    C2: np.ndarray
    D11: np.ndarray
    D12: np.ndarray
    D21: np.ndarray

    def A(self, rho: np.ndarray) -> np.ndarray:
        a = self.A_coeffs[0].copy()
        for i in range(N_PARAMS):
            a += rho[i] * self.A_coeffs[1 + i]
        return a

    def at(self, rho: np.ndarray) -> GeneralizedPlant:
        return GeneralizedPlant(
            A=self.A(rho), B1=self.B1, B2=self.B2, C1=self.C1, C2=self.C2,
            D11=self.D11, D12=self.D12, D21=self.D21,
        )


def plant_basis(
    params: MotorParams,
    weights: PerformanceWeights,
    b1_physical: bool = True,
) -> PlantBasis:
    """Exact affine coefficients of the scheduled plant.

    A depends affinely on (rho1, rho2, rho3) because the resistance map is
    itself affine in temperature; the expansion below is exact, not a fit.
    """
    j_m = params.inertia
    l_s = params.stator_inductance
    a0 = np.zeros((N_STATES, N_STATES))
    a0[0, 1] = 1.0
    a0[1, 1] = -params.friction / j_m
    r0_slope = params.stator_resistance / 310.0
    a0[2, 2] = a0[3, 3] = -235.0 * r0_slope / l_s
    a1 = np.zeros((N_STATES, N_STATES))
    a1[1, 2] = -1.5 / j_m
    a1[2, 1] = 1.0 / l_s
    a2 = np.zeros((N_STATES, N_STATES))
    a2[1, 3] = 1.5 / j_m
    a2[3, 1] = -1.0 / l_s
    a3 = np.zeros((N_STATES, N_STATES))
    a3[2, 2] = a3[3, 3] = -r0_slope / l_s

    ref = generalized_plant(SchedulingPoint(0.0, 0.0, 30.0), params, weights, b1_physical)
    return PlantBasis(
        A_coeffs=np.stack([a0, a1, a2, a3]),
        B1=ref.B1, B2=ref.B2, C1=ref.C1, C2=ref.C2,
        D11=ref.D11, D12=ref.D12, D21=ref.D21,
    )
