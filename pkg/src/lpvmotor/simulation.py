"""Closed-loop nonlinear simulation, baselines, scenarios, and metrics.

One scenario is one deterministic fixed-step run: the plant integrates
with (possibly perturbed) physical parameters while the controller side
always works from the nominal model, which is how parameter mismatch is
exercised.  The scheduled controller path produces motor voltages as
trajectory feedforward minus the synthesized correction; the baseline is
the classical field-oriented cascade of one speed and two current PI
loops in the rotating frame.
"""

from __future__ import annotations

import bisect
import hashlib
import io
import json
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .controller_runtime import GainEvaluator
from .lmi_synthesis import SynthesisSolution
from .motor_model import (
    RAD_S_TO_RPM,
    RPM_TO_RAD_S,
    TEMP_MAX_C,
    TEMP_MIN_C,
    MotorParams,
    SpeedProfile,
    flux_at,
)

TRACE_SCHEMA = "lpvmotor-trace/1"
DIVERGENCE_LIMIT = 1e9

PERTURBABLE_FIELDS = ("stator_inductance", "inertia", "stator_resistance", "friction")

TRACE_COLUMNS = [
    "time_s", "theta_rad", "omega_rad_s", "i_alpha_A", "i_beta_A",
    "e_z_rad", "e_omega_rad_s", "e_alpha_A", "e_beta_A",
    "u_alpha_V", "u_beta_V", "v_alpha_V", "v_beta_V",
    "tau_load_Nm", "temp_C", "rho1_Vs_per_rad", "rho2_Vs_per_rad", "rho3_C",
    "omega_ref_rad_s", "omega_rpm", "omega_ref_rpm", "e_omega_rpm",
]


class PiecewiseConstant:
    """Right-continuous step function; ``initial`` before the first step."""

    def __init__(self, steps: list[tuple[float, float]], initial: float = 0.0):
        self.steps = sorted((float(t), float(v)) for t, v in steps)
        self.initial = float(initial)
        self._times = [t for t, _ in self.steps]

    def __call__(self, t: float) -> float:
        k = bisect.bisect_right(self._times, t)
        return self.initial if k == 0 else self.steps[k - 1][1]


class PiecewiseLinear:
    """Linear interpolation between knots, clamped outside their span."""

    def __init__(self, knots: list[tuple[float, float]]):
        if not knots:
            raise ValueError("need at least one knot")
        self.knots = sorted((float(t), float(v)) for t, v in knots)
        self._times = [t for t, _ in self.knots]

    def __call__(self, t: float) -> float:
        knots = self.knots
        if t <= knots[0][0]:
            return knots[0][1]
        if t >= knots[-1][0]:
            return knots[-1][1]
        k = bisect.bisect_right(self._times, t)
        t0, v0 = knots[k - 1]
        t1, v1 = knots[k]
        return v0 + (v1 - v0) * (t - t0) / (t1 - t0)


@dataclass
class Scenario:
    """Everything one closed-loop run depends on.

    Speeds are r/min here (the I/O boundary); they are converted to rad/s
    when the run is assembled.  ``controller`` is advisory metadata and is
    excluded from the scenario hash so that traces of different
    controllers on the same physics stay comparable.
    """

    name: str = "scenario"
    duration: float = 2.0
    time_step: float = 1e-5
    decimation: int = 10
    initial_rpm: float = 0.0
    speed_steps: list[tuple[float, float]] = field(default_factory=list)
    ramp_time: float = 0.01
    load_steps: list[tuple[float, float]] = field(default_factory=list)
    temperature: list[tuple[float, float]] = field(default_factory=lambda: [(0.0, 30.0)])
    perturbation: dict[str, float] = field(default_factory=dict)
    controller: str = "lpv"

    def __post_init__(self) -> None:
        if self.duration <= 0.0:
            raise ValueError(f"duration must be positive, got {self.duration}")
        if self.time_step <= 0.0:
            raise ValueError(f"time_step must be positive, got {self.time_step}")
        if self.decimation < 1 or self.decimation != int(self.decimation):
            raise ValueError(f"decimation must be a positive integer, got {self.decimation}")
        if self.ramp_time <= 0.0:
            raise ValueError(f"ramp_time must be positive, got {self.ramp_time}")
        for t, _ in list(self.speed_steps) + list(self.load_steps) + list(self.temperature):
            if t < 0.0:
                raise ValueError(f"profile timestamp {t} is negative")
        for _, temp in self.temperature:
            if not TEMP_MIN_C <= temp <= TEMP_MAX_C:
                raise ValueError(f"temperature knot {temp} C outside sanity band")
        for key, factor in self.perturbation.items():
            if key not in PERTURBABLE_FIELDS:
                raise ValueError(
                    f"unknown perturbation target {key!r}; allowed: {PERTURBABLE_FIELDS}"
                )
            if factor <= 0.0:
                raise ValueError(f"perturbation factor for {key} must be positive")

    def physical_dict(self) -> dict:
        """The hash-relevant content: physics only, no labels."""
        return {
            "duration": self.duration,
            "time_step": self.time_step,
            "decimation": int(self.decimation),
            "initial_rpm": self.initial_rpm,
            "speed_steps": [[float(t), float(v)] for t, v in self.speed_steps],
            "ramp_time": self.ramp_time,
            "load_steps": [[float(t), float(v)] for t, v in self.load_steps],
            "temperature": [[float(t), float(v)] for t, v in self.temperature],
            "perturbation": {k: float(v) for k, v in sorted(self.perturbation.items())},
        }

    def hash(self) -> str:
        blob = json.dumps(self.physical_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:16]

    def events(self) -> dict:
        """Reference transitions and disturbance onsets, for metrics."""
        steps = []
        prev = self.initial_rpm
        for t, rpm in sorted(self.speed_steps):
            steps.append([float(t), float(prev), float(rpm)])
            prev = rpm
        return {
            "steps": steps,
            "disturbances": [float(t) for t, _ in sorted(self.load_steps)],
        }


def perturb(params: MotorParams, factors: dict[str, float]) -> MotorParams:
    """Motor parameters with the named fields multiplied by their factors."""
    updates = {}
    for key, factor in factors.items():
        if key not in PERTURBABLE_FIELDS:
            raise ValueError(
                f"unknown perturbation target {key!r}; allowed: {PERTURBABLE_FIELDS}"
            )
        if factor <= 0.0:
            raise ValueError(f"perturbation factor for {key} must be positive, got {factor}")
        updates[key] = getattr(params, key) * factor
    return replace(params, **updates)


@dataclass(frozen=True)
class FocPiGains:
    """Fixed PI gains of the field-oriented baseline."""

    kp_speed: float = 0.533
    ki_speed: float = 61.4
    kp_current: float = 1.38
    ki_current: float = 691.0


@dataclass
class FocPiState:
    """Integrator states of the PI cascade."""

    int_speed: float = 0.0
    int_d: float = 0.0
    int_q: float = 0.0


def park(theta_e: float, a: float, b: float) -> tuple[float, float]:
    """Stationary to rotating frame at electrical angle ``theta_e``."""
    c, s = math.cos(theta_e), math.sin(theta_e)
    return c * a + s * b, -s * a + c * b


def inverse_park(theta_e: float, d: float, q: float) -> tuple[float, float]:
    c, s = math.cos(theta_e), math.sin(theta_e)
    return c * d - s * q, s * d + c * q


def foc_pi_step(
    state: FocPiState,
    measurement: tuple[float, float, float, float],
    omega_ref: float,
    dt: float,
    params: MotorParams,
    gains: FocPiGains = FocPiGains(),
) -> tuple[float, float]:
    """One zero-order-hold step of the FOC cascade; returns (v_alpha, v_beta).

    The speed loop produces the q-axis current command, the d-axis command
    is zero, and the current loops produce the rotating-frame voltages.
    Integrators accumulate the held errors over ``dt`` before the outputs
    are formed.
    """
    if dt <= 0.0:
        raise ValueError(f"dt must be positive, got {dt}")
    theta, omega, i_alpha, i_beta = measurement
    theta_e = params.pole_pairs * theta
    i_d, i_q = park(theta_e, i_alpha, i_beta)

    e_speed = omega_ref - omega
    state.int_speed += e_speed * dt
    iq_ref = gains.kp_speed * e_speed + gains.ki_speed * state.int_speed

    e_d = 0.0 - i_d
    e_q = iq_ref - i_q
    state.int_d += e_d * dt
    state.int_q += e_q * dt
    v_d = gains.kp_current * e_d + gains.ki_current * state.int_d
    v_q = gains.kp_current * e_q + gains.ki_current * state.int_q
    return inverse_park(theta_e, v_d, v_q)


@dataclass
class SimTrace:
    """Uniformly sampled closed-loop record of one scenario run."""

    time: np.ndarray
    theta: np.ndarray
    omega: np.ndarray
    i_alpha: np.ndarray
    i_beta: np.ndarray
    e_z: np.ndarray
    e_omega: np.ndarray
    e_alpha: np.ndarray
    e_beta: np.ndarray
    u_alpha: np.ndarray
    u_beta: np.ndarray
    v_alpha: np.ndarray
    v_beta: np.ndarray
    tau_load: np.ndarray
    temp: np.ndarray
    rho1: np.ndarray
    rho2: np.ndarray
    rho3: np.ndarray
    omega_ref: np.ndarray
    scenario_hash: str = ""
    scenario_name: str = ""
    controller_label: str = ""
    events: dict = field(default_factory=lambda: {"steps": [], "disturbances": []})
    divergent: bool = False
    abort_time: float | None = None

    @property
    def omega_rpm(self) -> np.ndarray:
        return self.omega * RAD_S_TO_RPM

    @property
    def omega_ref_rpm(self) -> np.ndarray:
        return self.omega_ref * RAD_S_TO_RPM

    @property
    def e_omega_rpm(self) -> np.ndarray:
        return self.e_omega * RAD_S_TO_RPM

    @classmethod
    def synthetic(cls, time: np.ndarray, omega: np.ndarray, omega_ref: np.ndarray,
                  **kwargs) -> "SimTrace":
        """Minimal trace for metric tests; unspecified channels are zero."""
        z = np.zeros_like(np.asarray(time, dtype=float))
        fields = dict(
            time=np.asarray(time, dtype=float),
            theta=z.copy(), omega=np.asarray(omega, dtype=float),
            i_alpha=z.copy(), i_beta=z.copy(),
            e_z=z.copy(),
            e_omega=np.asarray(omega_ref, dtype=float) - np.asarray(omega, dtype=float),
            e_alpha=z.copy(), e_beta=z.copy(),
            u_alpha=z.copy(), u_beta=z.copy(), v_alpha=z.copy(), v_beta=z.copy(),
            tau_load=z.copy(), temp=z.copy(),
            rho1=z.copy(), rho2=z.copy(), rho3=z.copy(),
            omega_ref=np.asarray(omega_ref, dtype=float),
        )
        fields.update(kwargs)
        return cls(**fields)

    def _column_matrix(self) -> np.ndarray:
        return np.column_stack([
            self.time, self.theta, self.omega, self.i_alpha, self.i_beta,
            self.e_z, self.e_omega, self.e_alpha, self.e_beta,
            self.u_alpha, self.u_beta, self.v_alpha, self.v_beta,
            self.tau_load, self.temp, self.rho1, self.rho2, self.rho3,
            self.omega_ref, self.omega_rpm, self.omega_ref_rpm, self.e_omega_rpm,
        ])

    def to_csv(self, path) -> None:
        """Write the trace with 17-significant-digit deterministic formatting."""
        buf = io.StringIO()
        buf.write(f"# {TRACE_SCHEMA}\n")
        buf.write(f"# scenario_hash: {self.scenario_hash}\n")
        buf.write(f"# scenario_name: {self.scenario_name}\n")
        buf.write(f"# controller: {self.controller_label}\n")
        buf.write(f"# events: {json.dumps(self.events, sort_keys=True)}\n")
        buf.write(f"# divergent: {str(self.divergent).lower()}\n")
        if self.abort_time is not None:
            buf.write(f"# abort_time_s: {self.abort_time:.17g}\n")
        buf.write(",".join(TRACE_COLUMNS) + "\n")
        for row in self._column_matrix():
            buf.write(",".join(f"{v:.17g}" for v in row) + "\n")
        with open(path, "w") as handle:
            handle.write(buf.getvalue())

    @classmethod
    def from_csv(cls, path) -> "SimTrace":
        meta: dict[str, str] = {}
        header: list[str] | None = None
        rows = []
        with open(path) as handle:
            for line in handle:
                line = line.strip()
                if not line:
                    continue
                if line.startswith("#"):
                    body = line[1:].strip()
                    if ":" in body:
                        key, value = body.split(":", 1)
                        meta[key.strip()] = value.strip()
                    elif body:
                        meta.setdefault("schema", body)
                    continue
                if header is None:
                    header = line.split(",")
                    continue
                rows.append([float(v) for v in line.split(",")])
        if meta.get("schema", "") != TRACE_SCHEMA:
            raise ValueError(f"not a {TRACE_SCHEMA} file: {path}")
        if header != TRACE_COLUMNS:
            raise ValueError(f"unexpected trace columns in {path}")
        data = np.array(rows, dtype=float)
        cols = {name: data[:, idx] for idx, name in enumerate(TRACE_COLUMNS)}
        return cls(
            time=cols["time_s"], theta=cols["theta_rad"], omega=cols["omega_rad_s"],
            i_alpha=cols["i_alpha_A"], i_beta=cols["i_beta_A"],
            e_z=cols["e_z_rad"], e_omega=cols["e_omega_rad_s"],
            e_alpha=cols["e_alpha_A"], e_beta=cols["e_beta_A"],
            u_alpha=cols["u_alpha_V"], u_beta=cols["u_beta_V"],
            v_alpha=cols["v_alpha_V"], v_beta=cols["v_beta_V"],
            tau_load=cols["tau_load_Nm"], temp=cols["temp_C"],
            rho1=cols["rho1_Vs_per_rad"], rho2=cols["rho2_Vs_per_rad"],
            rho3=cols["rho3_C"], omega_ref=cols["omega_ref_rad_s"],
            scenario_hash=meta.get("scenario_hash", ""),
            scenario_name=meta.get("scenario_name", ""),
            controller_label=meta.get("controller", ""),
            events=json.loads(meta["events"]) if "events" in meta else
                   {"steps": [], "disturbances": []},
            divergent=meta.get("divergent", "false") == "true",
            abort_time=float(meta["abort_time_s"]) if "abort_time_s" in meta else None,
        )

    def to_long_csv(self, path) -> None:
        """Plot-ready long format: time, series name, value."""
        series = [
            ("omega_rpm", self.omega_rpm), ("omega_ref_rpm", self.omega_ref_rpm),
            ("e_omega_rpm", self.e_omega_rpm),
            ("i_alpha_A", self.i_alpha), ("i_beta_A", self.i_beta),
            ("u_alpha_V", self.u_alpha), ("u_beta_V", self.u_beta),
            ("v_alpha_V", self.v_alpha), ("v_beta_V", self.v_beta),
            ("tau_load_Nm", self.tau_load), ("temp_C", self.temp),
        ]
        with open(path, "w") as handle:
            handle.write(f"# {TRACE_SCHEMA} long\n")
            handle.write(f"# scenario_hash: {self.scenario_hash}\n")
            handle.write(f"# controller: {self.controller_label}\n")
            handle.write("time_s,series,value\n")
            for name, values in series:
                for t, v in zip(self.time, values):
                    handle.write(f"{t:.17g},{name},{v:.17g}\n")


def _profiles(scenario: Scenario, params: MotorParams):
    profile = SpeedProfile.from_rpm_steps(
        scenario.initial_rpm, scenario.speed_steps, scenario.ramp_time
    )
    load = PiecewiseConstant(scenario.load_steps, initial=0.0)
    temp = PiecewiseLinear(scenario.temperature)
    for _, temp_c in scenario.temperature:
        flux_at(params, temp_c)  # raises on demagnetizing profiles
    return profile, load, temp


def _initial_state(scenario: Scenario, params: MotorParams, temp0: float,
                   extra: int) -> np.ndarray:
    """Start on the zero-error manifold at the initial reference speed."""
    omega0 = scenario.initial_rpm * RPM_TO_RAD_S
    k_t = 1.5 * params.pole_pairs * flux_at(params, temp0)
    tau0 = params.friction * omega0
    state = np.zeros(5 + extra)
    state[1] = omega0
    state[2] = -tau0 * math.sin(0.0) / k_t
    state[3] = tau0 * math.cos(0.0) / k_t
    return state


def _drive(scenario: Scenario, rhs, state: np.ndarray, n_obs: int):
    """Fixed-step RK4 loop with decimated observation rows."""
    dt = scenario.time_step
    n_steps = int(round(scenario.duration / dt))
    if abs(n_steps * dt - scenario.duration) > 1e-9 * max(scenario.duration, 1.0):
        raise ValueError(
            f"duration {scenario.duration} is not an integer number of steps of {dt}"
        )
    decim = int(scenario.decimation)
    half = 0.5 * dt
    sixth = dt / 6.0

    rows = []
    divergent = False
    abort_time = None
    for k in range(n_steps):
        t = k * dt
        k1, obs = rhs(t, state)
        if k % decim == 0:
            rows.append((t, obs))
        k2, _ = rhs(t + half, state + half * k1)
        k3, _ = rhs(t + half, state + half * k2)
        k4, _ = rhs(t + dt, state + dt * k3)
        state = state + sixth * (k1 + 2.0 * (k2 + k3) + k4)
        if np.max(np.abs(state)) > DIVERGENCE_LIMIT:
            divergent = True
            abort_time = t + dt
            break
    if not divergent and n_steps % decim == 0:
        _, obs = rhs(n_steps * dt, state)
        rows.append((n_steps * dt, obs))

    times = np.array([r[0] for r in rows])
    data = np.array([r[1] for r in rows])
    return times, data, divergent, abort_time


def _pack_trace(scenario, label, times, data, divergent, abort_time) -> SimTrace:
    return SimTrace(
        time=times,
        theta=data[:, 0], omega=data[:, 1], i_alpha=data[:, 2], i_beta=data[:, 3],
        e_z=data[:, 4], e_omega=data[:, 5], e_alpha=data[:, 6], e_beta=data[:, 7],
        u_alpha=data[:, 8], u_beta=data[:, 9], v_alpha=data[:, 10], v_beta=data[:, 11],
        tau_load=data[:, 12], temp=data[:, 13],
        rho1=data[:, 14], rho2=data[:, 15], rho3=data[:, 16],
        omega_ref=data[:, 17],
        scenario_hash=scenario.hash(),
        scenario_name=scenario.name,
        controller_label=label,
        events=scenario.events(),
        divergent=divergent,
        abort_time=abort_time,
    )


def _simulate_lpv(scenario: Scenario, solution: SynthesisSolution,
                  params: MotorParams) -> SimTrace:
    profile, load, temp = _profiles(scenario, params)
    plant = perturb(params, scenario.perturbation)
    evaluator = GainEvaluator(solution)

    p = params.pole_pairs
    j_n, b_n, l_n = params.inertia, params.friction, params.stator_inductance
    r0_n, lam_n, alpha = params.stator_resistance, params.flux_linkage, params.magnet_temp_coeff
    j_p, b_p, l_p = plant.inertia, plant.friction, plant.stator_inductance
    r0_p, lam_p = plant.stator_resistance, plant.flux_linkage

    def rhs(t, s):
        theta, omega, ia, ib, ez = s[0], s[1], s[2], s[3], s[4]
        x_k = s[5:9]
        temp_c = temp(t)
        tau = load(t)
        ref = profile.sample(t)

        # controller side, nominal parameter maps
        flux_n = lam_n * (1.0 + alpha * (temp_c - 30.0) / 100.0)
        rs_n = r0_n * (235.0 + temp_c) / 310.0
        pf = p * flux_n
        ang = p * theta
        sin_pt = math.sin(ang)
        cos_pt = math.cos(ang)
        rho1 = pf * sin_pt
        rho2 = pf * cos_pt
        a_k, b_k, c_k, d_k = evaluator.gains(rho1, rho2, temp_c)

        e_w = ref.omega_ref - omega
        y = np.array([ez, e_w])
        u = c_k @ x_k + d_k @ y
        dx_k = a_k @ x_k + b_k @ y

        k_t = 1.5 * pf
        tau_ref = j_n * ref.omega_ref_dot + b_n * ref.omega_ref
        tau_ref_dot = j_n * ref.omega_ref_ddot + b_n * ref.omega_ref_dot
        ia_ref = -tau_ref * sin_pt / k_t
        ib_ref = tau_ref * cos_pt / k_t
        dia_ref = -(tau_ref_dot * sin_pt + tau_ref * p * omega * cos_pt) / k_t
        dib_ref = (tau_ref_dot * cos_pt - tau_ref * p * omega * sin_pt) / k_t
        u0 = float(u[0])
        u1 = float(u[1])
        va = l_n * dia_ref + rs_n * ia_ref - pf * ref.omega_ref * sin_pt - u0
        vb = l_n * dib_ref + rs_n * ib_ref + pf * ref.omega_ref * cos_pt - u1

        # plant side, perturbed parameters
        flux_p = lam_p * (1.0 + alpha * (temp_c - 30.0) / 100.0)
        rs_p = r0_p * (235.0 + temp_c) / 310.0
        kt_p = 1.5 * p * flux_p
        d_omega = (-b_p * omega - kt_p * sin_pt * ia + kt_p * cos_pt * ib - tau) / j_p
        d_ia = (-rs_p * ia + p * flux_p * omega * sin_pt + va) / l_p
        d_ib = (-rs_p * ib - p * flux_p * omega * cos_pt + vb) / l_p

        ds = np.empty(9)
        ds[0] = omega
        ds[1] = d_omega
        ds[2] = d_ia
        ds[3] = d_ib
        ds[4] = e_w
        ds[5:9] = dx_k
        obs = (theta, omega, ia, ib, ez, e_w, ia_ref - ia, ib_ref - ib,
               u0, u1, va, vb, tau, temp_c, rho1, rho2, temp_c, ref.omega_ref)
        return ds, obs

    state = _initial_state(scenario, params, temp(0.0), extra=4)
    label = "lpv-robust" if solution.is_robust else "lpv-nominal"
    return _pack_trace(scenario, label, *_drive(scenario, rhs, state, 18))


def _simulate_pi(scenario: Scenario, gains: FocPiGains,
                 params: MotorParams) -> SimTrace:
    profile, load, temp = _profiles(scenario, params)
    plant = perturb(params, scenario.perturbation)

    p = params.pole_pairs
    j_n, b_n = params.inertia, params.friction
    lam_n, alpha = params.flux_linkage, params.magnet_temp_coeff
    j_p, b_p, l_p = plant.inertia, plant.friction, plant.stator_inductance
    r0_p, lam_p = plant.stator_resistance, plant.flux_linkage
    kp_s, ki_s = gains.kp_speed, gains.ki_speed
    kp_c, ki_c = gains.kp_current, gains.ki_current

    def rhs(t, s):
        theta, omega, ia, ib, ez, int_d, int_q = s
        temp_c = temp(t)
        tau = load(t)
        ref = profile.sample(t)

        ang = p * theta
        sin_pt = math.sin(ang)
        cos_pt = math.cos(ang)
        i_d = cos_pt * ia + sin_pt * ib
        i_q = -sin_pt * ia + cos_pt * ib

        e_w = ref.omega_ref - omega
        iq_ref = kp_s * e_w + ki_s * ez
        e_d = -i_d
        e_q = iq_ref - i_q
        v_d = kp_c * e_d + ki_c * int_d
        v_q = kp_c * e_q + ki_c * int_q
        va = cos_pt * v_d - sin_pt * v_q
        vb = sin_pt * v_d + cos_pt * v_q

        flux_p = lam_p * (1.0 + alpha * (temp_c - 30.0) / 100.0)
        rs_p = r0_p * (235.0 + temp_c) / 310.0
        kt_p = 1.5 * p * flux_p
        d_omega = (-b_p * omega - kt_p * sin_pt * ia + kt_p * cos_pt * ib - tau) / j_p
        d_ia = (-rs_p * ia + p * flux_p * omega * sin_pt + va) / l_p
        d_ib = (-rs_p * ib - p * flux_p * omega * cos_pt + vb) / l_p

        # desired currents from the nominal model, for the error columns
        flux_n = lam_n * (1.0 + alpha * (temp_c - 30.0) / 100.0)
        pf = p * flux_n
        k_t = 1.5 * pf
        tau_ref = j_n * ref.omega_ref_dot + b_n * ref.omega_ref
        ia_ref = -tau_ref * sin_pt / k_t
        ib_ref = tau_ref * cos_pt / k_t

        ds = np.array([omega, d_omega, d_ia, d_ib, e_w, e_d, e_q])
        obs = (theta, omega, ia, ib, ez, e_w, ia_ref - ia, ib_ref - ib,
               0.0, 0.0, va, vb, tau, temp_c, pf * sin_pt, pf * cos_pt,
               temp_c, ref.omega_ref)
        return ds, obs

    state = _initial_state(scenario, params, temp(0.0), extra=2)
    return _pack_trace(scenario, "foc-pi", *_drive(scenario, rhs, state, 18))


def simulate(scenario: Scenario, controller, params: MotorParams) -> SimTrace:
    """Run one scenario under the given controller.

    ``controller`` is either a :class:`SynthesisSolution` (scheduled
    output-feedback path with trajectory feedforward) or
    :class:`FocPiGains` (field-oriented PI baseline).
    """
    if isinstance(controller, SynthesisSolution):
        return _simulate_lpv(scenario, controller, params)
    if isinstance(controller, FocPiGains):
        return _simulate_pi(scenario, controller, params)
    raise TypeError(f"unsupported controller type {type(controller)!r}")


@dataclass
class SegmentMetrics:
    t_step: float
    from_rpm: float
    to_rpm: float
    overshoot_pct: float
    rise_time_s: float
    settling_time_s: float
    settled: bool
    itae: float
    rms_rpm: float
    steady_state_error_rpm: float


@dataclass
class DisturbanceMetrics:
    t_event: float
    peak_error_rpm: float
    itae: float


@dataclass
class OverallMetrics:
    rms_rpm: float
    itae: float
    peak_error_rpm: float


@dataclass
class MetricsReport:
    segments: list
    disturbances: list
    overall: OverallMetrics
    divergent: bool = False

    def as_dict(self) -> dict:
        return {
            "segments": [vars(s).copy() for s in self.segments],
            "disturbances": [vars(d).copy() for d in self.disturbances],
            "overall": vars(self.overall).copy(),
            "divergent": self.divergent,
        }


def _itae(t: np.ndarray, err: np.ndarray, t0: float) -> float:
    return float(np.trapezoid((t - t0) * np.abs(err), t))


def _segment(trace: SimTrace, t0: float, t1: float, from_rpm: float,
             to_rpm: float) -> SegmentMetrics | None:
    mask = (trace.time >= t0) & (trace.time <= t1)
    if not np.any(mask):
        return None
    t = trace.time[mask]
    w = trace.omega_rpm[mask]
    err = trace.omega_ref_rpm[mask] - w
    delta = to_rpm - from_rpm
    if abs(delta) < 1e-12:
        return None
    direction = math.copysign(1.0, delta)
    band = 0.02 * abs(delta)

    excess = direction * (w - to_rpm)
    overshoot = max(0.0, float(excess.max())) / abs(delta) * 100.0

    progress = direction * (w - from_rpm)
    idx10 = np.nonzero(progress >= 0.1 * abs(delta))[0]
    idx90 = np.nonzero(progress >= 0.9 * abs(delta))[0]
    rise = float(t[idx90[0]] - t[idx10[0]]) if idx10.size and idx90.size else math.nan

    outside = np.abs(w - to_rpm) > band
    if outside[-1]:
        settled = False
        settling = math.inf
    else:
        settled = True
        last_out = np.nonzero(outside)[0]
        settling = float(t[last_out[-1] + 1] - t0) if last_out.size else 0.0

    tail = t >= t0 + 0.9 * (t1 - t0)
    steady = float(np.abs(err[tail]).max()) if np.any(tail) else math.nan
    return SegmentMetrics(
        t_step=t0, from_rpm=from_rpm, to_rpm=to_rpm,
        overshoot_pct=overshoot, rise_time_s=rise,
        settling_time_s=settling, settled=settled,
        itae=_itae(t, err, t0),
        rms_rpm=float(np.sqrt(np.mean(err ** 2))),
        steady_state_error_rpm=steady,
    )


def metrics(trace: SimTrace, events: dict | None = None) -> MetricsReport:
    """Transient-quality metrics per reference step and disturbance event.

    ``events`` defaults to the events recorded in the trace header.  ITAE
    integrates time-from-event times |speed error| with the error in r/min.
    """
    if events is None:
        events = trace.events
    steps = sorted(events.get("steps", []))
    disturbances = sorted(events.get("disturbances", []))
    t_end = float(trace.time[-1]) if trace.time.size else 0.0

    boundaries = sorted({t for t, *_ in steps} | set(disturbances) | {t_end})
    segments = []
    for t0, from_rpm, to_rpm in steps:
        nxt = [b for b in boundaries if b > t0]
        t1 = nxt[0] if nxt else t_end
        seg = _segment(trace, t0, t1, from_rpm, to_rpm)
        if seg is not None:
            segments.append(seg)

    dist_metrics = []
    for t0 in disturbances:
        nxt = [b for b in boundaries if b > t0]
        t1 = nxt[0] if nxt else t_end
        mask = (trace.time >= t0) & (trace.time <= t1)
        if not np.any(mask):
            continue
        t = trace.time[mask]
        err = trace.e_omega_rpm[mask]
        dist_metrics.append(DisturbanceMetrics(
            t_event=t0,
            peak_error_rpm=float(np.abs(err).max()),
            itae=_itae(t, err, t0),
        ))

    err_all = trace.e_omega_rpm
    overall = OverallMetrics(
        rms_rpm=float(np.sqrt(np.mean(err_all ** 2))) if err_all.size else math.nan,
        itae=_itae(trace.time, err_all, 0.0) if err_all.size else math.nan,
        peak_error_rpm=float(np.abs(err_all).max()) if err_all.size else math.nan,
    )
    return MetricsReport(
        segments=segments, disturbances=dist_metrics, overall=overall,
        divergent=trace.divergent,
    )
