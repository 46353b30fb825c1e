"""Gridded LMI synthesis of gain-scheduled output-feedback controllers.

The synthesis conditions are a parameter-dependent matrix inequality pair:
a large block inequality tying the Lyapunov-like variables X, Y and the
transformed controller variables to the performance level gamma, plus the
positive-definite coupling of X and Y.  The scheduling-parameter continuum
is replaced by a finite grid, the parameter-rate dependence is affine so
only rate-box vertices need checking, and the decision matrices are affine
in the scheduling vector.  Everything is solved as one semidefinite
program per performance objective.

A robustified variant absorbs norm-bounded structured uncertainty on A and
B2 through a scalar multiplier ``epsilon``.  As printed, the robust
inequality multiplies ``epsilon`` into blocks that also contain decision
matrices, so ``epsilon`` cannot be a free SDP variable; it is either fixed
by the caller or selected by a coarse line search (each inner problem is
convex).
"""

from __future__ import annotations

import itertools
import json
import math
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import cvxpy as cp
import numpy as np

from .lpv_model import (
    N_PARAMS,
    GeneralizedPlant,
    ParameterBox,
    PlantBasis,
    SchedulingPoint,
)

ARTIFACT_SCHEMA = "lpvmotor-controller/1"


class SynthesisInfeasibleError(RuntimeError):
    """Raised when no controller satisfies the gridded inequalities."""

    def __init__(self, report: "InfeasibilityReport"):
        super().__init__(str(report))
        self.report = report


class SolverFailureError(RuntimeError):
    """Raised when the SDP solver stops without a usable status."""


@dataclass
class InfeasibilityReport:
    required_margin: float
    best_margin: float | None
    worst_point: tuple[float, float, float] | None
    worst_rate: tuple[float, float, float] | None
    worst_kind: str | None  # "lmi" or "coupling"
    detail: str = ""

    def __str__(self) -> str:
        lines = [
            "synthesis infeasible: no decision matrices satisfy the gridded LMIs",
            f"  required margin: {self.required_margin:.3e}",
        ]
        if self.best_margin is not None:
            lines.append(f"  best achievable margin: {self.best_margin:.3e}")
        if self.worst_point is not None:
            lines.append(
                f"  worst constraint: {self.worst_kind} at grid point {self.worst_point}"
                + (f", rate vertex {self.worst_rate}" if self.worst_rate else "")
            )
        if self.detail:
            lines.append(f"  {self.detail}")
        return "\n".join(lines)


@dataclass
class AffineMatrixFunction:
    """Matrix-valued function M(rho) = M0 + sum_i rho_i * M_i.

    ``coeffs`` has shape (1 + n_params, rows, cols); the leading slice is
    the constant term.
    """

    coeffs: np.ndarray

    def __post_init__(self) -> None:
        self.coeffs = np.asarray(self.coeffs, dtype=float)
        if self.coeffs.ndim != 3:
            raise ValueError(f"coeffs must be (1+k, r, c), got shape {self.coeffs.shape}")

    @property
    def shape(self) -> tuple[int, int]:
        return self.coeffs.shape[1:]

    @property
    def n_params(self) -> int:
        return self.coeffs.shape[0] - 1

    def __call__(self, rho: Sequence[float]) -> np.ndarray:
        out = self.coeffs[0].copy()
        for i in range(self.n_params):
            out += rho[i] * self.coeffs[1 + i]
        return out

    def rate_term(self, rate: Sequence[float]) -> np.ndarray:
        """Parameter-rate contribution: only the linear coefficients enter."""
        out = np.zeros(self.shape)
        for i in range(self.n_params):
            out += rate[i] * self.coeffs[1 + i]
        return out

    def is_symmetric(self, tol: float = 0.0) -> bool:
        return all(
            np.allclose(c, c.T, rtol=0.0, atol=tol) for c in self.coeffs
        )


def lyapunov_rate_term(func: AffineMatrixFunction, rate: Sequence[float]) -> np.ndarray:
    """Rate-of-variation term of an affine decision matrix along ``rate``."""
    return func.rate_term(rate)


@dataclass(frozen=True)
class UncertaintyModel:
    """Norm-bounded uncertainty channels: dA = H Delta E1, dB2 = H Delta E2."""

    H: np.ndarray
    E1: np.ndarray
    E2: np.ndarray

    def __post_init__(self) -> None:
        object.__setattr__(self, "H", np.atleast_2d(np.asarray(self.H, dtype=float)))
        object.__setattr__(self, "E1", np.atleast_2d(np.asarray(self.E1, dtype=float)))
        object.__setattr__(self, "E2", np.atleast_2d(np.asarray(self.E2, dtype=float)))
        if self.H.shape[0] != self.E1.shape[1]:
            raise ValueError(
                f"H rows ({self.H.shape}) must match E1 columns ({self.E1.shape})"
            )
        if self.E1.shape[0] != self.E2.shape[0]:
            raise ValueError(
                f"E1 and E2 must share their row count, got {self.E1.shape} and {self.E2.shape}"
            )

    def is_zero(self) -> bool:
        return (
            not np.any(self.H) and not np.any(self.E1) and not np.any(self.E2)
        )

    def perturbed(self, plant: GeneralizedPlant, delta: np.ndarray) -> GeneralizedPlant:
        """Plant with A and B2 displaced along the uncertainty channel."""
        shift = self.H @ delta
        return GeneralizedPlant(
            A=plant.A + shift @ self.E1,
            B1=plant.B1,
            B2=plant.B2 + shift @ self.E2,
            C1=plant.C1, C2=plant.C2,
            D11=plant.D11, D12=plant.D12, D21=plant.D21,
        )


@dataclass
class SynthesisOptions:
    solver: str = "CLARABEL"
    solver_options: dict = field(default_factory=dict)
    eps_lmi_rel: float = 1e-7
    gamma_backoff: float = 0.02
    epsilon: float | None = None
    epsilon_candidates: tuple[float, ...] = (1e-4, 1e-3, 1e-2, 1e-1, 1.0, 10.0)
    x_parameter_dependent: bool = True
    y_parameter_dependent: bool = True
    recentre: bool = True
    state_scale: tuple[float, ...] | None = None
    pole_radius: float | None = None
    verbose: bool = False


@dataclass
class SynthesisProblem:
    """One gridded synthesis instance over an affine plant family.

    ``min_trig_radius`` drops Cartesian grid points whose first two
    scheduling coordinates fall strictly inside that radius.  For the
    motor plant those points correspond to a fully demagnetized machine
    where the speed states are uncontrollable, so a grid containing them
    is infeasible by construction; the physical trajectories live on the
    flux circle and never enter the disc.  ``grid_override`` replaces the
    Cartesian grid with explicit scheduling points (e.g. a flux-circle
    grid).
    """

    basis: PlantBasis
    box: ParameterBox
    grid_counts: tuple[int, int, int]
    uncertainty: UncertaintyModel | None = None
    min_trig_radius: float = 0.0
    grid_override: list[SchedulingPoint] | None = None
    options: SynthesisOptions = field(default_factory=SynthesisOptions)

    def __post_init__(self) -> None:
        degenerate = self.box.degenerate_axes()
        for axis, (count, deg) in enumerate(zip(self.grid_counts, degenerate)):
            if not deg and count < 2:
                raise ValueError(
                    f"grid axis {axis} spans an interval but has count {count} < 2"
                )
        if self.min_trig_radius < 0.0:
            raise ValueError("min_trig_radius must be non-negative")
        if self.uncertainty is not None:
            n = self.basis.B2.shape[0]
            n_u = self.basis.B2.shape[1]
            if self.uncertainty.H.shape[0] != n:
                raise ValueError(
                    f"H must have {n} rows, got {self.uncertainty.H.shape}"
                )
            if self.uncertainty.E1.shape[1] != n:
                raise ValueError(
                    f"E1 must have {n} columns, got {self.uncertainty.E1.shape}"
                )
            if self.uncertainty.E2.shape[1] != n_u:
                raise ValueError(
                    f"E2 must have {n_u} columns, got {self.uncertainty.E2.shape}"
                )

    def plant_at(self, rho: SchedulingPoint | np.ndarray) -> GeneralizedPlant:
        arr = rho.as_array() if isinstance(rho, SchedulingPoint) else np.asarray(rho)
        return self.basis.at(arr)

    def training_points(self) -> list[SchedulingPoint]:
        if self.grid_override is not None:
            return list(self.grid_override)
        return filter_grid(grid_points(self.box, self.grid_counts), self.min_trig_radius)


@dataclass
class DecisionPoint:
    """All decision matrices evaluated at one scheduling point."""

    X: np.ndarray
    Y: np.ndarray
    A_hat: np.ndarray
    B_hat: np.ndarray
    C_hat: np.ndarray
    D_hat: np.ndarray


@dataclass
class SynthesisSolution:
    """Affine decision-matrix bases certified on the training grid."""

    X: AffineMatrixFunction
    Y: AffineMatrixFunction
    A_hat: AffineMatrixFunction
    B_hat: AffineMatrixFunction
    C_hat: AffineMatrixFunction
    D_hat: AffineMatrixFunction
    gamma: float
    epsilon: float | None
    box: ParameterBox
    grid_counts: tuple[int, int, int]
    basis: PlantBasis
    uncertainty: UncertaintyModel | None
    min_trig_radius: float = 0.0
    grid_override: list[SchedulingPoint] | None = None
    info: dict = field(default_factory=dict)
    meta: dict = field(default_factory=dict)

    def training_points(self) -> list[SchedulingPoint]:
        if self.grid_override is not None:
            return list(self.grid_override)
        return filter_grid(grid_points(self.box, self.grid_counts), self.min_trig_radius)

    def decisions_at(self, rho: SchedulingPoint | np.ndarray) -> DecisionPoint:
        arr = rho.as_array() if isinstance(rho, SchedulingPoint) else np.asarray(rho)
        return DecisionPoint(
            X=self.X(arr), Y=self.Y(arr),
            A_hat=self.A_hat(arr), B_hat=self.B_hat(arr),
            C_hat=self.C_hat(arr), D_hat=self.D_hat(arr),
        )

    @property
    def is_robust(self) -> bool:
        return self.epsilon is not None


def grid_points(box: ParameterBox, counts: Sequence[int]) -> list[SchedulingPoint]:
    """Cartesian scheduling grid with both endpoints on every live axis."""
    axes = []
    for lo, hi, count in zip(box.lower, box.upper, counts):
        if lo == hi:
            axes.append(np.array([lo]))
        else:
            if count < 2:
                raise ValueError(f"interval [{lo}, {hi}] needs at least 2 grid points")
            axes.append(np.linspace(lo, hi, count))
    return [SchedulingPoint(*vals) for vals in itertools.product(*axes)]


def rate_vertices(box: ParameterBox) -> list[np.ndarray]:
    """Sign combinations of the rate bounds; frozen axes contribute zero."""
    axes = [np.array([0.0]) if nu == 0.0 else np.array([-nu, nu]) for nu in box.rate]
    return [np.array(vals) for vals in itertools.product(*axes)]


def filter_grid(points: list[SchedulingPoint], min_trig_radius: float) -> list[SchedulingPoint]:
    """Drop points strictly inside the demagnetized disc of the trig plane."""
    if min_trig_radius <= 0.0:
        return list(points)
    r2 = min_trig_radius ** 2 * (1.0 - 1e-12)
    kept = [p for p in points if p.rho1 ** 2 + p.rho2 ** 2 >= r2]
    if not kept:
        raise ValueError(
            f"min_trig_radius {min_trig_radius} excludes every grid point"
        )
    return kept


def _nominal_blocks(plant: GeneralizedPlant, X, Y, a_hat, b_hat, c_hat, d_hat,
                    x_rate, y_rate, gamma):
    """Block rows of the nominal synthesis inequality.

    Entries may be numpy arrays or cvxpy expressions; both support the
    operations used here, so a single set of formulas serves assembly and
    the SDP.
    """
    A, B1, B2 = plant.A, plant.B1, plant.B2
    C1, C2 = plant.C1, plant.C2
    D11, D12, D21 = plant.D11, plant.D12, plant.D21
    n_w, n_z = plant.n_w, plant.n_z

    s_x = X @ A + b_hat @ C2
    s_y = A @ Y + B2 @ c_hat
    m11 = x_rate + s_x + s_x.T
    m21 = a_hat.T + A + B2 @ d_hat @ C2
    m22 = -y_rate + s_y + s_y.T
    m31 = (X @ B1 + b_hat @ D21).T
    m32 = (B1 + B2 @ d_hat @ D21).T
    m41 = C1 + D12 @ d_hat @ C2
    m42 = C1 @ Y + D12 @ c_hat
    m43 = D11 + D12 @ d_hat @ D21
    g_w = gamma * np.eye(n_w)
    g_z = gamma * np.eye(n_z)
    return [
        [m11, m21.T, m31.T, m41.T],
        [m21, m22, m32.T, m42.T],
        [m31, m32, -g_w, m43.T],
        [m41, m42, m43, -g_z],
    ]


def _robust_blocks(plant: GeneralizedPlant, X, Y, a_hat, b_hat, c_hat, d_hat,
                   x_rate, y_rate, gamma, eps, unc: UncertaintyModel):
    """Block rows of the uncertainty-absorbing inequality.

    The upper-left quadrant is the nominal inequality; the four extra block
    rows carry the uncertainty input/output channels scaled by the
    multiplier ``eps`` (a plain number here, never a decision variable).
    """
    H, E1, E2 = unc.H, unc.E1, unc.E2
    n, n_w, n_z = plant.n, plant.n_w, plant.n_z
    dim_i = H.shape[1]
    dim_j = E1.shape[0]
    C2, D21 = plant.C2, plant.D21

    base = _nominal_blocks(plant, X, Y, a_hat, b_hat, c_hat, d_hat, x_rate, y_rate, gamma)

    r5 = [H.T @ X, H.T, np.zeros((dim_i, n_w)), np.zeros((dim_i, n_z))]
    r6 = [eps * E1, (eps * E1) @ Y, np.zeros((dim_j, n_w)), np.zeros((dim_j, n_z))]
    r7 = [np.zeros((dim_i, n)), H.T, np.zeros((dim_i, n_w)),
          np.zeros((dim_i, n_z))]
    r8 = [(eps * E2) @ d_hat @ C2, (eps * E2) @ c_hat, (eps * E2) @ d_hat @ D21,
          np.zeros((dim_j, n_z))]
    extras = [r5, r6, r7, r8]
    dims = [dim_i, dim_j, dim_i, dim_j]

    rows = []
    for k, row in enumerate(base):
        rows.append(row + [extras[m][k].T for m in range(4)])
    for m, extra in enumerate(extras):
        tail = [np.zeros((dims[m], dims[mm])) for mm in range(4)]
        tail[m] = -eps * np.eye(dims[m])
        rows.append(extra + tail)
    return rows


def assemble_nominal_lmi(
    plant: GeneralizedPlant,
    dec: DecisionPoint,
    x_rate: np.ndarray,
    y_rate: np.ndarray,
    gamma: float,
) -> np.ndarray:
    """Numeric nominal inequality matrix; negative definite means feasible."""
    blocks = _nominal_blocks(
        plant, dec.X, dec.Y, dec.A_hat, dec.B_hat, dec.C_hat, dec.D_hat,
        x_rate, y_rate, gamma,
    )
    mat = np.block(blocks)
    if mat.shape[0] != mat.shape[1]:
        raise ValueError(f"assembled LMI is not square: {mat.shape}")
    return mat


def assemble_robust_lmi(
    plant: GeneralizedPlant,
    dec: DecisionPoint,
    x_rate: np.ndarray,
    y_rate: np.ndarray,
    gamma: float,
    eps: float,
    unc: UncertaintyModel,
) -> np.ndarray:
    """Numeric robust inequality matrix with the uncertainty border rows."""
    if eps <= 0.0:
        raise ValueError(f"eps must be positive, got {eps}")
    blocks = _robust_blocks(
        plant, dec.X, dec.Y, dec.A_hat, dec.B_hat, dec.C_hat, dec.D_hat,
        x_rate, y_rate, gamma, eps, unc,
    )
    mat = np.block(blocks)
    if mat.shape[0] != mat.shape[1]:
        raise ValueError(f"assembled LMI is not square: {mat.shape}")
    return mat


def coupling_matrix(dec: DecisionPoint) -> np.ndarray:
    """The [X I; I Y] coupling block whose positivity licenses reconstruction."""
    n = dec.X.shape[0]
    eye = np.eye(n)
    return np.block([[dec.X, eye], [eye, dec.Y]])


def robust_schur_certificate(
    plant: GeneralizedPlant,
    dec: DecisionPoint,
    x_rate: np.ndarray,
    y_rate: np.ndarray,
    gamma: float,
    eps: float,
    unc: UncertaintyModel,
) -> np.ndarray:
    """Schur reduction of the robust inequality onto the nominal block.

    Negative semidefiniteness of this matrix with margin t certifies that
    the nominal inequality holds with margin t for every admissible
    perturbation, which is the operative robustness guarantee; unlike the
    bordered matrix its eigenvalue scale matches the nominal inequality,
    so margins are comparable across the two.
    """
    nom = assemble_nominal_lmi(plant, dec, x_rate, y_rate, gamma)
    n, n_w, n_z = plant.n, plant.n_w, plant.n_z
    H, E1, E2 = unc.H, unc.E1, unc.E2
    dim_i = H.shape[1]
    dim_j = E1.shape[0]
    theta1 = np.vstack([dec.X @ H, H, np.zeros((n_w, dim_i)), np.zeros((n_z, dim_i))])
    phi1 = np.hstack([E1, E1 @ dec.Y, np.zeros((dim_j, n_w)), np.zeros((dim_j, n_z))])
    theta2 = np.vstack([np.zeros((n, dim_i)), H, np.zeros((n_w, dim_i)),
                        np.zeros((n_z, dim_i))])
    phi2 = np.hstack([E2 @ dec.D_hat @ plant.C2, E2 @ dec.C_hat,
                      E2 @ dec.D_hat @ plant.D21, np.zeros((dim_j, n_z))])
    return (nom
            + (theta1 @ theta1.T + theta2 @ theta2.T) / eps
            + eps * (phi1.T @ phi1 + phi2.T @ phi2))


def _data_scale(basis: PlantBasis, pts: list[SchedulingPoint]) -> float:
    mats = [basis.B1, basis.B2, basis.C1, basis.C2, basis.D12]
    norms = [np.linalg.norm(m, 2) for m in mats if m.size]
    norms += [np.linalg.norm(basis.A(p.as_array()), 2) for p in pts]
    return float(max(1.0, max(norms)))


class _ProblemScaling:
    """Exact coordinate changes that condition the SDP.

    Three changes, all congruences of the inequalities whose solutions map
    back in closed form and certify the original data:

    * scheduling coordinates mapped affinely onto [-1, 1] per live axis so
      the affine basis coefficients carry comparable weight;
    * an optional diagonal state scaling conjugating the plant;
    * the uncertainty channel rebalanced as (H, E, eps) ->
      (sH, E/s, s^2 eps), which describes the same perturbation set while
      equalizing the border-row magnitudes.

    Margins are enforced against the diagonal weight matrices below so the
    plain margin holds on the original, unscaled inequality.
    """

    def __init__(self, problem: SynthesisProblem):
        box = problem.box
        self.centre = np.array([
            lo if lo == hi else 0.5 * (lo + hi)
            for lo, hi in zip(box.lower, box.upper)
        ])
        self.radius = np.array([
            1.0 if lo == hi else 0.5 * (hi - lo)
            for lo, hi in zip(box.lower, box.upper)
        ])
        basis = problem.basis
        n = basis.B2.shape[0]
        t = problem.options.state_scale
        if t is None:
            t = np.ones(n)
        else:
            t = np.asarray(t, dtype=float)
            if t.shape != (n,) or np.any(t <= 0.0):
                raise ValueError(f"state_scale must be {n} positive entries")
        self.t = t
        conj = t[None, :] / t[:, None]  # entry (i, j) of T^-1 M T

        a = basis.A_coeffs
        a_centre = a[0] + sum(self.centre[i] * a[1 + i] for i in range(N_PARAMS))
        coeffs = [a_centre * conj]
        coeffs += [self.radius[i] * a[1 + i] * conj for i in range(N_PARAMS)]
        self.basis = PlantBasis(
            A_coeffs=np.stack(coeffs),
            B1=basis.B1 / t[:, None], B2=basis.B2 / t[:, None],
            C1=basis.C1 * t[None, :], C2=basis.C2 * t[None, :],
            D11=basis.D11, D12=basis.D12, D21=basis.D21,
        )
        live = [lo != hi for lo, hi in zip(box.lower, box.upper)]
        self.box = ParameterBox(
            lower=tuple(-1.0 if alive else 0.0 for alive in live),
            upper=tuple(1.0 if alive else 0.0 for alive in live),
            rate=tuple(nu / r for nu, r in zip(box.rate, self.radius)),
        )
        self.unc_scale = 1.0
        self.uncertainty = None
        if problem.uncertainty is not None:
            unc = problem.uncertainty
            h = unc.H / t[:, None]
            e1 = unc.E1 * t[None, :]
            e2 = unc.E2
            h_norm = float(np.linalg.norm(h, 2))
            e_norm = max(float(np.linalg.norm(e1, 2)), float(np.linalg.norm(e2, 2)))
            if h_norm > 0.0 and e_norm > 0.0:
                self.unc_scale = math.sqrt(e_norm / h_norm)
            s = self.unc_scale
            self.uncertainty = UncertaintyModel(H=s * h, E1=e1 / s, E2=e2 / s)

    def normalized_points(self, pts: list[SchedulingPoint]) -> list[SchedulingPoint]:
        return [
            SchedulingPoint(*((p.as_array() - self.centre) / self.radius))
            for p in pts
        ]

    def epsilon_in(self, eps: float | None) -> float | None:
        return None if eps is None else eps * self.unc_scale ** 2

    def epsilon_out(self, eps_scaled: float | None) -> float | None:
        return None if eps_scaled is None else eps_scaled / self.unc_scale ** 2

    def lmi_margin_weight(self) -> np.ndarray:
        """Diagonal weight W with: original LMI <= -t I  iff  scaled <= -t W.

        Rows of the scaled inequality relate to the original one by a
        diagonal congruence, so enforcing the weighted margin in solver
        coordinates enforces the plain margin on the original data.
        """
        basis = self.basis
        n_w, n_z = basis.B1.shape[1], basis.C1.shape[0]
        t2 = self.t ** 2
        parts = [t2, 1.0 / t2, np.ones(n_w), np.ones(n_z)]
        if self.uncertainty is not None:
            s2 = self.unc_scale ** 2
            dim_i = self.uncertainty.H.shape[1]
            dim_j = self.uncertainty.E1.shape[0]
            parts += [np.full(dim_i, s2), np.full(dim_j, s2),
                      np.full(dim_i, s2), np.full(dim_j, s2)]
        return np.concatenate(parts)

    def coupling_margin_weight(self) -> np.ndarray:
        """Same congruence bookkeeping for the [X I; I Y] block."""
        t2 = self.t ** 2
        return np.concatenate([t2, 1.0 / t2])

    def _unscale_coeffs(self, coeffs: np.ndarray, left: np.ndarray | None,
                        right: np.ndarray | None) -> np.ndarray:
        out = coeffs
        if left is not None:
            out = out * left[None, :, None]
        if right is not None:
            out = out * right[None, None, :]
        const = out[0] - sum(
            (self.centre[i] / self.radius[i]) * out[1 + i] for i in range(N_PARAMS)
        )
        rest = [out[1 + i] / self.radius[i] for i in range(N_PARAMS)]
        return np.stack([const] + rest)

    def unscale(self, x, y, a_hat, b_hat, c_hat, d_hat):
        """Map solved coefficient stacks back to original coordinates."""
        t, ti = self.t, 1.0 / self.t
        return (
            AffineMatrixFunction(self._unscale_coeffs(x.coeffs, ti, ti)),
            AffineMatrixFunction(self._unscale_coeffs(y.coeffs, t, t)),
            AffineMatrixFunction(self._unscale_coeffs(a_hat.coeffs, ti, t)),
            AffineMatrixFunction(self._unscale_coeffs(b_hat.coeffs, ti, None)),
            AffineMatrixFunction(self._unscale_coeffs(c_hat.coeffs, None, t)),
            AffineMatrixFunction(self._unscale_coeffs(d_hat.coeffs, None, None)),
        )


class _VariableSet:
    """Affine cvxpy coefficient variables for the six decision matrices."""

    def __init__(self, n: int, n_u: int, n_y: int, x_pd: bool, y_pd: bool):
        k = N_PARAMS

        def sym(count):
            return [cp.Variable((n, n), symmetric=True) for _ in range(count)]

        self.X = sym(1 + k if x_pd else 1)
        self.Y = sym(1 + k if y_pd else 1)
        self.A_hat = [cp.Variable((n, n)) for _ in range(1 + k)]
        self.B_hat = [cp.Variable((n, n_y)) for _ in range(1 + k)]
        self.C_hat = [cp.Variable((n_u, n)) for _ in range(1 + k)]
        self.D_hat = [cp.Variable((n_u, n_y)) for _ in range(1 + k)]

    @staticmethod
    def _eval(coeffs, rho):
        expr = coeffs[0]
        for i, c in enumerate(coeffs[1:]):
            if rho[i] != 0.0:
                expr = expr + rho[i] * c
        return expr

    @staticmethod
    def _rate(coeffs, rate, shape):
        terms = [rate[i] * c for i, c in enumerate(coeffs[1:]) if rate[i] != 0.0]
        if not terms:
            return np.zeros(shape)
        expr = terms[0]
        for t in terms[1:]:
            expr = expr + t
        return expr

    def at(self, rho):
        return (
            self._eval(self.X, rho), self._eval(self.Y, rho),
            self._eval(self.A_hat, rho), self._eval(self.B_hat, rho),
            self._eval(self.C_hat, rho), self._eval(self.D_hat, rho),
        )

    def rates(self, rate, n):
        return (
            self._rate(self.X, rate, (n, n)),
            self._rate(self.Y, rate, (n, n)),
        )

    def _values(self, coeffs, shape, symmetric):
        k = N_PARAMS
        out = np.zeros((1 + k,) + shape)
        for i, c in enumerate(coeffs):
            if c.value is None:
                continue  # never appeared in a constraint (frozen axis)
            val = np.asarray(c.value)
            out[i] = 0.5 * (val + val.T) if symmetric else val
        return out

    def extract(self, n, n_u, n_y):
        return (
            AffineMatrixFunction(self._values(self.X, (n, n), True)),
            AffineMatrixFunction(self._values(self.Y, (n, n), True)),
            AffineMatrixFunction(self._values(self.A_hat, (n, n), False)),
            AffineMatrixFunction(self._values(self.B_hat, (n, n_y), False)),
            AffineMatrixFunction(self._values(self.C_hat, (n_u, n), False)),
            AffineMatrixFunction(self._values(self.D_hat, (n_u, n_y), False)),
        )


def _build_constraints(scaling: _ProblemScaling, pts, verts, vs: _VariableSet,
                       gamma, margin, eps: float | None,
                       border_margin: float | None = None,
                       pole_radius: float | None = None,
                       pole_margin: float = 0.0):
    """Margins are weighted so they hold on the original, unscaled data.

    For robust problems the variable margin applies to the nominal block
    rows only; the uncertainty border rows get the fixed ``border_margin``
    because their achievable margin is capped by the multiplier itself.
    ``pole_radius`` adds the frozen closed-loop disk constraint (same
    transformed variables), which caps how fast a controller the
    reconstruction can produce.
    """
    basis = scaling.basis
    unc = scaling.uncertainty
    n = basis.B2.shape[0]
    weight = scaling.lmi_margin_weight()
    coup_w = np.diag(scaling.coupling_margin_weight())
    if unc is not None:
        nominal_size = 2 * n + basis.B1.shape[1] + basis.C1.shape[0]
        mask = np.zeros_like(weight)
        mask[:nominal_size] = 1.0
        lmi_w = np.diag(weight * mask)
        border = border_margin if border_margin is not None else 0.0
        lmi_border = border * np.diag(weight * (1.0 - mask))
    else:
        lmi_w = np.diag(weight)
        lmi_border = 0.0
    eye_n = np.eye(n)
    cons = []
    for pt in pts:
        rho = pt.as_array()
        plant = basis.at(rho)
        X, Y, ah, bh, ch, dh = vs.at(rho)
        phi = cp.bmat([[X, eye_n], [eye_n, Y]])
        cons.append(phi >> margin * coup_w)
        if pole_radius is not None:
            lam = cp.bmat([
                [X @ plant.A + bh @ plant.C2, ah],
                [plant.A + plant.B2 @ dh @ plant.C2, plant.A @ Y + plant.B2 @ ch],
            ])
            disk = cp.bmat([[-pole_radius * phi, lam],
                            [lam.T, -pole_radius * phi]])
            cons.append(disk << -pole_margin * np.eye(4 * n))
        for vert in verts:
            x_rate, y_rate = vs.rates(vert, n)
            if unc is not None:
                blocks = _robust_blocks(plant, X, Y, ah, bh, ch, dh,
                                        x_rate, y_rate, gamma, eps, unc)
            else:
                blocks = _nominal_blocks(plant, X, Y, ah, bh, ch, dh,
                                         x_rate, y_rate, gamma)
            mat = cp.bmat(blocks)
            cons.append(mat << -(margin * lmi_w + lmi_border))
    return cons


def _solve(prob: cp.Problem, options: SynthesisOptions) -> str:
    try:
        prob.solve(solver=options.solver, verbose=options.verbose,
                   **options.solver_options)
    except cp.error.SolverError as exc:
        raise SolverFailureError(f"SDP solver {options.solver} failed: {exc}") from exc
    return prob.status


def _point_margins(solution: SynthesisSolution, rho: np.ndarray,
                   vert: np.ndarray) -> tuple[float, float | None]:
    """(certificate margin, raw bordered margin or None) at one point.

    For robust solutions the certificate is the Schur reduction, whose
    scale matches the nominal inequality; the bordered matrix itself is
    additionally required to be strictly negative.
    """
    plant = solution.basis.at(rho)
    dec = solution.decisions_at(rho)
    x_rate = solution.X.rate_term(vert)
    y_rate = solution.Y.rate_term(vert)
    if solution.uncertainty is None:
        mat = assemble_nominal_lmi(plant, dec, x_rate, y_rate, solution.gamma)
        return float(-np.linalg.eigvalsh(mat)[-1]), None
    raw = assemble_robust_lmi(plant, dec, x_rate, y_rate, solution.gamma,
                              solution.epsilon, solution.uncertainty)
    cert = robust_schur_certificate(plant, dec, x_rate, y_rate, solution.gamma,
                                    solution.epsilon, solution.uncertainty)
    return (float(-np.linalg.eigvalsh(cert)[-1]),
            float(-np.linalg.eigvalsh(raw)[-1]))


def _training_margins(solution: SynthesisSolution):
    """Worst certificate and coupling margins over the training grid."""
    pts = solution.training_points()
    verts = rate_vertices(solution.box)
    worst_lmi = np.inf
    worst_raw = np.inf
    worst_coupling = np.inf
    worst_overall = np.inf
    worst_info = (None, None, None)
    for pt in pts:
        rho = pt.as_array()
        dec = solution.decisions_at(rho)
        c_margin = float(np.linalg.eigvalsh(coupling_matrix(dec))[0])
        worst_coupling = min(worst_coupling, c_margin)
        if c_margin < worst_overall:
            worst_overall = c_margin
            worst_info = (tuple(rho), None, "coupling")
        for vert in verts:
            margin, raw = _point_margins(solution, rho, vert)
            worst_lmi = min(worst_lmi, margin)
            if raw is not None:
                worst_raw = min(worst_raw, raw)
            if margin < worst_overall:
                worst_overall = margin
                worst_info = (tuple(rho), tuple(vert), "lmi")
    raw_out = None if solution.uncertainty is None else worst_raw
    return worst_lmi, worst_coupling, raw_out, worst_info


def _solution_from(problem: SynthesisProblem, scaling: _ProblemScaling,
                   vs: _VariableSet, gamma: float,
                   eps: float | None) -> SynthesisSolution:
    basis = problem.basis
    n = basis.B2.shape[0]
    scaled = vs.extract(n, basis.B2.shape[1], basis.C2.shape[0])
    x, y, ah, bh, ch, dh = scaling.unscale(*scaled)
    return SynthesisSolution(
        X=x, Y=y, A_hat=ah, B_hat=bh, C_hat=ch, D_hat=dh,
        gamma=gamma, epsilon=eps,
        box=problem.box, grid_counts=tuple(problem.grid_counts),
        basis=basis, uncertainty=problem.uncertainty,
        min_trig_radius=problem.min_trig_radius,
        grid_override=problem.grid_override,
    )


def _diagnose(problem: SynthesisProblem, scaling: _ProblemScaling, pts, verts,
              eps: float | None, eps_abs: float) -> InfeasibilityReport:
    basis = scaling.basis
    opts = problem.options
    vs = _VariableSet(basis.B2.shape[0], basis.B2.shape[1], basis.C2.shape[0],
                      opts.x_parameter_dependent, opts.y_parameter_dependent)
    gamma = cp.Variable(nonneg=True)
    t = cp.Variable()
    scale = _data_scale(basis, pts)
    cons = _build_constraints(scaling, pts, verts, vs, gamma, t, eps)
    cons += [t <= 1e6 * scale, gamma <= 1e12]
    prob = cp.Problem(cp.Maximize(t), cons)
    try:
        status = _solve(prob, opts)
    except SolverFailureError:
        return InfeasibilityReport(eps_abs, None, None, None, None,
                                   "margin diagnosis solve failed")
    if t.value is None or gamma.value is None or status not in (
        "optimal", "optimal_inaccurate"
    ):
        return InfeasibilityReport(eps_abs, None, None, None, None,
                                   f"margin diagnosis ended with status {status}")
    sol = _solution_from(problem, scaling, vs, float(gamma.value),
                         scaling.epsilon_out(eps))
    worst_lmi, worst_coupling, _, worst_info = _training_margins(sol)
    best = min(worst_lmi, worst_coupling)
    return InfeasibilityReport(
        required_margin=eps_abs,
        best_margin=best,
        worst_point=worst_info[0],
        worst_rate=worst_info[1],
        worst_kind=worst_info[2],
    )


def _solve_min_gamma(scaling: _ProblemScaling, opts: SynthesisOptions, pts, verts,
                     eps: float | None, eps_abs: float):
    """Phase 1: minimize gamma at the fixed strictness margin."""
    basis = scaling.basis
    vs = _VariableSet(basis.B2.shape[0], basis.B2.shape[1], basis.C2.shape[0],
                      opts.x_parameter_dependent, opts.y_parameter_dependent)
    gamma = cp.Variable(nonneg=True)
    cons = _build_constraints(scaling, pts, verts, vs, gamma, eps_abs, eps,
                              border_margin=0.1 * eps_abs,
                              pole_radius=opts.pole_radius, pole_margin=eps_abs)
    prob = cp.Problem(cp.Minimize(gamma), cons)
    status = _solve(prob, opts)
    if status in ("infeasible", "infeasible_inaccurate"):
        return None, status
    if gamma.value is None or status not in ("optimal", "optimal_inaccurate"):
        raise SolverFailureError(
            f"SDP solver {opts.solver} returned status {status!r} without a solution"
        )
    return (vs, float(gamma.value)), status


def _solve_max_margin(scaling: _ProblemScaling, opts: SynthesisOptions, pts, verts,
                      eps: float | None, eps_abs: float, gamma: float):
    """Phase 2: re-centre at a backed-off gamma by maximizing the worst margin."""
    basis = scaling.basis
    vs = _VariableSet(basis.B2.shape[0], basis.B2.shape[1], basis.C2.shape[0],
                      opts.x_parameter_dependent, opts.y_parameter_dependent)
    t = cp.Variable()
    cons = _build_constraints(scaling, pts, verts, vs, gamma, t, eps,
                              border_margin=0.1 * eps_abs,
                              pole_radius=opts.pole_radius, pole_margin=eps_abs)
    cons.append(t >= eps_abs)
    prob = cp.Problem(cp.Maximize(t), cons)
    try:
        status = _solve(prob, opts)
    except SolverFailureError:
        return None, "solver_error"
    if t.value is None or status not in ("optimal", "optimal_inaccurate"):
        return None, status
    return (vs, float(t.value)), status


def _select_epsilon(problem: SynthesisProblem, scaling: _ProblemScaling,
                    eps_abs: float) -> float:
    """Pick the uncertainty multiplier by a coarse-grid line search on gamma.

    The multiplier balances the two sides of the uncertainty bound and is
    grid-insensitive, so a corners-only surrogate problem ranks candidates
    cheaply; the chosen value is then used for the full-grid solves.
    """
    opts = problem.options
    coarse_counts = tuple(
        1 if lo == hi else 2 for lo, hi in zip(problem.box.lower, problem.box.upper)
    )
    pts_phys = filter_grid(grid_points(problem.box, coarse_counts),
                           problem.min_trig_radius)
    pts = scaling.normalized_points(pts_phys)
    verts = rate_vertices(scaling.box)
    best_eps, best_gamma = None, np.inf
    for eps in opts.epsilon_candidates:
        try:
            result, _ = _solve_min_gamma(scaling, opts, pts, verts, eps, eps_abs)
        except SolverFailureError:
            continue
        if result is None:
            continue
        _, gamma = result
        if gamma < best_gamma:
            best_eps, best_gamma = eps, gamma
    if best_eps is None:
        raise SynthesisInfeasibleError(InfeasibilityReport(
            required_margin=eps_abs, best_margin=None, worst_point=None,
            worst_rate=None, worst_kind=None,
            detail=f"no multiplier among {opts.epsilon_candidates} admits a "
                   "feasible coarse-grid robust design",
        ))
    return best_eps


def synthesize(problem: SynthesisProblem) -> SynthesisSolution:
    """Solve the gridded synthesis SDP, minimizing the performance level.

    Runs a gamma-minimization first, then (by default) re-centres the
    decision matrices at a slightly backed-off gamma by maximizing the
    worst constraint margin, which buys slack between grid points for the
    a-posteriori dense verification.  For robust problems the multiplier
    is fixed per solve; when not supplied it is chosen by a coarse-grid
    line search.  Internally the solve runs in normalized scheduling
    coordinates (and optionally scaled states); the returned coefficients
    are mapped back and certify the original problem data.
    """
    opts = problem.options
    pts_phys = problem.training_points()
    scaling = _ProblemScaling(problem)
    pts = scaling.normalized_points(pts_phys)
    verts = rate_vertices(scaling.box)
    scale = _data_scale(problem.basis, pts_phys)
    eps_abs = opts.eps_lmi_rel * scale

    robust = problem.uncertainty is not None
    eps: float | None = None  # multiplier in scaled coordinates
    if robust:
        if opts.epsilon is not None:
            if opts.epsilon <= 0.0:
                raise ValueError(f"epsilon must be positive, got {opts.epsilon}")
            eps = scaling.epsilon_in(opts.epsilon)
        elif problem.uncertainty.is_zero():
            eps = 1.0
        else:
            eps = _select_epsilon(problem, scaling, eps_abs)

    started = time.perf_counter()
    result, status1 = _solve_min_gamma(scaling, opts, pts, verts, eps, eps_abs)
    if result is None:
        raise SynthesisInfeasibleError(
            _diagnose(problem, scaling, pts, verts, eps, eps_abs)
        )
    vs, gamma_opt = result

    gamma_final = gamma_opt
    phase2_margin = None
    status2 = None
    if opts.recentre:
        gamma_final = gamma_opt * (1.0 + opts.gamma_backoff)
        recentred, status2 = _solve_max_margin(scaling, opts, pts, verts, eps,
                                               eps_abs, gamma_final)
        if recentred is not None:
            vs, phase2_margin = recentred
        else:
            gamma_final = gamma_opt  # keep the phase-1 iterate
    solve_time = time.perf_counter() - started

    solution = _solution_from(problem, scaling, vs, gamma_final,
                              scaling.epsilon_out(eps))
    worst_lmi, worst_coupling, worst_raw, _ = _training_margins(solution)
    solution.info = {
        "solver": opts.solver,
        "status": status1,
        "recentre_status": status2,
        "solve_time_s": solve_time,
        "gamma_phase1": gamma_opt,
        "recentre_margin": phase2_margin,
        "eps_lmi_abs": eps_abs,
        "data_scale": scale,
        "uncertainty_balance": scaling.unc_scale,
        "training_lmi_margin": worst_lmi,
        "training_coupling_margin": worst_coupling,
        "training_raw_margin": worst_raw,
        "n_grid_points": len(pts),
        "n_rate_vertices": len(verts),
    }
    return solution


@dataclass
class VerificationReport:
    passed: bool
    threshold: float
    worst_lmi_margin: float
    worst_coupling_margin: float
    grid_counts: tuple[int, int, int]
    n_points: int
    worst_raw_margin: float | None = None
    failures: list = field(default_factory=list)

    def __str__(self) -> str:
        verdict = "PASS" if self.passed else "FAIL"
        lines = [
            f"verification {verdict}: {self.n_points} grid points "
            f"(counts {self.grid_counts})",
            f"  worst LMI margin:      {self.worst_lmi_margin:.6e}",
            f"  worst coupling margin: {self.worst_coupling_margin:.6e}",
            f"  threshold:             {self.threshold:.6e}",
        ]
        if self.worst_raw_margin is not None:
            lines.append(f"  worst bordered margin: {self.worst_raw_margin:.6e} (> 0 required)")
        for rho, rate, margin, kind in self.failures[:10]:
            lines.append(f"  violated: {kind} margin {margin:.3e} at rho {rho}"
                         + (f" rate {rate}" if rate is not None else ""))
        if len(self.failures) > 10:
            lines.append(f"  ... and {len(self.failures) - 10} more")
        return "\n".join(lines)


def verify_solution(
    solution: SynthesisSolution,
    grid_counts: Sequence[int],
    rate_samples: int = 2,
    threshold: float | None = None,
    points: list[SchedulingPoint] | None = None,
) -> VerificationReport:
    """Re-check the inequalities on a denser grid than the training one.

    Gridding certifies nothing between training points, so this evaluates
    the worst eigenvalue margins over a refined grid and rate sampling.
    The refined grid honours the solution's demagnetized-disc exclusion;
    pass ``points`` to verify explicit scheduling points instead.  The
    default pass threshold is half the synthesis strictness margin.
    """
    if threshold is None:
        threshold = solution.info.get("eps_lmi_abs", 0.0) / 2.0
    if points is not None:
        pts = list(points)
    else:
        pts = filter_grid(grid_points(solution.box, grid_counts),
                          solution.min_trig_radius)
    if rate_samples < 2:
        rate_samples = 2
    axes = [
        np.array([0.0]) if nu == 0.0 else np.linspace(-nu, nu, rate_samples)
        for nu in solution.box.rate
    ]
    rates = [np.array(v) for v in itertools.product(*axes)]

    worst_lmi = np.inf
    worst_raw = np.inf
    worst_coupling = np.inf
    failures = []
    for pt in pts:
        rho = pt.as_array()
        dec = solution.decisions_at(rho)
        c_margin = float(np.linalg.eigvalsh(coupling_matrix(dec))[0])
        worst_coupling = min(worst_coupling, c_margin)
        if c_margin < threshold:
            failures.append((tuple(rho), None, c_margin, "coupling"))
        for rate in rates:
            margin, raw = _point_margins(solution, rho, rate)
            worst_lmi = min(worst_lmi, margin)
            if margin < threshold:
                failures.append((tuple(rho), tuple(rate), margin, "lmi"))
            if raw is not None:
                worst_raw = min(worst_raw, raw)
                if raw <= 0.0:
                    failures.append((tuple(rho), tuple(rate), raw, "strictness"))
    return VerificationReport(
        passed=not failures,
        threshold=threshold,
        worst_lmi_margin=worst_lmi,
        worst_coupling_margin=worst_coupling,
        grid_counts=tuple(grid_counts),
        n_points=len(pts),
        worst_raw_margin=None if solution.uncertainty is None else worst_raw,
        failures=failures,
    )


def _array_out(arr: np.ndarray) -> list:
    return np.asarray(arr, dtype=float).tolist()


def save_artifact(solution: SynthesisSolution, path: str | Path) -> None:
    """Serialize a solution to a self-describing JSON artifact.

    Floats are written with Python's shortest round-trip repr, so a
    load/save cycle is bit-exact.
    """
    basis = solution.basis
    doc = {
        "schema": ARTIFACT_SCHEMA,
        "kind": "robust" if solution.is_robust else "nominal",
        "gamma": solution.gamma,
        "epsilon": solution.epsilon,
        "box": {
            "lower": list(solution.box.lower),
            "upper": list(solution.box.upper),
            "rate": list(solution.box.rate),
        },
        "grid_counts": list(solution.grid_counts),
        "min_trig_radius": solution.min_trig_radius,
        "grid_override": None if solution.grid_override is None else [
            [p.rho1, p.rho2, p.rho3] for p in solution.grid_override
        ],
        "decision": {
            "X": _array_out(solution.X.coeffs),
            "Y": _array_out(solution.Y.coeffs),
            "A_hat": _array_out(solution.A_hat.coeffs),
            "B_hat": _array_out(solution.B_hat.coeffs),
            "C_hat": _array_out(solution.C_hat.coeffs),
            "D_hat": _array_out(solution.D_hat.coeffs),
        },
        "plant": {
            "A_coeffs": _array_out(basis.A_coeffs),
            "B1": _array_out(basis.B1),
            "B2": _array_out(basis.B2),
            "C1": _array_out(basis.C1),
            "C2": _array_out(basis.C2),
            "D11": _array_out(basis.D11),
            "D12": _array_out(basis.D12),
            "D21": _array_out(basis.D21),
        },
        "uncertainty": None if solution.uncertainty is None else {
            "H": _array_out(solution.uncertainty.H),
            "E1": _array_out(solution.uncertainty.E1),
            "E2": _array_out(solution.uncertainty.E2),
        },
        "info": solution.info,
        "meta": solution.meta,
    }
    Path(path).write_text(json.dumps(doc, indent=1, sort_keys=True) + "\n")


def load_artifact(path: str | Path) -> SynthesisSolution:
    doc = json.loads(Path(path).read_text())
    if doc.get("schema") != ARTIFACT_SCHEMA:
        raise ValueError(
            f"unsupported artifact schema {doc.get('schema')!r}, "
            f"expected {ARTIFACT_SCHEMA!r}"
        )
    arr = lambda key, src: np.array(src[key], dtype=float)
    dec = doc["decision"]
    plant = doc["plant"]
    basis = PlantBasis(
        A_coeffs=arr("A_coeffs", plant),
        B1=arr("B1", plant), B2=arr("B2", plant),
        C1=arr("C1", plant), C2=arr("C2", plant),
        D11=arr("D11", plant), D12=arr("D12", plant), D21=arr("D21", plant),
    )
    unc = None
    if doc.get("uncertainty") is not None:
        u = doc["uncertainty"]
        unc = UncertaintyModel(H=arr("H", u), E1=arr("E1", u), E2=arr("E2", u))
    return SynthesisSolution(
        X=AffineMatrixFunction(arr("X", dec)),
        Y=AffineMatrixFunction(arr("Y", dec)),
        A_hat=AffineMatrixFunction(arr("A_hat", dec)),
        B_hat=AffineMatrixFunction(arr("B_hat", dec)),
        C_hat=AffineMatrixFunction(arr("C_hat", dec)),
        D_hat=AffineMatrixFunction(arr("D_hat", dec)),
        gamma=float(doc["gamma"]),
        epsilon=None if doc["epsilon"] is None else float(doc["epsilon"]),
        box=ParameterBox(
            lower=tuple(doc["box"]["lower"]),
            upper=tuple(doc["box"]["upper"]),
            rate=tuple(doc["box"]["rate"]),
        ),
        grid_counts=tuple(doc["grid_counts"]),
        basis=basis,
        uncertainty=unc,
        min_trig_radius=float(doc.get("min_trig_radius", 0.0)),
        grid_override=None if doc.get("grid_override") is None else [
            SchedulingPoint(*vals) for vals in doc["grid_override"]
        ],
        info=doc.get("info", {}),
        meta=doc.get("meta", {}),
    )
