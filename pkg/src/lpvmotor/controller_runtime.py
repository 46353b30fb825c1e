"""Controller recovery from a synthesis solution and online evaluation.

The synthesis variables are a change of coordinates away from the actual
controller matrices: a factorization of I - XY produces the similarity
pair (M, N), after which the controller state-space matrices follow in
closed form.  Reconstruction is exact at frozen scheduling values; the
parameter-varying behaviour is validated empirically in simulation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .lmi_synthesis import SynthesisSolution
from .lpv_model import GeneralizedPlant

COND_LIMIT = 1e12


def factorize(
    X: np.ndarray,
    Y: np.ndarray,
    mode: str = "identity",
) -> tuple[np.ndarray, np.ndarray]:
    """Split I - XY into N M^T with both factors invertible.

    ``identity`` mode takes N = I - XY, M = I; ``balanced`` splits the
    singular values evenly between the factors.  Controller realizations
    from different modes differ only by a similarity transform.
    """
    n = X.shape[0]
    ixy = np.eye(n) - X @ Y
    svals = np.linalg.svd(ixy, compute_uv=False)
    if svals[-1] <= 0.0 or svals[0] / svals[-1] > COND_LIMIT:
        raise ValueError(
            f"I - XY is numerically singular (condition {svals[0] / max(svals[-1], 1e-300):.2e}); "
            "increase the coupling margin or refine the synthesis grid"
        )
    if mode == "identity":
        return np.eye(n), ixy
    if mode == "balanced":
        u, s, vt = np.linalg.svd(ixy)
        root = np.sqrt(s)
        n_fac = u * root
        m_fac = vt.T * root
        return m_fac, n_fac
    raise ValueError(f"unknown factorization mode {mode!r}")


class GainEvaluator:
    """Fast scheduled-gain evaluation for one synthesis solution.

    Packs every affine coefficient (plant A plus the six decision
    matrices) into a single stacked array so an evaluation is three
    scalar-times-vector operations, then runs the reconstruction formulas
    with two small linear solves.  Instances are immutable and safe to
    share across threads.
    """

    def __init__(self, solution: SynthesisSolution, mode: str = "identity"):
        if mode not in ("identity", "balanced"):
            raise ValueError(f"unknown factorization mode {mode!r}")
        self.mode = mode
        basis = solution.basis
        self.n = basis.B2.shape[0]
        self.n_u = basis.B2.shape[1]
        self.n_y = basis.C2.shape[0]
        self.B2 = basis.B2
        self.C2 = basis.C2
        self.eye = np.eye(self.n)

        parts = [
            basis.A_coeffs,
            solution.X.coeffs, solution.Y.coeffs,
            solution.A_hat.coeffs, solution.B_hat.coeffs,
            solution.C_hat.coeffs, solution.D_hat.coeffs,
        ]
        sizes = [p.shape[1] * p.shape[2] for p in parts]
        self._shapes = [p.shape[1:] for p in parts]
        self._offsets = np.concatenate([[0], np.cumsum(sizes)])
        k = basis.A_coeffs.shape[0]
        packed = np.zeros((k, self._offsets[-1]))
        for idx, part in enumerate(parts):
            lo, hi = self._offsets[idx], self._offsets[idx + 1]
            packed[:, lo:hi] = part.reshape(k, -1)
        self._packed = packed

    def _unpack(self, flat: np.ndarray, idx: int) -> np.ndarray:
        lo, hi = self._offsets[idx], self._offsets[idx + 1]
        return flat[lo:hi].reshape(self._shapes[idx])

    def gains(
        self, rho1: float, rho2: float, rho3: float
    ) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
        """Controller matrices (A_K, B_K, C_K, D_K) at one scheduling point."""
        c = self._packed
        flat = c[0] + rho1 * c[1] + rho2 * c[2] + rho3 * c[3]
        a = self._unpack(flat, 0)
        x = self._unpack(flat, 1)
        y = self._unpack(flat, 2)
        a_hat = self._unpack(flat, 3)
        b_hat = self._unpack(flat, 4)
        c_hat = self._unpack(flat, 5)
        d_hat = self._unpack(flat, 6)

        if self.mode == "identity":
            n_fac = self.eye - x @ y
            n_inv = np.linalg.inv(n_fac)
            cond = _norm1(n_fac) * _norm1(n_inv)
            if not cond < COND_LIMIT:
                raise ValueError(
                    f"I - XY condition {cond:.2e} exceeds {COND_LIMIT:.0e} at "
                    f"rho=({rho1:.4g}, {rho2:.4g}, {rho3:.4g}); increase the "
                    "coupling margin or refine the synthesis grid"
                )
            c2y = self.C2 @ y
            xb2 = x @ self.B2
            d_k = d_hat
            c_k = c_hat - d_k @ c2y
            b_k = n_inv @ (b_hat - xb2 @ d_k)
            z = x @ a @ y + xb2 @ (d_k @ c2y) + n_fac @ b_k @ c2y + xb2 @ c_k - a_hat
            a_k = -n_inv @ z
            return a_k, b_k, c_k, d_k

        m_fac, n_fac = factorize(x, y, self.mode)
        m_inv_t = np.linalg.inv(m_fac).T
        n_inv = np.linalg.inv(n_fac)
        c2y = self.C2 @ y
        xb2 = x @ self.B2
        d_k = d_hat
        c_k = (c_hat - d_k @ c2y) @ m_inv_t
        b_k = n_inv @ (b_hat - xb2 @ d_k)
        z = (x @ a @ y + xb2 @ (d_k @ c2y) + n_fac @ b_k @ c2y
             + xb2 @ c_k @ m_fac.T - a_hat)
        a_k = -n_inv @ z @ m_inv_t
        return a_k, b_k, c_k, d_k


def _norm1(mat: np.ndarray) -> float:
    return float(np.abs(mat).sum(axis=0).max())


def _evaluator(solution: SynthesisSolution, mode: str) -> GainEvaluator:
    cache = getattr(solution, "_gain_evaluators", None)
    if cache is None:
        cache = {}
        solution._gain_evaluators = cache
    if mode not in cache:
        cache[mode] = GainEvaluator(solution, mode)
    return cache[mode]


def reconstruct(
    solution: SynthesisSolution,
    rho,
    mode: str = "identity",
) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Controller matrices (A_K, B_K, C_K, D_K) at a scheduling point."""
    arr = rho.as_array() if hasattr(rho, "as_array") else np.asarray(rho, dtype=float)
    return _evaluator(solution, mode).gains(arr[0], arr[1], arr[2])


@dataclass(frozen=True)
class ClosedLoopRealization:
    """Frozen-parameter closed loop of plant and controller."""

    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    D: np.ndarray

    def eigenvalues(self) -> np.ndarray:
        return np.linalg.eigvals(self.A)

    def is_hurwitz(self) -> bool:
        return bool(np.max(self.eigenvalues().real) < 0.0)


def closed_loop(
    plant: GeneralizedPlant,
    a_k: np.ndarray,
    b_k: np.ndarray,
    c_k: np.ndarray,
    d_k: np.ndarray,
) -> ClosedLoopRealization:
    """Interconnect plant and controller at one scheduling point."""
    a_cl = np.block([
        [plant.A + plant.B2 @ d_k @ plant.C2, plant.B2 @ c_k],
        [b_k @ plant.C2, a_k],
    ])
    b_cl = np.vstack([plant.B1 + plant.B2 @ d_k @ plant.D21, b_k @ plant.D21])
    c_cl = np.hstack([plant.C1 + plant.D12 @ d_k @ plant.C2, plant.D12 @ c_k])
    d_cl = plant.D11 + plant.D12 @ d_k @ plant.D21
    return ClosedLoopRealization(A=a_cl, B=b_cl, C=c_cl, D=d_cl)


def _has_imaginary_eigenvalue(
    a: np.ndarray, b: np.ndarray, c: np.ndarray, d: np.ndarray, gamma: float
) -> bool:
    """Hamiltonian test: the transfer norm reaches gamma iff an eigenvalue
    of the associated Hamiltonian sits on the imaginary axis."""
    n_w = b.shape[1]
    r = gamma * gamma * np.eye(n_w) - d.T @ d
    r_inv = np.linalg.inv(r)
    a_r = a + b @ r_inv @ d.T @ c
    ham = np.block([
        [a_r, b @ r_inv @ b.T],
        [-c.T @ (np.eye(c.shape[0]) + d @ r_inv @ d.T) @ c, -a_r.T],
    ])
    eigs = np.linalg.eigvals(ham)
    scale = max(1.0, float(np.abs(eigs).max()))
    return bool(np.min(np.abs(eigs.real)) <= 1e-9 * scale)


def frozen_hinf_norm(cl: ClosedLoopRealization, tol: float = 1e-9) -> float:
    """Peak gain of the frozen closed loop, by Hamiltonian bisection.

    Raises if the frozen dynamics are not Hurwitz, naming the offending
    eigenvalue.
    """
    eigs = cl.eigenvalues()
    worst = eigs[np.argmax(eigs.real)]
    if worst.real >= 0.0:
        raise ValueError(f"closed loop is not Hurwitz: eigenvalue {worst}")
    a, b, c, d = cl.A, cl.B, cl.C, cl.D
    if not np.any(c) and not np.any(d):
        return 0.0

    sigma_d = float(np.linalg.norm(d, 2)) if d.size else 0.0
    omegas = [0.0] + [abs(e.imag) for e in eigs if abs(e.imag) > 0.0]
    omegas += list(np.logspace(-2, 8, 25))
    lower = sigma_d
    eye = np.eye(a.shape[0])
    for w in omegas:
        resp = c @ np.linalg.solve(1j * w * eye - a, b) + d
        lower = max(lower, float(np.linalg.norm(resp, 2)))
    if lower == 0.0:
        lower = 1e-300

    upper = 2.0 * lower
    for _ in range(200):
        if not _has_imaginary_eigenvalue(a, b, c, d, upper):
            break
        upper *= 2.0
    else:
        raise ValueError("H-infinity bisection failed to bracket the norm")

    lower = max(lower, sigma_d * (1.0 + 1e-14))
    while upper - lower > tol * upper:
        mid = math.sqrt(lower * upper)
        if _has_imaginary_eigenvalue(a, b, c, d, mid):
            lower = mid
        else:
            upper = mid
    return 0.5 * (lower + upper)


@dataclass
class ControllerRealization:
    """Stateful scheduled controller; one owner advances the state.

    Gains are recomputed from the affine bases at every step's scheduling
    value.  The state advance integrates the controller dynamics over one
    step with the measurement held constant, using the same fourth-order
    scheme as the simulation loop.
    """

    solution: SynthesisSolution
    mode: str = "identity"
    x_k: np.ndarray = field(default=None)

    def __post_init__(self) -> None:
        n = self.solution.basis.B2.shape[0]
        if self.x_k is None:
            self.x_k = np.zeros(n)
        else:
            self.x_k = np.asarray(self.x_k, dtype=float)
            if self.x_k.shape != (n,):
                raise ValueError(f"controller state must have shape ({n},)")

    def reset(self) -> None:
        self.x_k = np.zeros_like(self.x_k)

    def step(self, y: np.ndarray, rho, dt: float) -> np.ndarray:
        """Output at the current state, then advance the state by dt."""
        if dt <= 0.0:
            raise ValueError(f"dt must be positive, got {dt}")
        arr = rho.as_array() if hasattr(rho, "as_array") else np.asarray(rho, dtype=float)
        a_k, b_k, c_k, d_k = _evaluator(self.solution, self.mode).gains(*arr)
        y = np.asarray(y, dtype=float)
        u = c_k @ self.x_k + d_k @ y
        bu = b_k @ y
        x = self.x_k
        k1 = a_k @ x + bu
        k2 = a_k @ (x + 0.5 * dt * k1) + bu
        k3 = a_k @ (x + 0.5 * dt * k2) + bu
        k4 = a_k @ (x + dt * k3) + bu
        self.x_k = x + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        return u
