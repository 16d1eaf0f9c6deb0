"""One-step propagation operators, their composition, and stability studies.

The fundamental step is an oscillatory Gaussian integral over the earlier
endpoint of a straight path segment.  Two backends realize it: an analytic
route for decoupled (purely quadratic) systems, where every field variable
factorizes into a closed-form Hermite-basis matrix, and a galerkin route that
assembles the coupled one-step matrix by epsilon-regularized quadrature with
extrapolation.  On top of the step sit the endpoint-difference maps (phi),
the step-size search for an invertibility radius (rho*), the scalar-offset
variant (G_eps), and the residual/convergence studies used as evidence that
composed steps track the generator.

Sign conventions follow the action module: a segment runs from (s, y, Y) to
(t, x, X) with the later endpoint first, and the interpolation parameter
theta = 0 sits at the later time.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Optional

import numpy as np

from .action import Subdivision, adaptive_gauss_legendre, segment_action
from .coulomb import v1_gradient
from .errors import BudgetError, ConfigError, InvariantViolation
from .field import FieldVector, ModelContext, tilde_A_with_derivatives, v2_gradient
from .fock import OperatorMatrix, OscillatorBasis, StateVector, h_rad
from .lattice import SimulationConfig

TWO_PI = 2.0 * math.pi

__all__ = [
    "fresnel_gaussian",
    "damped_fresnel_quadrature",
    "extrapolate_inverse_square",
    "quadratic_variable_step",
    "StepBackend",
    "fundamental_step",
    "compose",
    "fit_growth_rate",
    "ConvergenceStudy",
    "convergence_study",
    "ResidualStudy",
    "residual_study",
    "PhiMapPoint",
    "phi_maps",
    "RhoStarResult",
    "rho_star_search",
    "xi_mode_factor",
    "g_epsilon_step",
    "g_epsilon_extrapolated",
]


# ---------------------------------------------------------------------------
# Fresnel integrals
# ---------------------------------------------------------------------------

def fresnel_gaussian(a: float) -> complex:
    """Value of the 1-D Fresnel integral of exp(i a theta^2) over the line.

    Equals sqrt(pi / a) e^{i pi / 4} for a > 0; the closed form anchors every
    regularized quadrature in this module.
    """
    if not a > 0.0:
        raise ConfigError(f"fresnel_gaussian needs a > 0, got {a}")
    return math.sqrt(math.pi / a) * complex(math.cos(math.pi / 4),
                                            math.sin(math.pi / 4))


def damped_fresnel_quadrature(a: float, eps: float, *, span: float = 12.0,
                              step: float = 3.0e-3) -> complex:
    """Riemann sum of exp((i a - eps) theta^2) on a symmetric grid.

    The grid reaches span / sqrt(eps) so the damping tail is negligible; the
    step must resolve the local phase 2 a theta at the edge.
    """
    if not a > 0.0 or not eps > 0.0:
        raise ConfigError("damped quadrature needs a > 0 and eps > 0")
    edge = span / math.sqrt(eps)
    n = int(math.ceil(edge / step))
    theta = np.arange(-n, n + 1) * step
    return complex(np.sum(np.exp((1j * a - eps) * theta**2)) * step)


def extrapolate_inverse_square(values, eps_values) -> complex:
    """eps -> 0 limit of a damped Fresnel value through 1 / v^2.

    The damped integral is sqrt(pi / (eps - i a)), so its inverse square is
    affine in eps and two levels extrapolate it exactly; the principal square
    root restores the e^{i pi / 4} branch.
    """
    vals = np.asarray(values, dtype=complex)
    eps = np.asarray(eps_values, dtype=float)
    if vals.shape != eps.shape or len(vals) < 2:
        raise ConfigError("need matching value/eps sequences of length >= 2")
    intercept = np.polyfit(eps, 1.0 / vals**2, 1)[1]
    return complex(1.0 / np.sqrt(intercept))


# ---------------------------------------------------------------------------
# Analytic one-variable step
# ---------------------------------------------------------------------------

def _pair_form(rho: float, omega: float, hbar: float, volume: float):
    """Quadratic endpoint form of one field variable over one step.

    Midpoint integration of the quadratic potential along the straight
    segment gives phase coefficients a (both squares) and b (cross term).
    """
    a = 1.0 / (2.0 * volume * rho) - rho * omega**2 / (6.0 * volume)
    b = -1.0 / (volume * rho) - rho * omega**2 / (6.0 * volume)
    return a, b


def _guard_step_size(rho: float, omega_max: float) -> None:
    if rho * rho * omega_max * omega_max >= 3.0:
        raise ConfigError(
            f"step {rho:g} is too large for the quadratic kernel branch; "
            f"keep rho * omega below sqrt(3) (omega_max={omega_max:g})"
        )


@lru_cache(maxsize=None)
def _pair_coefficient_table(alpha: complex, beta: complex, cap: int):
    """Taylor table of exp(alpha w^2 + beta w v + alpha v^2) up to cap."""
    R = cap + 1
    c = np.zeros((R, R), dtype=complex)
    c[0, 0] = 1.0
    for tot in range(1, 2 * R - 1):
        for m in range(max(0, tot - R + 1), min(tot, R - 1) + 1):
            n = tot - m
            if m > 0:
                acc = beta * c[m - 1, n - 1] if n >= 1 else 0.0
                if m >= 2:
                    acc += 2.0 * alpha * c[m - 2, n]
                c[m, n] = acc / m
            else:
                acc = 2.0 * alpha * c[0, n - 2] if n >= 2 else 0.0
                c[m, n] = acc / n
    return c


def quadratic_variable_step(rho: float, omega: float, cap: int, *,
                            hbar: float = 1.0, volume: float = 1.0) -> np.ndarray:
    """One-step matrix of a single decoupled field variable on levels 0..cap.

    The Hermite-basis matrix elements of the Gaussian step kernel follow from
    a two-point generating function; the zero-point phase is included so the
    small-step limit is the identity.
    """
    if rho <= 0.0:
        raise ConfigError("quadratic_variable_step needs rho > 0")
    _guard_step_size(rho, omega)
    lam_sq = omega / (hbar * volume)
    a, b = _pair_form(rho, omega, hbar, volume)
    A11 = lam_sq - 2j * a / hbar
    A12 = -1j * b / hbar
    det_q = (A11 - A12) * (A11 + A12)
    inv11 = A11 / det_q
    inv12 = -A12 / det_q
    alpha = 2.0 * lam_sq * inv11 - 1.0
    beta = 4.0 * lam_sq * inv12
    nu = math.sqrt(1.0 / (TWO_PI * hbar * volume * rho)) \
        * complex(math.cos(math.pi / 4), -math.sin(math.pi / 4))
    c0 = nu * np.exp(0.5j * rho * omega) * TWO_PI / np.sqrt(det_q)
    table = _pair_coefficient_table(complex(alpha), complex(beta), cap)
    fac = np.array([math.factorial(i) for i in range(cap + 1)], dtype=float)
    pow2 = 2.0 ** np.arange(cap + 1)
    scale = math.sqrt(lam_sq) / math.sqrt(math.pi) \
        * np.sqrt(np.outer(fac, fac) / np.outer(pow2, pow2))
    return scale * c0 * table


# ---------------------------------------------------------------------------
# Step backends
# ---------------------------------------------------------------------------

def _default_wave_cube(cutoff: int) -> np.ndarray:
    rng = range(-cutoff, cutoff + 1)
    return np.array([(a, b, c) for a in rng for b in rng for c in rng], dtype=int)


def _plane_wave_energies(waves: np.ndarray, config: SimulationConfig) -> np.ndarray:
    p = config.hbar * TWO_PI * waves / np.asarray(config.L, dtype=float)
    return np.sum(p * p, axis=1)


class _AnalyticStep:
    """Per-variable field matrices plus free plane-wave phases."""

    def __init__(self, mats, particle_phases, field_dim):
        self.mats = mats
        self.particle_phases = particle_phases
        self.field_dim = field_dim
        self.dim = field_dim * (len(particle_phases)
                                if particle_phases is not None else 1)

    def apply(self, coeffs: np.ndarray) -> np.ndarray:
        shape = tuple(m.shape[0] for m in self.mats)
        if self.particle_phases is not None:
            shape = shape + (len(self.particle_phases),)
        arr = coeffs.reshape(shape)
        for axis, mat in enumerate(self.mats):
            arr = np.moveaxis(np.tensordot(mat, arr, axes=(1, axis)), 0, axis)
        if self.particle_phases is not None:
            arr = arr * self.particle_phases
        return arr.reshape(-1)


class _MatrixStep:
    def __init__(self, matrix: np.ndarray):
        self.matrix = matrix
        self.dim = matrix.shape[0]

    def apply(self, coeffs: np.ndarray) -> np.ndarray:
        return self.matrix @ coeffs


@dataclass(eq=False)
class StepBackend:
    """How the fundamental step is realized, with its quadrature knobs.

    kind is "analytic-quadratic" (closed-form, decoupled systems only) or
    "galerkin" (regularized quadrature of kernel matrix elements, one charged
    particle coupled to a single mode along the third axis).  eps is the
    damping regularizer of the oscillatory longitudinal integral; budget caps
    the total quadrature node count.
    """

    kind: str
    basis: OscillatorBasis
    ctx: ModelContext
    eps: float = 4.0e-3
    budget: int = 400_000
    wave_cutoff: int = 3
    wave_indices: Optional[np.ndarray] = None
    transverse: tuple = (0, 0)
    kappa_max: float = 12.0
    x3_nodes: int = 32
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        if self.kind not in ("analytic-quadratic", "galerkin"):
            raise ConfigError(f"unknown backend kind {self.kind!r}")
        if self.eps <= 0.0:
            raise ConfigError("the regularizer eps must be positive")
        config = self.ctx.config
        if [wv.s for wv in self.basis.modes.lam_prime] != \
                [wv.s for wv in self.ctx.modes3.lam_prime]:
            raise ConfigError("backend basis must live on the context's Lambda'_3")
        if (self.basis.hbar, self.basis.c_light) != (config.hbar, config.c_light) \
                or abs(self.basis.volume - config.volume) > 1e-12 * config.volume:
            raise ConfigError("basis constants disagree with the configuration")
        charges = np.asarray(config.charges, dtype=float)
        if self.kind == "analytic-quadratic":
            if np.any(charges != 0.0) and (self.ctx.modes2.N > 0
                                           or config.n_particles >= 2):
                raise ConfigError(
                    "the analytic-quadratic backend needs vanishing coupling: "
                    "all charges zero, or a single charge with empty Lambda'_2"
                )
            if config.n_particles > 0 and self.wave_indices is None:
                self.wave_indices = _default_wave_cube(1)
        else:
            _validate_galerkin_static(self)
        if self.wave_indices is not None:
            self.wave_indices = np.asarray(self.wave_indices, dtype=int).reshape(-1, 3)

    def step_operator(self, rho: float):
        key = (self.kind, f"{rho:.13e}")
        op = self._cache.get(key)
        if op is None:
            if self.kind == "analytic-quadratic":
                op = _analytic_step_operator(self, rho)
            else:
                op = _MatrixStep(_galerkin_matrix(self, rho))
            self._cache[key] = op
        return op

    @property
    def state_dim(self) -> int:
        config = self.ctx.config
        if self.kind == "galerkin":
            return self.basis.dim * (2 * self.wave_cutoff + 1)
        part = len(self.wave_indices) ** config.n_particles \
            if config.n_particles else 1
        return self.basis.dim * part


def _analytic_step_operator(backend: StepBackend, rho: float) -> _AnalyticStep:
    basis = backend.basis
    config = backend.ctx.config
    omegas = basis.omegas()
    _guard_step_size(rho, float(np.max(omegas)) if omegas.size else 0.0)
    mats = [
        quadratic_variable_step(rho, float(w), basis.cap,
                                hbar=basis.hbar, volume=basis.volume)
        for w in omegas
    ]
    phases = None
    if config.n_particles:
        waves = backend.wave_indices
        energy = _plane_wave_energies(waves, config)
        masses = np.asarray(config.masses, dtype=float)
        total = np.zeros((len(waves),) * config.n_particles)
        for j in range(config.n_particles):
            shape = [1] * config.n_particles
            shape[j] = len(waves)
            total = total + (energy / (2.0 * masses[j])).reshape(shape)
        phases = np.exp(-1j * rho * total.reshape(-1) / config.hbar)
    return _AnalyticStep(mats, phases, basis.dim)


def fundamental_step(f: StateVector, t: float, s: float,
                     backend: StepBackend) -> StateVector:
    """One application of the step operator C(t, s) to a state.

    t = s returns the identity exactly; otherwise the backend's cached
    one-step operator for rho = t - s is applied.
    """
    if t < s:
        raise ConfigError("fundamental_step needs t >= s")
    if t == s:
        return StateVector(f.coefficients.copy(), f.basis)
    op = backend.step_operator(t - s)
    if len(f.coefficients) != op.dim:
        raise ConfigError(
            f"state dimension {len(f.coefficients)} does not match the "
            f"backend's step operator ({op.dim})"
        )
    return StateVector(op.apply(f.coefficients), f.basis)


def compose(f: StateVector, subdivision: Subdivision, backend: StepBackend,
            collect_norms: bool = False):
    """Left-to-right composition of fundamental steps over a subdivision."""
    out = f
    norms = []
    for lo, hi in zip(subdivision.times, subdivision.times[1:]):
        out = fundamental_step(out, hi, lo, backend)
        if collect_norms:
            norms.append(out.norm)
    if collect_norms:
        return out, norms
    return out


def fit_growth_rate(times, norms) -> float:
    """Growth constant K with exp(K t) bounding the composed norms.

    Least-squares slope of log norm against time, clipped at zero since the
    bound only needs a nonnegative rate.
    """
    t = np.asarray(times, dtype=float)
    n = np.asarray(norms, dtype=float)
    if len(t) != len(n) or len(t) < 2:
        raise ConfigError("need matching times/norms with at least two entries")
    if np.any(n <= 0.0):
        raise ConfigError("norms must be positive to fit a growth rate")
    slope = np.polyfit(t, np.log(n), 1)[0]
    return max(0.0, float(slope))


# ---------------------------------------------------------------------------
# Convergence and residual studies
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ConvergenceStudy:
    """Mesh-refinement errors against a reference state."""

    rows: tuple              # (segments, relative error)
    orders: tuple            # observed order between consecutive rows
    monotone: bool
    final_error: float

    def to_csv(self, path) -> None:
        with open(path, "w", encoding="utf-8") as handle:
            handle.write("segments,relative_error\n")
            for segs, err in self.rows:
                handle.write(f"{segs},{err:.17g}\n")


def convergence_study(f: StateVector, backend: StepBackend, horizon: float,
                      segment_counts, reference) -> ConvergenceStudy:
    """Compose over uniform meshes and compare against a reference state."""
    ref = reference.coefficients if isinstance(reference, StateVector) \
        else np.asarray(reference, dtype=complex)
    scale = f.norm
    if scale <= 0.0:
        raise ConfigError("convergence study needs a nonzero input state")
    rows = []
    for segs in segment_counts:
        out = compose(f, Subdivision.uniform(horizon, int(segs)), backend)
        rows.append((int(segs), float(np.linalg.norm(out.coefficients - ref))
                     / scale))
    orders = []
    for (s0, e0), (s1, e1) in zip(rows, rows[1:]):
        if e0 > 0.0 and e1 > 0.0 and s1 != s0:
            orders.append(math.log(e0 / e1) / math.log(s1 / s0))
    monotone = all(e1 < e0 for (_, e0), (_, e1) in zip(rows, rows[1:]))
    return ConvergenceStudy(tuple(rows), tuple(orders), monotone, rows[-1][1])


@dataclass(frozen=True)
class ResidualStudy:
    """Generator residuals of single steps across step sizes."""

    rows: tuple              # (rho, delta, residual)
    slope: float

    def to_csv(self, path) -> None:
        with open(path, "w", encoding="utf-8") as handle:
            handle.write("rho,delta,residual\n")
            for rho, delta, res in self.rows:
                handle.write(f"{rho:.17g},{delta:.17g},{res:.17g}\n")


def residual_study(f: StateVector, backend: StepBackend, rho_list,
                   hamiltonian=None, dt_factor: float = 0.125) -> ResidualStudy:
    """Norm of (i hbar D_t - H) C(rho, 0) f with a centered time difference.

    The difference step is delta = dt_factor * rho.  Without an explicit
    Hamiltonian the field generator is used, which requires a field-only
    configuration.
    """
    config = backend.ctx.config
    if hamiltonian is None:
        if config.n_particles:
            raise ConfigError("pass the Hamiltonian explicitly when particles "
                              "are present")
        hamiltonian = h_rad(backend.basis)
    H = hamiltonian.matrix if isinstance(hamiltonian, OperatorMatrix) \
        else hamiltonian
    hbar = config.hbar
    rows = []
    for rho in rho_list:
        rho = float(rho)
        delta = dt_factor * rho
        ahead = fundamental_step(f, rho + delta, 0.0, backend).coefficients
        behind = fundamental_step(f, rho - delta, 0.0, backend).coefficients
        center = fundamental_step(f, rho, 0.0, backend).coefficients
        vec = 1j * hbar * (ahead - behind) / (2.0 * delta) - H @ center
        rows.append((rho, delta, float(np.linalg.norm(vec))))
    logs = [(math.log(r), math.log(res)) for r, _, res in rows if res > 0.0]
    if len(logs) >= 2:
        xs, ys = zip(*logs)
        slope = float(np.polyfit(xs, ys, 1)[0])
    else:
        slope = math.nan
    return ResidualStudy(tuple(rows), slope)


# ---------------------------------------------------------------------------
# Endpoint-difference maps
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class PhiMapPoint:
    """Phi maps at one endpoint configuration with their Jacobian record."""

    t: float
    s: float
    x: np.ndarray
    y: np.ndarray
    z: np.ndarray
    X: np.ndarray
    Y: np.ndarray
    Z: np.ndarray
    phi: np.ndarray          # (n, 3) per-particle map
    phi1: np.ndarray         # (4N,) field map
    jacobian_det: Optional[float]
    fd_step: Optional[float]
    identity_residual: Optional[float]


def _earlier_gradient(t: float, s: float, z_part, y_part, Z_f, Y_f,
                      ctx: ModelContext, rel_tol: float):
    """Gradients of the segment action in its earlier endpoint.

    Returns (grad_y, grad_Y) at fixed later endpoint (z_part, Z_f); the
    potential and coupling contributions are theta integrals evaluated in one
    vector-valued adaptive pass.
    """
    rho = t - s
    config = ctx.config
    n = config.n_particles
    masses = np.asarray(config.masses, dtype=float)
    charges = np.asarray(config.charges, dtype=float)
    vol = config.volume
    n_field = ctx.n_field

    grad_y = (masses[:, None] * (y_part - z_part) / rho) if n else \
        np.zeros((0, 3))
    grad_Y = (Y_f - Z_f) / (vol * rho)

    has_v1 = n >= 2 and np.any(charges != 0.0) and ctx.modes1.N > 0
    has_v2 = ctx.modes3.N > 0
    coupled = [j for j in range(n) if charges[j] != 0.0] if ctx.modes2.N else []
    if not (has_v1 or has_v2 or coupled):
        return grad_y, grad_Y

    disp = z_part - y_part if n else np.zeros((0, 3))

    def integrand(thetas):
        thetas = np.atleast_1d(thetas)
        out = np.zeros((len(thetas), 3 * n + n_field))
        for pos, th in enumerate(thetas):
            q = (1.0 - th) * z_part + th * y_part if n else z_part
            a_vals = (1.0 - th) * Z_f + th * Y_f
            row_y = np.zeros((n, 3))
            row_Y = np.zeros(n_field)
            if has_v1:
                row_y -= rho * th * v1_gradient(q, charges, ctx.modes1, config)
            if has_v2:
                row_Y -= rho * th * v2_gradient(
                    FieldVector(a_vals, ctx.modes3), config)
            for j in coupled:
                value, grad_x, grad_a = tilde_A_with_derivatives(
                    q[j], FieldVector(a_vals, ctx.modes3), ctx.modes2,
                    ctx.frame, ctx.mollifiers, config)
                factor = charges[j] / config.c_light
                row_y[j] += factor * (-value + th * (grad_x @ disp[j]))
                row_Y += factor * th * (disp[j] @ grad_a)
            out[pos, :3 * n] = row_y.reshape(-1)
            out[pos, 3 * n:] = row_Y
        return out

    integral = adaptive_gauss_legendre(integrand, rel_tol=rel_tol,
                                       abs_floor=1e-14)
    grad_y = grad_y + integral[:3 * n].reshape(n, 3)
    grad_Y = grad_Y + integral[3 * n:]
    return grad_y, grad_Y


def _phi_values(t: float, s: float, x, y, z, X, Y, Z, ctx: ModelContext,
                rel_tol: float):
    """Raw (phi, phi1) from the sigma quadrature of endpoint gradients."""
    rho = t - s
    config = ctx.config
    n = config.n_particles
    masses = np.asarray(config.masses, dtype=float)
    n_field = ctx.n_field

    def sigma_integrand(sigmas):
        sigmas = np.atleast_1d(sigmas)
        out = np.zeros((len(sigmas), 3 * n + n_field))
        for pos, sig in enumerate(sigmas):
            y_sig = x + sig * (y - x) if n else x
            Y_sig = X + sig * (Y - X)
            g_y, g_Y = _earlier_gradient(t, s, z, y_sig, Z, Y_sig, ctx, rel_tol)
            out[pos, :3 * n] = g_y.reshape(-1)
            out[pos, 3 * n:] = g_Y
        return out

    integral = adaptive_gauss_legendre(sigma_integrand, rel_tol=rel_tol,
                                       abs_floor=1e-14)
    phi = -rho / masses[:, None] * integral[:3 * n].reshape(n, 3) if n \
        else np.zeros((0, 3))
    phi1 = -rho * config.volume * integral[3 * n:]
    return phi, phi1


def phi_maps(t: float, s: float, x, y, z, X, Y, Z, ctx: ModelContext, *,
             rel_tol: float = 1e-9, jacobian: bool = True,
             fd_scale: float = 1e-5, verify: bool = True) -> PhiMapPoint:
    """Endpoint-difference maps phi and phi_1 with an optional Jacobian.

    The maps represent the action difference of two segments sharing the
    later endpoint (z, Z):

        S(z, y, Z, Y) - S(z, x, Z, X)
            = sum_j m_j (x_j - y_j) . phi_j / (t - s)
              + (X - Y) . phi1 / ((t - s) |V|)

    exactly, by the fundamental theorem of calculus along the straight
    homotopy between the earlier endpoints; numerically to the quadrature
    tolerance.  With verify on, the identity is checked against two direct
    action evaluations.  The Jacobian determinant is for the map
    (z, Z) -> (phi, phi1) by central differences with the recorded step.
    """
    if t <= s:
        raise ConfigError("phi_maps needs t > s")
    config = ctx.config
    n = config.n_particles
    rho = t - s

    def positions(p):
        if p is None:
            if n:
                raise ConfigError("particle endpoints are required when "
                                  "n_particles > 0")
            return np.zeros((0, 3))
        return np.asarray(p, dtype=float).reshape(n, 3)

    def fields(a):
        vals = a.values if isinstance(a, FieldVector) else a
        return np.asarray(vals, dtype=float).reshape(ctx.n_field)

    x = positions(x)
    y = positions(y)
    z = positions(z)
    X = fields(X)
    Y = fields(Y)
    Z = fields(Z)

    phi, phi1 = _phi_values(t, s, x, y, z, X, Y, Z, ctx, rel_tol)

    residual = None
    if verify:
        masses = np.asarray(config.masses, dtype=float)
        predicted = float(np.sum(masses[:, None] * (x - y) * phi)) / rho \
            + float((X - Y) @ phi1) / (rho * config.volume)
        direct = segment_action(t, s, z, y, Z, Y, ctx) \
            - segment_action(t, s, z, x, Z, X, ctx)
        scale = max(1.0, abs(direct))
        residual = abs(predicted - direct) / scale
        if residual > 1e-6:
            raise InvariantViolation(
                f"phi-map difference identity drifts by {residual:.3e} "
                "relative to the direct action difference"
            )

    det = None
    step_used = None
    if jacobian:
        det, step_used = _phi_jacobian_det(t, s, x, y, z, X, Y, Z, ctx,
                                           rel_tol, fd_scale)
    return PhiMapPoint(t, s, x, y, z, X, Y, Z, phi, phi1, det, step_used,
                       residual)


def _phi_jacobian_det(t, s, x, y, z, X, Y, Z, ctx, rel_tol, fd_scale):
    """Central-difference determinant of d(phi, phi1) / d(z, Z)."""
    n = ctx.config.n_particles
    dim = 3 * n + ctx.n_field

    def evaluate(z_flat, Z_vals):
        phi, phi1 = _phi_values(t, s, x, y, z_flat.reshape(n, 3) if n
                                else z_flat.reshape(0, 3),
                                X, Y, Z_vals, ctx, rel_tol)
        return np.concatenate([phi.reshape(-1), phi1])

    base = np.concatenate([z.reshape(-1), Z])
    jac = np.empty((dim, dim))
    for col in range(dim):
        h = fd_scale * max(1.0, abs(base[col]))
        plus = base.copy()
        minus = base.copy()
        plus[col] += h
        minus[col] -= h
        f_plus = evaluate(plus[:3 * n], plus[3 * n:])
        f_minus = evaluate(minus[:3 * n], minus[3 * n:])
        jac[:, col] = (f_plus - f_minus) / (2.0 * h)
    return float(np.linalg.det(jac)), fd_scale


# ---------------------------------------------------------------------------
# Invertibility radius search
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class RhoStarResult:
    """Largest certified step with sampled Jacobian determinants >= 1/2."""

    value: float
    ceiling: float
    ceiling_hit: bool
    min_det_at_value: float
    probes: tuple            # (rho, min sampled det, passed)

    def __float__(self) -> float:
        return self.value

    def to_csv(self, path) -> None:
        with open(path, "w", encoding="utf-8") as handle:
            handle.write("rho,min_det,passed\n")
            for rho, det, ok in self.probes:
                handle.write(f"{rho:.17g},{det:.17g},{int(ok)}\n")


def rho_star_search(config: SimulationConfig, sample_budget: int = 6, *,
                    ceiling: float = 1.0, seed: int = 0,
                    ctx: Optional[ModelContext] = None,
                    rel_tol: float = 1e-6, bisect_iters: int = 9,
                    fd_scale: float = 1e-5) -> RhoStarResult:
    """Bisect the largest step whose sampled phi-map Jacobians stay >= 1/2.

    Endpoints are sampled once (positions uniform over the box, field values
    Gaussian at the oscillator scale) and reused across probes, so the search
    is deterministic for a fixed seed.  This is a sampled certificate over
    the drawn endpoints, not a global bound.
    """
    if sample_budget < 1:
        raise ConfigError("rho_star_search needs at least one sample")
    if ceiling <= 0.0:
        raise ConfigError("the search ceiling must be positive")
    if ctx is None:
        ctx = ModelContext.from_config(config)
    n = config.n_particles
    rng = np.random.default_rng(seed)
    box = np.asarray(config.L, dtype=float)
    omegas = np.repeat(
        [config.c_light * wv.norm for wv in ctx.modes3.lam_prime], 4)
    a_scale = np.sqrt(config.hbar * config.volume
                      / np.maximum(omegas, 1e-30)) if len(omegas) else \
        np.zeros(0)
    samples = []
    for _ in range(sample_budget):
        pts = [rng.uniform(-0.5 * box, 0.5 * box, size=(n, 3)) for _ in range(3)]
        fields = [rng.normal(scale=a_scale) if len(a_scale) else np.zeros(0)
                  for _ in range(3)]
        samples.append((pts, fields))

    probes = []

    def min_det(rho: float) -> float:
        worst = math.inf
        for (xs, ys, zs), (Xs, Ys, Zs) in samples:
            det, _ = _phi_jacobian_det(rho, 0.0, xs, ys, zs, Xs, Ys, Zs, ctx,
                                       rel_tol, fd_scale)
            worst = min(worst, det)
        return worst

    det_ceiling = min_det(ceiling)
    probes.append((ceiling, det_ceiling, det_ceiling >= 0.5))
    if det_ceiling >= 0.5:
        return RhoStarResult(ceiling, ceiling, True, det_ceiling,
                             tuple(probes))

    lo, hi = 0.0, ceiling
    lo_det = 1.0
    for _ in range(bisect_iters):
        mid = 0.5 * (lo + hi)
        det_mid = min_det(mid)
        ok = det_mid >= 0.5
        probes.append((mid, det_mid, ok))
        if ok:
            lo, lo_det = mid, det_mid
        else:
            hi = mid
    if lo == 0.0:
        raise InvariantViolation(
            "no step size with sampled Jacobian determinant >= 1/2 was found "
            f"above {hi:.3e}; the configuration couples too strongly"
        )
    return RhoStarResult(lo, ceiling, False, lo_det, tuple(probes))


# ---------------------------------------------------------------------------
# Scalar-offset step G_eps
# ---------------------------------------------------------------------------

def xi_mode_factor(k_norm: float, rho: float, eps: float,
                   config: SimulationConfig) -> complex:
    """Damped scalar-offset factor of one first-cutoff mode.

    The two offset components of a mode integrate to pi / (eps^2 - i a) with
    a = rho |k|^2 / (4 pi hbar |V|); against the normalization a / (i pi)
    the factor is a / (a + i eps^2), which tends to one as eps -> 0.
    """
    if rho <= 0.0:
        raise ConfigError("xi_mode_factor needs rho > 0")
    a = rho * k_norm**2 / (4.0 * math.pi * config.hbar * config.volume)
    return a / (a + 1j * eps * eps)


def _check_offset_modes(backend: StepBackend) -> None:
    if backend.ctx.modes1.N > 2:
        raise ConfigError(
            "the scalar-offset step handles at most two first-cutoff modes; "
            f"Lambda'_1 has {backend.ctx.modes1.N}"
        )


def g_epsilon_step(f: StateVector, t: float, s: float, eps: float,
                   backend: StepBackend) -> StateVector:
    """Fundamental step with the damped scalar-offset integration included.

    The offset action decouples from the endpoints, so the extra integral
    over R^{2 N_1} with Gaussian damping exp(-(eps xi)^2) reduces to one
    closed-form factor per first-cutoff mode multiplying C(t, s) f.
    """
    if t <= s:
        raise ConfigError("g_epsilon_step needs t > s")
    if eps <= 0.0:
        raise ConfigError("g_epsilon_step needs eps > 0")
    _check_offset_modes(backend)
    stepped = fundamental_step(f, t, s, backend)
    factor = 1.0 + 0.0j
    for wv in backend.ctx.modes1.lam_prime:
        factor *= xi_mode_factor(wv.norm, t - s, eps, backend.ctx.config)
    return StateVector(factor * stepped.coefficients, stepped.basis)


def g_epsilon_extrapolated(f: StateVector, t: float, s: float,
                           backend: StepBackend,
                           eps0: Optional[float] = None) -> StateVector:
    """eps -> 0 limit of g_epsilon_step by Richardson steps in eps^2.

    Three levels eps^2, eps^2/2, eps^2/4 cancel the first two orders; the
    default eps0 puts the leading correction near one percent of each mode
    factor so the remainder lands well below 1e-6.
    """
    if t <= s:
        raise ConfigError("g_epsilon_extrapolated needs t > s")
    _check_offset_modes(backend)
    modes1 = backend.ctx.modes1
    if modes1.N == 0:
        return fundamental_step(f, t, s, backend)
    if eps0 is None:
        config = backend.ctx.config
        a_min = min(
            (t - s) * wv.norm**2 / (4.0 * math.pi * config.hbar * config.volume)
            for wv in modes1.lam_prime
        )
        eps0 = math.sqrt(0.01 * a_min)
    levels = [eps0, eps0 / math.sqrt(2.0), eps0 / 2.0]
    states = [g_epsilon_step(f, t, s, eps, backend).coefficients
              for eps in levels]
    combined = (states[0] - 6.0 * states[1] + 8.0 * states[2]) / 3.0
    return StateVector(combined, f.basis)


# ---------------------------------------------------------------------------
# Galerkin backend internals
# ---------------------------------------------------------------------------

def _validate_galerkin_static(backend: StepBackend) -> None:
    config = backend.ctx.config
    ctx = backend.ctx
    if config.n_particles != 1:
        raise ConfigError("the galerkin backend handles exactly one particle")
    if ctx.modes2.N != 1 or ctx.modes3.N != 1:
        raise ConfigError(
            "the galerkin backend needs a single coupling mode carried by "
            "the field state space (Lambda'_2 = Lambda'_3, one member)"
        )
    s = ctx.modes2.lam_prime[0].s
    if s[0] != 0 or s[1] != 0:
        raise ConfigError(
            f"the coupling mode must point along the third axis, got s={s}; "
            "the slab-separable assembly relies on transverse momentum "
            "conservation"
        )
    if backend.basis.cap > 6:
        raise ConfigError("galerkin occupation caps above 6 are not supported")
    if backend.wave_cutoff < 1 or backend.wave_cutoff > 6:
        raise ConfigError("galerkin wave cutoffs outside 1..6 are not supported")
    if len(backend.transverse) != 2:
        raise ConfigError("transverse wave numbers must be a pair")
    box = np.asarray(config.L, dtype=float)
    corners = 0.5 * box * np.array(
        [(sx, sy, sz) for sx in (-1, 1) for sy in (-1, 1) for sz in (-1, 1)])
    drift = max(abs(ctx.mollifiers.g(c) - 1.0) for c in corners)
    if drift > 1e-8:
        raise ConfigError(
            "the plane-wave galerkin basis needs an effectively flat spatial "
            f"cutoff; g drifts by {drift:.3e} over the box "
            f"(width_g={ctx.mollifiers.width_g:g})"
        )
    omega = config.c_light * ctx.modes2.lam_prime[0].norm
    amax = 8.0 * math.sqrt(config.hbar * config.volume / omega)
    grid = np.linspace(-amax, amax, 33)
    dev = float(np.max(np.abs(ctx.mollifiers.psi(grid) - grid)))
    if dev > 1e-6 * amax:
        raise ConfigError(
            "the galerkin kernel assembly needs psi to act linearly over the "
            f"occupied field range; the bend is {dev:.3e} at scale {amax:.3g} "
            f"(sigma_psi={config.sigma_psi:g})"
        )


def _interp_coeffs(kappa: np.ndarray):
    """Endpoint-weighted averages of exp(-i theta kappa) over theta in [0,1].

    c1 carries the (1 - theta) weight of the later endpoint, c2 the theta
    weight of the earlier one; a series branch keeps small kappa stable.
    """
    kappa = np.asarray(kappa, dtype=float)
    u = -1j * kappa
    small = np.abs(kappa) < 1e-3
    safe = np.where(small, 1.0, u)
    exp_u = np.exp(u)
    c2 = (exp_u * (safe - 1.0) + 1.0) / safe**2
    c1 = (exp_u - 1.0) / safe - c2
    if np.any(small):
        series1 = np.zeros_like(u)
        series2 = np.zeros_like(u)
        term = np.ones_like(u)
        for order in range(7):
            series1 += term * (1.0 / (order + 1) - 1.0 / (order + 2))
            series2 += term / (order + 2)
            term = term * u / (order + 1)
        c1 = np.where(small, series1, c1)
        c2 = np.where(small, series2, c2)
    return c1, c2


@lru_cache(maxsize=8)
def _alpha_order(R: int) -> tuple:
    alphas = sorted(itertools.product(range(R), repeat=4), key=sum)
    return tuple(a for a in alphas if sum(a) > 0)


def _coeff_tables(lam_tilde: np.ndarray, mu: Optional[np.ndarray],
                  cap: int) -> np.ndarray:
    """Batched Taylor tables of exp(u^T lam_tilde u + mu . u) in four duals.

    The derivative recursion alpha_i c_alpha = mu_i c_{alpha - e_i}
    + sum_j 2 lam_tilde_ij c_{alpha - e_i - e_j} fills the table degree by
    degree; shape (batch, R, R, R, R).
    """
    R = cap + 1
    batch = lam_tilde.shape[0]
    c = np.zeros((batch, R, R, R, R), dtype=complex)
    c[:, 0, 0, 0, 0] = 1.0
    for alpha in _alpha_order(R):
        i = next(ax for ax in range(4) if alpha[ax] > 0)
        acc = np.zeros(batch, dtype=complex)
        reduced = list(alpha)
        reduced[i] -= 1
        if mu is not None:
            acc += mu[:, i] * c[(slice(None), *reduced)]
        for j in range(4):
            idx = list(reduced)
            idx[j] -= 1
            if idx[j] < 0:
                continue
            acc = acc + 2.0 * lam_tilde[:, i, j] * c[(slice(None), *idx)]
        c[(slice(None), *alpha)] = acc / alpha[i]
    return c


def _field_block_tensors(d_vecs: np.ndarray, eta: complex, coupling: complex,
                         m_base: np.ndarray, det_q2: complex, lam_sq: float,
                         norm_const: complex, fac4: np.ndarray,
                         cap: int) -> np.ndarray:
    """Exact four-variable Gaussian tensors of one polarization block.

    d_vecs holds the per-node source directions; coupling multiplies the
    rank-one addition to the base quadratic form, eta the linear source from
    a nonzero transverse momentum.  The square root of the determinant is
    anchored to the uncoupled branch through the ratio to det_q2^2.
    """
    batch = d_vecs.shape[0]
    M = np.broadcast_to(m_base, (batch, 4, 4)).copy()
    M += coupling * np.einsum("zi,zj->zij", d_vecs, d_vecs)
    m_inv = np.linalg.inv(M)
    det_m = np.linalg.det(M)
    ratio = det_m / (det_q2 * det_q2)
    sqrt_det = det_q2 * np.sqrt(ratio)
    lam_tilde = 2.0 * lam_sq * m_inv - np.eye(4)[None]
    mu = None
    scalar = np.ones(batch, dtype=complex)
    if eta != 0.0:
        m_inv_d = np.einsum("zij,zj->zi", m_inv, d_vecs)
        mu = 2.0 * math.sqrt(lam_sq) * eta * m_inv_d
        scalar = np.exp(0.5 * eta * eta
                        * np.einsum("zi,zi->z", d_vecs, m_inv_d))
    tables = _coeff_tables(lam_tilde, mu, cap)
    const = norm_const * scalar / sqrt_det
    return tables * const[:, None, None, None, None] * fac4[None]


def _galerkin_matrix(backend: StepBackend, rho: float) -> np.ndarray:
    """Coupled one-step matrix on (field occupations) x (z-line plane waves).

    Transverse endpoint integrals are exact Gaussians, each polarization
    block is an exact four-variable generating-function Gaussian per node,
    and the remaining periodic x3 and oscillatory w3 integrals are a
    trapezoid rule and a damped Fresnel grid with Richardson extrapolation
    in the damping parameter.  The kappa -> infinity limit of the integrand
    is split off and integrated in closed form, so the vanishing-coupling
    case reproduces the analytic backend exactly.
    """
    ctx = backend.ctx
    config = ctx.config
    basis = backend.basis
    cap = basis.cap
    R = cap + 1
    hbar = config.hbar
    vol = config.volume
    m_p = float(config.masses[0])
    e_ch = float(config.charges[0])
    wv = ctx.modes2.lam_prime[0]
    k3 = wv.norm
    omega = config.c_light * k3
    _guard_step_size(rho, omega)
    lam_sq = omega / (hbar * vol)
    s3 = wv.s[2]
    L3 = config.L[2]

    evecs = ctx.frame.e(wv)
    gamma = e_ch * math.sqrt(8.0 * math.pi) / vol
    a_q, b_q = _pair_form(rho, omega, hbar, vol)
    A11 = lam_sq - 2j * a_q / hbar
    A12 = -1j * b_q / hbar
    det_q2 = (A11 - A12) * (A11 + A12)
    m_base = np.zeros((4, 4), dtype=complex)
    np.fill_diagonal(m_base, A11)
    m_base[0, 2] = m_base[2, 0] = A12
    m_base[1, 3] = m_base[3, 1] = A12
    nu_f_sq = -1j / (TWO_PI * hbar * vol * rho)
    norm_const = nu_f_sq * TWO_PI**2 * lam_sq / math.pi

    fac = np.array([math.factorial(i) for i in range(R)], dtype=float)
    pow2 = 2.0 ** np.arange(R)
    fac1 = np.sqrt(fac / pow2)
    fac4 = (fac1[:, None, None, None] * fac1[None, :, None, None]
            * fac1[None, None, :, None] * fac1[None, None, None, :])

    # Transverse momentum projections onto the polarization frame.
    t1, t2 = backend.transverse
    p_perp = hbar * TWO_PI * np.array(
        [t1 / config.L[0], t2 / config.L[1], 0.0])
    p_l = np.array([float(p_perp @ evecs[0]), float(p_perp @ evecs[1])])
    etas = 1j * rho * gamma * p_l / (m_p * hbar)
    coupling = 1j * rho * gamma * gamma / (m_p * hbar)

    # Longitudinal wave data.
    W = 2 * backend.wave_cutoff + 1
    if 48 * W * W * R**8 > 2_000_000_000:
        raise BudgetError(
            f"galerkin accumulators for cap {cap} and wave cutoff "
            f"{backend.wave_cutoff} would exceed two gigabytes; shrink one"
        )
    m3 = np.arange(-backend.wave_cutoff, backend.wave_cutoff + 1)
    s_f = math.sqrt(2.0 * hbar * rho / m_p)
    beta = (TWO_PI / L3) * m3 * s_f

    # Damped Fresnel grid in the scaled longitudinal displacement.
    z_lim = max(10.0, backend.kappa_max / (k3 * s_f))
    dz = min(math.pi / (2.5 * z_lim), 0.2 / (k3 * s_f))
    n_half = int(math.ceil(z_lim / dz))
    zeta = np.arange(-n_half, n_half + 1) * dz
    if backend.x3_nodes * len(zeta) > backend.budget:
        raise BudgetError(
            f"galerkin quadrature wants {backend.x3_nodes * len(zeta)} nodes, "
            f"over the budget of {backend.budget}; raise the budget or eps"
        )
    eps_levels = (backend.eps, backend.eps / 2.0, backend.eps / 4.0)

    base_blocks = [
        _field_block_tensors(np.zeros((1, 4)), etas[l], coupling, m_base,
                             det_q2, lam_sq, norm_const, fac4, cap)[0]
        for l in range(2)
    ]
    flat = R**4
    pair_base = np.einsum("abcd,efgh->abefcdgh",
                          base_blocks[0], base_blocks[1]).reshape(flat, flat)

    acc = np.zeros((len(eps_levels), W, W, flat * flat), dtype=complex)
    chunk = 512
    same_blocks = etas[0] == etas[1]
    for j in range(backend.x3_nodes):
        xi = TWO_PI * s3 * j / backend.x3_nodes
        rotation = np.exp(1j * xi)
        x_fac = np.exp(1j * TWO_PI * (m3[None, :] - m3[:, None])
                       * j / backend.x3_nodes)
        for start in range(0, len(zeta), chunk):
            zc = zeta[start:start + chunk]
            kappa = k3 * s_f * zc
            c1, c2 = _interp_coeffs(kappa)
            ec1 = rotation * c1
            ec2 = rotation * c2
            d = np.stack([ec1.real, ec1.imag, ec2.real, ec2.imag], axis=1)
            block0 = _field_block_tensors(d, etas[0], coupling, m_base,
                                          det_q2, lam_sq, norm_const, fac4,
                                          cap)
            block1 = block0 if same_blocks else _field_block_tensors(
                d, etas[1], coupling, m_base, det_q2, lam_sq, norm_const,
                fac4, cap)
            pair = np.einsum("zabcd,zefgh->zabefcdgh", block0,
                             block1).reshape(len(zc), flat * flat)
            pair -= pair_base.reshape(-1)[None, :]
            osc = np.exp(1j * zc * zc)[None, :] \
                * np.exp(-1j * np.outer(beta, zc))
            for pos, eps in enumerate(eps_levels):
                weights = osc * np.exp(-eps * zc * zc)[None, :]
                partial = weights @ pair
                acc[pos] += np.einsum("ab,bF->abF", x_fac, partial)

    prefactor = dz / (backend.x3_nodes * math.sqrt(math.pi)) \
        * complex(math.cos(math.pi / 4), -math.sin(math.pi / 4))
    totals = []
    for pos, eps in enumerate(eps_levels):
        total = prefactor * acc[pos]
        eps_c = eps - 1j
        free = (complex(math.cos(math.pi / 4), -math.sin(math.pi / 4))
                / math.sqrt(math.pi)) * np.sqrt(math.pi / eps_c) \
            * np.exp(-beta**2 / (4.0 * eps_c))
        for b in range(W):
            total[b, b] += free[b] * pair_base.reshape(-1)
        totals.append(total)
    rich = (totals[0] - 6.0 * totals[1] + 8.0 * totals[2]) / 3.0

    global_phase = np.exp(2j * rho * omega) \
        * np.exp(-1j * rho * float(p_perp @ p_perp) / (2.0 * m_p * hbar))
    rich = global_phase * rich.reshape(W, W, flat, flat)
    matrix = np.transpose(rich, (2, 0, 3, 1)).reshape(flat * W, flat * W)
    return matrix
