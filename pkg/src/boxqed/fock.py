"""Ladder algebra on truncated oscillator bases, photon states, and H_rad.

Independent field variables live on Lambda' (4N real oscillators, mass 1/|V|,
frequency c|k|); derived operators over the full Lambda follow by the parity
rules.  All operator algebra happens in the occupation (Hermite) basis where
ladder matrices are exact and sparse; coordinate-space formulas are verified
by quadrature in the test suite instead of being used as the representation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy import sparse
from scipy.linalg import dft, eigh
from scipy.sparse.linalg import expm_multiply

from .errors import BudgetError, ConfigError, InvariantViolation
from .field import ModelContext
from .lattice import ModeSet, SimulationConfig, WaveVector

_MAX_DIM = 600_000


@dataclass(frozen=True)
class OscillatorBasis:
    """Product Hermite basis over the 4N field variables with a uniform cap.

    Variable v = 4*k_index + 2*(l-1) + (i-1) matches the flat field layout.
    Enumeration is mixed-radix with variable 0 slowest, so index 0 is the
    vacuum.
    """

    modes: ModeSet
    cap: int
    hbar: float = 1.0
    c_light: float = 1.0
    volume: float = 1.0

    def __post_init__(self):
        if self.cap < 1:
            raise ConfigError("occupation cap must be at least 1")
        if self.dim > _MAX_DIM:
            raise BudgetError(
                f"basis dimension {(self.cap + 1)}^{self.n_vars} exceeds the "
                f"workable limit {_MAX_DIM}"
            )

    @classmethod
    def from_config(cls, config: SimulationConfig, modes: ModeSet) -> "OscillatorBasis":
        return cls(modes=modes, cap=config.n_max, hbar=config.hbar,
                   c_light=config.c_light, volume=config.volume)

    @property
    def n_vars(self) -> int:
        return 4 * self.modes.N

    @property
    def dim(self) -> int:
        return (self.cap + 1) ** self.n_vars

    def omegas(self) -> np.ndarray:
        """Angular frequency c|k| per flat variable."""
        per_mode = np.array([self.c_light * wv.norm for wv in self.modes.lam_prime])
        return np.repeat(per_mode, 4)

    def lambdas(self) -> np.ndarray:
        """Inverse Gaussian width sqrt(c|k| / (hbar |V|)) per flat variable."""
        return np.sqrt(self.omegas() / (self.hbar * self.volume))

    def occupations(self, index: int) -> tuple:
        return tuple(int(v) for v in
                     np.unravel_index(index, (self.cap + 1,) * self.n_vars))

    def index_of(self, occupations) -> int:
        occs = tuple(int(v) for v in occupations)
        if len(occs) != self.n_vars or any(o < 0 or o > self.cap for o in occs):
            raise ConfigError(f"occupations {occs} out of range for cap {self.cap}")
        return int(np.ravel_multi_index(occs, (self.cap + 1,) * self.n_vars))

    def occupation_table(self) -> np.ndarray:
        """All occupation tuples as a (dim, n_vars) integer array."""
        cached = getattr(self, "_table", None)
        if cached is None:
            cached = np.stack(np.unravel_index(
                np.arange(self.dim), (self.cap + 1,) * self.n_vars), axis=1)
            object.__setattr__(self, "_table", cached)
        return cached

    def variable_offset(self, l: int, s, i: int) -> int:
        if l not in (1, 2) or i not in (1, 2):
            raise ConfigError(f"polarization l and component i must be 1 or 2, got l={l}, i={i}")
        return 4 * self.modes.prime_index(tuple(s)) + 2 * (l - 1) + (i - 1)


@dataclass
class StateVector:
    """Complex coefficient vector over a product basis, norm cached."""

    coefficients: np.ndarray
    basis: Optional[object] = None

    def __post_init__(self):
        self.coefficients = np.asarray(self.coefficients, dtype=complex)
        if self.coefficients.ndim != 1:
            raise ConfigError("state coefficients must be one-dimensional")
        self._norm = float(np.linalg.norm(self.coefficients))
        if not math.isfinite(self._norm):
            raise ConfigError("state norm is not finite")

    @property
    def norm(self) -> float:
        return self._norm

    def inner(self, other: "StateVector") -> complex:
        return complex(np.vdot(self.coefficients, other.coefficients))

    def normalized(self) -> "StateVector":
        if self._norm == 0.0:
            raise ConfigError("cannot normalize the zero state")
        return StateVector(self.coefficients / self._norm, self.basis)

    def to_csv(self, path) -> None:
        lines = ["index,real,imag"]
        for idx, val in enumerate(self.coefficients):
            lines.append(f"{idx},{val.real:.17g},{val.imag:.17g}")
        with open(path, "w", encoding="utf-8", newline="\n") as handle:
            handle.write("\n".join(lines) + "\n")


@dataclass
class OperatorMatrix:
    """Sparse complex operator with an optional hermiticity certificate."""

    matrix: sparse.spmatrix
    hermitian: bool = False

    def __post_init__(self):
        self.matrix = sparse.csr_matrix(self.matrix, dtype=complex)
        if self.matrix.shape[0] != self.matrix.shape[1]:
            raise ConfigError("operator matrices must be square")
        if self.hermitian:
            self.check_hermitian(1e-12)

    def check_hermitian(self, tol: float) -> None:
        diff = (self.matrix - self.matrix.getH()).tocoo()
        drift = float(np.max(np.abs(diff.data))) if diff.nnz else 0.0
        scale = float(np.max(np.abs(self.matrix.data))) if self.matrix.nnz else 1.0
        if drift > tol * max(1.0, scale):
            raise InvariantViolation(
                f"operator flagged hermitian drifts by {drift:.3e}"
            )

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]

    def adjoint(self) -> "OperatorMatrix":
        return OperatorMatrix(self.matrix.getH(), hermitian=self.hermitian)

    def apply(self, state: StateVector) -> StateVector:
        return StateVector(self.matrix @ state.coefficients, state.basis)

    def sparsity_stats(self) -> dict:
        nnz = int(self.matrix.nnz)
        return {
            "dim": self.dim,
            "nnz": nnz,
            "density": nnz / float(self.dim) ** 2 if self.dim else 0.0,
            "hermitian": self.hermitian,
        }


def _single_ladder(cap: int) -> sparse.csr_matrix:
    return sparse.diags(np.sqrt(np.arange(1.0, cap + 1)), offsets=1,
                        shape=(cap + 1, cap + 1), format="csr", dtype=complex)


def _embed(op: sparse.spmatrix, var: int, basis: OscillatorBasis) -> sparse.csr_matrix:
    radix = basis.cap + 1
    left = sparse.identity(radix ** var, format="csr", dtype=complex)
    right = sparse.identity(radix ** (basis.n_vars - 1 - var), format="csr",
                            dtype=complex)
    return sparse.kron(sparse.kron(left, op, format="csr"), right, format="csr")


def ladder_ops(variable, basis: OscillatorBasis) -> tuple:
    """Annihilator and creator for one real field variable (l, k, i).

    In the Hermite eigenbasis of the (1/|V|-mass, c|k|-frequency) oscillator
    these act as sqrt(n) step matrices; the creator annihilates the cap state
    (truncation boundary).
    """
    l, k, i = variable
    s = tuple(k.s) if isinstance(k, WaveVector) else tuple(k)
    if not basis.modes.contains_prime(s):
        raise ConfigError(f"mode {s} is not in the halved mode set")
    var = basis.variable_offset(l, s, i)
    down = _embed(_single_ladder(basis.cap), var, basis)
    return (OperatorMatrix(down), OperatorMatrix(down.getH()))


def _resolve_mode(basis: OscillatorBasis, k):
    s = tuple(k.s) if isinstance(k, WaveVector) else tuple(int(v) for v in k)
    if s == (0, 0, 0):
        raise ConfigError("zero mode has no ladder operators")
    if basis.modes.contains_prime(s):
        return s, +1.0
    neg = tuple(-v for v in s)
    if basis.modes.contains_prime(neg):
        return neg, -1.0
    raise ConfigError(f"mode {s} is outside the basis mode set")


def complex_modes(l: int, k, basis: OscillatorBasis) -> tuple:
    """Annihilator/creator pair for a full-lattice mode.

    For k in Lambda' the annihilator is (a1 - i a2)/sqrt(2); extending to -k
    flips the sign of the a1 part and keeps a2, mirroring the coordinate
    parity rules.
    """
    s, sign = _resolve_mode(basis, k)
    a1, _ = ladder_ops((l, s, 1), basis)
    a2, _ = ladder_ops((l, s, 2), basis)
    down = (sign * a1.matrix - 1j * a2.matrix) / math.sqrt(2.0)
    return (OperatorMatrix(down), OperatorMatrix(down.getH()))


def vacuum(basis: OscillatorBasis) -> StateVector:
    """All-zeros occupation state, the product Gaussian ground state."""
    coeffs = np.zeros(basis.dim, dtype=complex)
    coeffs[0] = 1.0
    return StateVector(coeffs, basis)


def photon_state(occupations: dict, basis: OscillatorBasis) -> StateVector:
    """Normalized multi-photon state prod (creator^n / sqrt(n!)) vacuum.

    Keys are (l, k) with k anywhere on the full lattice.  Because the +-k
    creators act on one shared pair of real variables, the per-(l, k-pair)
    total occupation must stay within the cap for the truncation to be exact.
    """
    cleaned = {}
    for (l, k), count in occupations.items():
        s = tuple(k.s) if isinstance(k, WaveVector) else tuple(int(v) for v in k)
        count = int(count)
        if count < 0:
            raise ConfigError("photon occupations must be nonnegative")
        if count:
            cleaned[(l, s)] = cleaned.get((l, s), 0) + count
    pair_totals: dict = {}
    for (l, s), count in cleaned.items():
        rep, _ = _resolve_mode(basis, s)
        pair_totals[(l, rep)] = pair_totals.get((l, rep), 0) + count
    for (l, rep), total in pair_totals.items():
        if total > basis.cap:
            raise ConfigError(
                f"occupation {total} on the (l={l}, k-pair {rep}) sector "
                f"exceeds the cap {basis.cap}"
            )
    state = vacuum(basis)
    norm_factor = 1.0
    for (l, s), count in sorted(cleaned.items()):
        _, creator = complex_modes(l, s, basis)
        for _ in range(count):
            state = creator.apply(state)
        norm_factor *= math.factorial(count)
    return StateVector(state.coefficients / math.sqrt(norm_factor), basis)


def number_op(basis: OscillatorBasis) -> OperatorMatrix:
    """Total photon number: diagonal sum of all variable occupations."""
    diag = basis.occupation_table().sum(axis=1).astype(float)
    return OperatorMatrix(sparse.diags(diag, format="csr", dtype=complex),
                          hermitian=True)


def momentum_op(basis: OscillatorBasis) -> tuple:
    """Field momentum components sum over Lambda of hbar k (creator, annihilator)."""
    accum = [sparse.csr_matrix((basis.dim, basis.dim), dtype=complex)
             for _ in range(3)]
    for wv in basis.modes.lam:
        for l in (1, 2):
            down, up = complex_modes(l, wv, basis)
            counter = up.matrix @ down.matrix
            for c in range(3):
                accum[c] = accum[c] + basis.hbar * wv.k[c] * counter
    return tuple(OperatorMatrix(m, hermitian=True) for m in accum)


def h_rad(basis: OscillatorBasis) -> OperatorMatrix:
    """Radiation Hamiltonian sum over Lambda of hbar c |k| creator-annihilator.

    Diagonal in the occupation basis with entry sum_v n_v hbar c |k_v|; the
    zero-point subtraction built into the quadratic potential makes the
    ground eigenvalue exactly 0.
    """
    weights = basis.hbar * basis.omegas()
    diag = basis.occupation_table() @ weights
    return OperatorMatrix(sparse.diags(diag, format="csr", dtype=complex),
                          hermitian=True)


def _psi_variable_matrix(basis: OscillatorBasis, var: int, psi,
                         order: int = 80) -> np.ndarray:
    """Matrix of the multiplication operator psi(a) on one variable's levels."""
    lam = basis.lambdas()[var]
    nodes, weights = np.polynomial.hermite.hermgauss(order)
    levels = np.zeros((basis.cap + 1, order))
    levels[0] = math.pi ** -0.25
    if basis.cap >= 1:
        levels[1] = math.sqrt(2.0) * nodes * levels[0]
    for n in range(1, basis.cap):
        levels[n + 1] = (math.sqrt(2.0 / (n + 1)) * nodes * levels[n]
                         - math.sqrt(n / (n + 1.0)) * levels[n - 1])
    psi_vals = np.asarray(psi(nodes / lam), dtype=float)
    return (levels * weights * psi_vals) @ levels.T


def _plane_wave_set(cutoff: int) -> np.ndarray:
    rng = range(-cutoff, cutoff + 1)
    return np.array([(a, b, c) for a in rng for b in rng for c in rng], dtype=int)


def _shift_matrices(waves: np.ndarray, s) -> tuple:
    """Hermitian cos/sin multiplication operators on the truncated wave set."""
    lookup = {tuple(m): idx for idx, m in enumerate(waves)}
    W = len(waves)
    rows, cols = [], []
    for idx, m in enumerate(waves):
        target = lookup.get((m[0] + s[0], m[1] + s[1], m[2] + s[2]))
        if target is not None:
            rows.append(target)
            cols.append(idx)
    plus = sparse.csr_matrix((np.ones(len(rows)), (rows, cols)), shape=(W, W),
                             dtype=complex)
    minus = plus.T.tocsr()
    return (plus + minus) / 2.0, (plus - minus) / 2.0j


def _check_flat_g(ctx: ModelContext) -> None:
    box = np.asarray(ctx.config.L)
    corners = 0.5 * box * np.array(
        [(sx, sy, sz) for sx in (-1, 1) for sy in (-1, 1) for sz in (-1, 1)])
    drift = max(abs(ctx.mollifiers.g(c) - 1.0) for c in corners)
    if drift > 1e-8:
        raise ConfigError(
            "the spectral particle representation needs an effectively flat "
            f"spatial cutoff; g drifts by {drift:.3e} over the box "
            f"(width_g={ctx.mollifiers.width_g:g})"
        )


def _grid_momentum(config: SimulationConfig, grid_points: int) -> tuple:
    """Spectral momentum matrices and flattened grid coordinates."""
    G = grid_points
    axes, mom1d = [], []
    for axis in range(3):
        length = config.L[axis]
        axes.append(-0.5 * length + length * np.arange(G) / G)
        F = dft(G, scale="sqrtn")
        freqs = np.fft.fftfreq(G, d=1.0 / G)
        p_diag = config.hbar * 2.0 * math.pi * freqs / length
        mom1d.append(F.conj().T @ np.diag(p_diag) @ F)
    eye = sparse.identity(G, format="csr", dtype=complex)
    P = [
        sparse.kron(sparse.kron(sparse.csr_matrix(mom1d[0]), eye), eye, format="csr"),
        sparse.kron(sparse.kron(eye, sparse.csr_matrix(mom1d[1])), eye, format="csr"),
        sparse.kron(sparse.kron(eye, eye, format="csr"), sparse.csr_matrix(mom1d[2]),
                    format="csr"),
    ]
    mesh = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, 3)
    return P, mesh


def _coupled_field_factors(basis: OscillatorBasis, ctx: ModelContext) -> list:
    """Per coupling-mode data: (wave vector, e-vectors, psi matrices)."""
    out = []
    for pos, wv in enumerate(ctx.modes2.lam_prime):
        k_idx = int(ctx.prime2_in_3[pos])
        evecs = ctx.frame.e(wv)
        psi_ops = {}
        for l in (1, 2):
            for i in (1, 2):
                var = 4 * k_idx + 2 * (l - 1) + (i - 1)
                psi_ops[(l, i)] = _embed(
                    sparse.csr_matrix(_psi_variable_matrix(basis, var,
                                                           ctx.mollifiers.psi)),
                    var, basis)
        out.append((wv, evecs, psi_ops))
    return out


def assemble_hamiltonian(config: SimulationConfig, basis: OscillatorBasis,
                         particle_rep: str = "planewave",
                         ctx: Optional[ModelContext] = None,
                         plane_cutoff: int = 1, grid_points: int = 6,
                         wave_indices=None) -> OperatorMatrix:
    """Full Hamiltonian on the field basis tensor a truncated particle basis.

    Minimal coupling squared, the Coulomb term, and the radiation part; the
    combined index is field-major (kron(field, particle)).  The spectral
    plane-wave representation needs the spatial cutoff g to be flat over the
    box; the grid representation applies g pointwise instead.  Coupled
    assembly handles a single charged particle; any particle count works when
    every charge vanishes.
    """
    if particle_rep not in ("planewave", "grid"):
        raise ConfigError(f"unknown particle representation {particle_rep!r}")
    if ctx is None:
        ctx = ModelContext.custom(config, basis.modes, basis.modes, basis.modes)
    if (basis.hbar, basis.c_light) != (config.hbar, config.c_light) \
            or abs(basis.volume - config.volume) > 1e-12 * config.volume:
        raise ConfigError("basis constants disagree with the configuration")
    n = config.n_particles
    rad = h_rad(basis).matrix
    if n == 0:
        return OperatorMatrix(rad, hermitian=True)

    charges = np.asarray(config.charges, dtype=float)
    masses = np.asarray(config.masses, dtype=float)

    if not np.any(charges != 0.0):
        if particle_rep == "planewave":
            waves = _plane_wave_set(plane_cutoff) if wave_indices is None \
                else np.asarray(wave_indices, dtype=int)
            p_sq = np.sum((config.hbar * 2.0 * math.pi * waves
                           / np.asarray(config.L)) ** 2, axis=1)
            blocks = [sparse.diags(p_sq / (2.0 * masses[j]), format="csr",
                                   dtype=complex) for j in range(n)]
        else:
            if n != 1:
                raise ConfigError("the grid representation handles one particle")
            P, _ = _grid_momentum(config, grid_points)
            blocks = [(P[0] @ P[0] + P[1] @ P[1] + P[2] @ P[2]) / (2.0 * masses[0])]
        kinetic = blocks[0]
        for block in blocks[1:]:
            kinetic = sparse.kron(kinetic,
                                  sparse.identity(block.shape[0], dtype=complex),
                                  format="csr") \
                + sparse.kron(sparse.identity(kinetic.shape[0], dtype=complex),
                              block, format="csr")
        part_dim = kinetic.shape[0]
        if basis.dim * part_dim > _MAX_DIM:
            raise BudgetError("combined basis exceeds the workable dimension")
        total = sparse.kron(rad, sparse.identity(part_dim, dtype=complex),
                            format="csr") \
            + sparse.kron(sparse.identity(basis.dim, dtype=complex), kinetic,
                          format="csr")
        matrix = total
    else:
        if n != 1:
            raise ConfigError(
                "coupled assembly supports exactly one charged particle"
            )
        e = float(charges[0])
        m = float(masses[0])
        pref = math.sqrt(8.0 * math.pi) * config.c_light / config.volume
        factors = _coupled_field_factors(basis, ctx)

        if particle_rep == "planewave":
            _check_flat_g(ctx)
            waves = _plane_wave_set(plane_cutoff) if wave_indices is None \
                else np.asarray(wave_indices, dtype=int)
            W = len(waves)
            p_vals = config.hbar * 2.0 * math.pi * waves / np.asarray(config.L)
            kinetic = sparse.diags(np.sum(p_vals ** 2, axis=1) / (2.0 * m),
                                   format="csr", dtype=complex)
            p_diags = [sparse.diags(p_vals[:, c], format="csr", dtype=complex)
                       for c in range(3)]
            A = [sparse.csr_matrix((basis.dim * W, basis.dim * W), dtype=complex)
                 for _ in range(3)]
            for wv, evecs, psi_ops in factors:
                cos_op, sin_op = _shift_matrices(waves, wv.s)
                for l in (1, 2):
                    block = sparse.kron(psi_ops[(l, 1)], cos_op, format="csr") \
                        + sparse.kron(psi_ops[(l, 2)], sin_op, format="csr")
                    for c in range(3):
                        weight = pref * evecs[l - 1][c]
                        if weight != 0.0:
                            A[c] = A[c] + weight * block
            P = [sparse.kron(sparse.identity(basis.dim, dtype=complex), p,
                             format="csr") for p in p_diags]
            part_dim = W
        else:
            Pgrid, mesh = _grid_momentum(config, grid_points)
            envelope = np.array([ctx.mollifiers.g(x) for x in mesh])
            kinetic = (Pgrid[0] @ Pgrid[0] + Pgrid[1] @ Pgrid[1]
                       + Pgrid[2] @ Pgrid[2]) / (2.0 * m)
            A = [sparse.csr_matrix((basis.dim * len(mesh), basis.dim * len(mesh)),
                                   dtype=complex) for _ in range(3)]
            for wv, evecs, psi_ops in factors:
                angles = mesh @ np.asarray(wv.k)
                cos_op = sparse.diags(envelope * np.cos(angles), dtype=complex)
                sin_op = sparse.diags(envelope * np.sin(angles), dtype=complex)
                for l in (1, 2):
                    block = sparse.kron(psi_ops[(l, 1)], cos_op, format="csr") \
                        + sparse.kron(psi_ops[(l, 2)], sin_op, format="csr")
                    for c in range(3):
                        weight = pref * evecs[l - 1][c]
                        if weight != 0.0:
                            A[c] = A[c] + weight * block
            P = [sparse.kron(sparse.identity(basis.dim, dtype=complex), p,
                             format="csr") for p in Pgrid]
            part_dim = len(mesh)

        if basis.dim * part_dim > _MAX_DIM:
            raise BudgetError("combined basis exceeds the workable dimension")
        eye_part = sparse.identity(part_dim, dtype=complex)
        matrix = sparse.kron(rad, eye_part, format="csr") \
            + sparse.kron(sparse.identity(basis.dim, dtype=complex), kinetic,
                          format="csr")
        coupling = sparse.csr_matrix((basis.dim * part_dim,) * 2, dtype=complex)
        quadratic = sparse.csr_matrix((basis.dim * part_dim,) * 2, dtype=complex)
        for c in range(3):
            coupling = coupling + P[c] @ A[c] + A[c] @ P[c]
            quadratic = quadratic + A[c] @ A[c]
        matrix = matrix - e / (2.0 * m * config.c_light) * coupling \
            + e * e / (2.0 * m * config.c_light ** 2) * quadratic

    out = OperatorMatrix(matrix, hermitian=False)
    out.check_hermitian(1e-8)
    out.hermitian = True
    return out


def reference_evolve(H: OperatorMatrix, state: StateVector, t: float,
                     hbar: float = 1.0) -> StateVector:
    """Exact truncated-basis evolution exp(-i H t / hbar) applied to a state.

    Dense eigendecomposition for small dimensions, Krylov matrix exponential
    otherwise; both are unitary well past the 1e-10 requirement.
    """
    if not H.hermitian:
        raise ConfigError("reference evolution needs a hermitian generator")
    if H.dim != len(state.coefficients):
        raise ConfigError("operator and state dimensions disagree")
    if H.dim <= 1500:
        dense = H.matrix.toarray()
        vals, vecs = eigh(dense)
        phases = np.exp(-1j * vals * t / hbar)
        coeffs = vecs @ (phases * (vecs.conj().T @ state.coefficients))
    else:
        coeffs = expm_multiply(-1j * t / hbar * H.matrix, state.coefficients)
    return StateVector(coeffs, state.basis)
