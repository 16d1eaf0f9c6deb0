"""Field coordinates on the halved mode set, reconstructed vector potentials, and V2.

The independent field variables are the 4N reals a[l, k, i] with polarization
l in {1,2}, k in Lambda' (one representative per +-k pair), and quadrature
index i in {1,2} (cosine and sine components).  The full coefficient family
over Lambda follows from the parity rules a1(-k) = -a1(k), a2(-k) = +a2(k),
which make the reconstructed potential real.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError
from .lattice import (
    ModeSet,
    PolarizationFrame,
    SimulationConfig,
    build_mode_set,
    build_polarization,
)


@dataclass
class FieldVector:
    """The 4N independent field coordinates, flat with a documented index map.

    Flat offset of variable (l, k, i) is 4*k_index + 2*(l-1) + (i-1), where
    k_index enumerates Lambda' in its stored (sorted) order.  ``grid`` exposes
    the same storage reshaped to (N, 2, 2) with axes (k, l-1, i-1).
    """

    values: np.ndarray
    modes: ModeSet

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != (4 * self.modes.N,):
            raise ConfigError(
                f"field vector needs length {4 * self.modes.N}, got {self.values.shape}"
            )

    @classmethod
    def zeros(cls, modes: ModeSet) -> "FieldVector":
        return cls(np.zeros(4 * modes.N), modes)

    @classmethod
    def from_entries(cls, modes: ModeSet, entries: dict) -> "FieldVector":
        vec = cls.zeros(modes)
        for (l, s, i), value in entries.items():
            vec.values[vec.offset(l, s, i)] = value
        return vec

    @property
    def grid(self) -> np.ndarray:
        return self.values.reshape(self.modes.N, 2, 2)

    def offset(self, l: int, s: tuple, i: int) -> int:
        if l not in (1, 2) or i not in (1, 2):
            raise ConfigError(f"polarization l and component i must be 1 or 2, got l={l}, i={i}")
        return 4 * self.modes.prime_index(tuple(s)) + 2 * (l - 1) + (i - 1)

    def entry(self, l: int, s: tuple, i: int) -> float:
        return float(self.values[self.offset(l, s, i)])

    def to_csv(self, path) -> None:
        lines = ["index,l,s1,s2,s3,i,value"]
        for idx, wv in enumerate(self.modes.lam_prime):
            for l in (1, 2):
                for i in (1, 2):
                    offset = 4 * idx + 2 * (l - 1) + (i - 1)
                    lines.append(
                        f"{offset},{l},{wv.s[0]},{wv.s[1]},{wv.s[2]},{i},"
                        + "%.17g" % self.values[offset]
                    )
        with open(path, "w", encoding="utf-8", newline="\n") as handle:
            handle.write("\n".join(lines) + "\n")


@dataclass(frozen=True)
class MollifierPair:
    """Odd amplitude damping psi and radial spatial cutoff g, with derivatives.

    The defaults are psi(t) = sigma*tanh(t/sigma), which is odd with all
    derivatives decaying and close to the identity for |t| << sigma, and
    g(x) = exp(-|x|^2/(2 w^2)) with g(0) = 1.
    """

    psi: object
    psi_prime: object
    g: object
    g_grad: object
    sigma_psi: float
    width_g: float

    @classmethod
    def defaults(cls, config: SimulationConfig) -> "MollifierPair":
        sigma = config.sigma_psi
        width = config.width_g

        def psi(theta):
            return sigma * np.tanh(np.asarray(theta, dtype=float) / sigma)

        def psi_prime(theta):
            t = np.tanh(np.asarray(theta, dtype=float) / sigma)
            return 1.0 - t * t

        def g(x):
            x = np.asarray(x, dtype=float)
            return float(np.exp(-np.dot(x, x) / (2.0 * width * width)))

        def g_grad(x):
            x = np.asarray(x, dtype=float)
            return (-x / (width * width)) * g(x)

        return cls(psi=psi, psi_prime=psi_prime, g=g, g_grad=g_grad,
                   sigma_psi=sigma, width_g=width)

    def check_oddness(self, samples) -> float:
        worst = 0.0
        for theta in samples:
            worst = max(worst, abs(float(self.psi(theta)) + float(self.psi(-theta))))
        return worst


@dataclass(frozen=True)
class ModelContext:
    """Everything the action and propagator need: mode sets, frame, mollifiers.

    modes1 drives V1, modes2 the coupled potential, modes3 the field state
    space.  Lambda'_2 must be contained in Lambda'_3; ``prime2_in_3`` maps each
    Lambda'_2 index to its slot in the Lambda'_3 enumeration.
    """

    config: SimulationConfig
    modes1: ModeSet
    modes2: ModeSet
    modes3: ModeSet
    frame: PolarizationFrame
    mollifiers: MollifierPair
    prime2_in_3: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        mapping = []
        for wv in self.modes2.lam_prime:
            if not self.modes3.contains_prime(wv.s):
                raise ConfigError(
                    f"Lambda'_2 member {wv.s} is missing from Lambda'_3; "
                    "the coupling modes must be a subset of the field modes"
                )
            mapping.append(self.modes3.prime_index(wv.s))
        object.__setattr__(self, "prime2_in_3", np.asarray(mapping, dtype=np.intp))

    @classmethod
    def from_config(cls, config: SimulationConfig) -> "ModelContext":
        modes1 = build_mode_set(config, 1)
        modes2 = build_mode_set(config, 2)
        modes3 = build_mode_set(config, 3)
        return cls(
            config=config,
            modes1=modes1,
            modes2=modes2,
            modes3=modes3,
            frame=build_polarization(modes3),
            mollifiers=MollifierPair.defaults(config),
        )

    @classmethod
    def custom(cls, config: SimulationConfig, modes1: ModeSet, modes2: ModeSet,
               modes3: ModeSet, mollifiers: MollifierPair | None = None) -> "ModelContext":
        """Build a context from hand-picked mode sets (desk-scale studies)."""
        return cls(
            config=config,
            modes1=modes1,
            modes2=modes2,
            modes3=modes3,
            frame=build_polarization(modes3),
            mollifiers=mollifiers or MollifierPair.defaults(config),
        )

    @property
    def n_field(self) -> int:
        return 4 * self.modes3.N

    def field_frequencies(self) -> np.ndarray:
        """Angular frequency c|k| per flat field variable (length 4N)."""
        omega = np.array([self.config.c_light * wv.norm for wv in self.modes3.lam_prime])
        return np.repeat(omega, 4)


def extend_parity(a: FieldVector) -> dict:
    """Full coefficient map over Lambda from the independent Lambda' variables.

    Keys are (l, s, i); a1 flips sign under k -> -k while a2 keeps it.
    """
    full: dict = {}
    for idx, wv in enumerate(a.modes.lam_prime):
        neg = wv.negated().s
        for l in (1, 2):
            a1 = a.grid[idx, l - 1, 0]
            a2 = a.grid[idx, l - 1, 1]
            full[(l, wv.s, 1)] = a1
            full[(l, wv.s, 2)] = a2
            full[(l, neg, 1)] = -a1
            full[(l, neg, 2)] = a2
    return full


def _mode_arrays(modes: ModeSet, frame: PolarizationFrame):
    K = np.array([wv.k for wv in modes.lam_prime]).reshape(-1, 3)
    E = np.array([frame.e(wv) for wv in modes.lam_prime]).reshape(-1, 2, 3)
    return K, E


def reconstruct_A(x, a: FieldVector, modes: ModeSet, frame: PolarizationFrame,
                  config: SimulationConfig) -> np.ndarray:
    """The transverse vector potential A(x) from the independent coordinates.

    Computed as the halved sum with the parity doubling factor; each k in
    Lambda' contributes twice the (1/sqrt(2)) (a1 cos + a2 sin) e_l term of the
    full Lambda sum.
    """
    if modes.N == 0:
        return np.zeros(3)
    x = np.asarray(x, dtype=float)
    K, E = _mode_arrays(modes, frame)
    idx = np.array([a.modes.prime_index(wv.s) for wv in modes.lam_prime], dtype=np.intp)
    coeff = a.grid[idx]                                    # (N2, 2, 2)
    kx = K @ x
    weights = coeff[:, :, 0] * np.cos(kx)[:, None] + coeff[:, :, 1] * np.sin(kx)[:, None]
    pref = math.sqrt(4.0 * math.pi) * config.c_light / config.volume * math.sqrt(2.0)
    return pref * np.einsum("nl,nlm->m", weights, E)


def reconstruct_tilde_A(x, a: FieldVector, modes: ModeSet, frame: PolarizationFrame,
                        mollifiers: MollifierPair, config: SimulationConfig) -> np.ndarray:
    """The mollified potential: psi applied coordinatewise, global factor g(x)."""
    value, _, _ = tilde_A_with_derivatives(
        x, a, modes, frame, mollifiers, config, need_x=False, need_a=False
    )
    return value


def tilde_A_with_derivatives(x, a: FieldVector, modes: ModeSet, frame: PolarizationFrame,
                             mollifiers: MollifierPair, config: SimulationConfig,
                             need_x: bool = True, need_a: bool = True):
    """Mollified potential with optional gradients.

    Returns (value, grad_x, grad_a) where grad_x[m, l] = d(tilde_A_l)/dx_m and
    grad_a[m, v] = d(tilde_A_m)/da_v on the flat Lambda'_3 layout of ``a``.
    Entries not requested come back as None.
    """
    x = np.asarray(x, dtype=float)
    n_flat = 4 * a.modes.N
    if modes.N == 0:
        zeros3 = np.zeros(3)
        return (
            zeros3,
            np.zeros((3, 3)) if need_x else None,
            np.zeros((3, n_flat)) if need_a else None,
        )
    K, E = _mode_arrays(modes, frame)
    idx = np.array([a.modes.prime_index(wv.s) for wv in modes.lam_prime], dtype=np.intp)
    coeff = a.grid[idx]                                    # (N2, 2, 2)
    psi_vals = mollifiers.psi(coeff)
    kx = K @ x
    cos_kx = np.cos(kx)
    sin_kx = np.sin(kx)
    pref = math.sqrt(4.0 * math.pi) * config.c_light / config.volume * math.sqrt(2.0)
    g_val = mollifiers.g(x)

    weights = psi_vals[:, :, 0] * cos_kx[:, None] + psi_vals[:, :, 1] * sin_kx[:, None]
    raw = np.einsum("nl,nlm->m", weights, E)               # before g and pref
    value = pref * g_val * raw

    grad_x = None
    if need_x:
        dweights = -psi_vals[:, :, 0] * sin_kx[:, None] + psi_vals[:, :, 1] * cos_kx[:, None]
        osc = np.einsum("nj,nl,nlm->jm", K, dweights, E)   # d(raw_m)/dx_j at fixed g
        grad_x = pref * (np.outer(mollifiers.g_grad(x), raw) + g_val * osc)

    grad_a = None
    if need_a:
        grad_a = np.zeros((3, n_flat))
        psi_d = mollifiers.psi_prime(coeff)                # (N2, 2, 2)
        trig = np.stack([cos_kx, sin_kx], axis=-1)         # (N2, 2)
        per_var = psi_d * trig[:, None, :]                 # (N2, 2, 2) for (k, l, i)
        flat_cols = (4 * idx[:, None, None]
                     + 2 * np.arange(2)[None, :, None]
                     + np.arange(2)[None, None, :])
        contrib = pref * g_val * np.einsum("nli,nlm->mnli", per_var, E)
        grad_a[:, flat_cols.ravel()] = contrib.reshape(3, -1)

    return value, grad_x, grad_a


def potential_V2(a: FieldVector, modes: ModeSet, config: SimulationConfig) -> float:
    """Quadratic field potential with the ground-energy subtraction.

    Sum over (k in Lambda', i, l) of (c|k|)^2 a^2 / (2|V|) - hbar c |k| / 2;
    the subtraction makes the field ground-state energy exactly zero.
    """
    if modes is not a.modes and [wv.s for wv in modes.lam_prime] != [
        wv.s for wv in a.modes.lam_prime
    ]:
        raise ConfigError("potential_V2 expects the field vector on the same Lambda'_3")
    c = config.c_light
    hbar = config.hbar
    vol = config.volume
    terms = []
    grid = a.grid
    for idx, wv in enumerate(modes.lam_prime):
        knorm = wv.norm
        quad = (c * knorm) ** 2 / (2.0 * vol) * float(np.sum(grid[idx] ** 2))
        terms.append(quad - 2.0 * hbar * c * knorm)
    return math.fsum(terms)


def v2_gradient(a: FieldVector, config: SimulationConfig) -> np.ndarray:
    """dV2/da per flat variable: (c|k|)^2 a / |V|."""
    omega_sq = np.array([(config.c_light * wv.norm) ** 2 for wv in a.modes.lam_prime])
    return np.repeat(omega_sq, 4) * a.values / config.volume
