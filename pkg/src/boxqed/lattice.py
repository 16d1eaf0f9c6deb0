"""Reciprocal-lattice mode sets and transverse polarization frames on a periodic box.

The box is V = [-L1/2, L1/2] x [-L2/2, L2/2] x [-L3/2, L3/2].  Wave vectors are
k = 2*pi*(s1/L1, s2/L2, s3/L3) with integer s and s != 0.  A mode set Lambda keeps
every such k with |s_i| <= M; its halving Lambda' keeps one representative per
{k, -k} pair.  All arithmetic is carried in the integers s, and k is derived on
demand, so set membership is exact.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError

TWO_PI = 2.0 * math.pi

_CONFIG_KEYS = {
    "L1", "L2", "L3", "M1", "M2", "M3", "hbar", "c", "n_particles",
    "masses", "charges", "sigma_psi", "width_g", "n_max", "particle_cap",
    "epsilon_reg",
}


@dataclass(frozen=True)
class SimulationConfig:
    """Box geometry, cutoffs, physical constants, mollifier and truncation knobs.

    ``L`` are the box edge lengths, ``M`` the three integer mode cutoffs with
    M2 <= M3.  ``n_max`` caps the occupation number per field variable and
    ``particle_cap`` is the half-width of the plane-wave index grid per axis.
    ``epsilon_reg`` sets the default damping scale for oscillatory integrals.
    """

    L: tuple[float, float, float] = (TWO_PI, TWO_PI, TWO_PI)
    M: tuple[int, int, int] = (1, 1, 1)
    hbar: float = 1.0
    c_light: float = 1.0
    n_particles: int = 0
    masses: tuple[float, ...] = ()
    charges: tuple[float, ...] = ()
    sigma_psi: float = 50.0
    width_g: float = 1.0e6
    n_max: int = 4
    particle_cap: int = 3
    epsilon_reg: float = 0.1

    def __post_init__(self):
        self.validate()

    @property
    def volume(self) -> float:
        return self.L[0] * self.L[1] * self.L[2]

    def validate(self) -> None:
        if len(self.L) != 3 or any(not (length > 0.0) for length in self.L):
            raise ConfigError("box lengths L must be three positive reals")
        if len(self.M) != 3 or any(int(m) != m or m < 1 for m in self.M):
            raise ConfigError("cutoffs M must be three positive integers")
        if self.M[1] > self.M[2]:
            raise ConfigError(
                f"cutoff constraint M2 <= M3 violated: M2={self.M[1]}, M3={self.M[2]}"
            )
        if self.hbar <= 0.0 or self.c_light <= 0.0:
            raise ConfigError("hbar and c must be positive")
        if self.n_particles < 0:
            raise ConfigError("n_particles must be non-negative")
        if len(self.masses) != self.n_particles or len(self.charges) != self.n_particles:
            raise ConfigError(
                "masses and charges must each have length n_particles "
                f"(got {len(self.masses)}, {len(self.charges)} for n={self.n_particles})"
            )
        if any(m <= 0.0 for m in self.masses):
            raise ConfigError("particle masses must be positive")
        if self.sigma_psi <= 0.0 or self.width_g <= 0.0:
            raise ConfigError("mollifier parameters sigma_psi and width_g must be positive")
        if self.n_max < 0:
            raise ConfigError("occupation cap n_max must be non-negative")
        if self.particle_cap < 0:
            raise ConfigError("particle_cap must be non-negative")
        if self.epsilon_reg <= 0.0:
            raise ConfigError("epsilon_reg must be positive")

    @classmethod
    def from_file(cls, path) -> "SimulationConfig":
        """Read a plain-text ``key = value`` configuration file.

        Lines starting with ``#`` and blank lines are ignored.  List-valued
        keys (masses, charges) take comma-separated numbers.
        """
        raw: dict[str, str] = {}
        with open(path, "r", encoding="utf-8") as handle:
            for lineno, line in enumerate(handle, start=1):
                stripped = line.strip()
                if not stripped or stripped.startswith("#"):
                    continue
                if "=" not in stripped:
                    raise ConfigError(f"{path}:{lineno}: expected key = value, got {stripped!r}")
                key, _, value = stripped.partition("=")
                key = key.strip()
                if key not in _CONFIG_KEYS:
                    raise ConfigError(f"{path}:{lineno}: unknown key {key!r}")
                raw[key] = value.strip()
        return cls.from_mapping(raw)

    @classmethod
    def from_mapping(cls, raw: dict) -> "SimulationConfig":
        defaults = cls()

        def _float(key, current):
            return float(raw[key]) if key in raw else current

        def _int(key, current):
            return int(raw[key]) if key in raw else current

        def _seq(key, current):
            if key not in raw:
                return current
            text = str(raw[key]).strip()
            if not text:
                return ()
            return tuple(float(tok) for tok in text.split(","))

        try:
            return cls(
                L=(
                    _float("L1", defaults.L[0]),
                    _float("L2", defaults.L[1]),
                    _float("L3", defaults.L[2]),
                ),
                M=(
                    _int("M1", defaults.M[0]),
                    _int("M2", defaults.M[1]),
                    _int("M3", defaults.M[2]),
                ),
                hbar=_float("hbar", defaults.hbar),
                c_light=_float("c", defaults.c_light),
                n_particles=_int("n_particles", defaults.n_particles),
                masses=_seq("masses", defaults.masses),
                charges=_seq("charges", defaults.charges),
                sigma_psi=_float("sigma_psi", defaults.sigma_psi),
                width_g=_float("width_g", defaults.width_g),
                n_max=_int("n_max", defaults.n_max),
                particle_cap=_int("particle_cap", defaults.particle_cap),
                epsilon_reg=_float("epsilon_reg", defaults.epsilon_reg),
            )
        except ValueError as exc:
            raise ConfigError(f"malformed configuration value: {exc}") from exc

    def as_dict(self) -> dict:
        return {
            "L1": self.L[0], "L2": self.L[1], "L3": self.L[2],
            "M1": self.M[0], "M2": self.M[1], "M3": self.M[2],
            "hbar": self.hbar, "c": self.c_light,
            "n_particles": self.n_particles,
            "masses": ",".join("%.17g" % m for m in self.masses),
            "charges": ",".join("%.17g" % e for e in self.charges),
            "sigma_psi": self.sigma_psi, "width_g": self.width_g,
            "n_max": self.n_max, "particle_cap": self.particle_cap,
            "epsilon_reg": self.epsilon_reg,
        }


@dataclass(frozen=True)
class WaveVector:
    """A reciprocal-lattice point, stored as its integer triple s.

    ``k`` is recomputed from s and the box lengths on every access, so it is
    exactly reproducible and never accumulates drift.
    """

    s: tuple[int, int, int]
    L: tuple[float, float, float]

    @property
    def k(self) -> np.ndarray:
        return np.array([TWO_PI * self.s[i] / self.L[i] for i in range(3)])

    @property
    def norm(self) -> float:
        k = self.k
        return math.sqrt(k[0] ** 2 + k[1] ** 2 + k[2] ** 2)

    def negated(self) -> "WaveVector":
        return WaveVector((-self.s[0], -self.s[1], -self.s[2]), self.L)

    def is_zero(self) -> bool:
        return self.s == (0, 0, 0)


def _positive_representative(s: tuple[int, int, int]) -> bool:
    """True when the first nonzero component of s is positive."""
    for comp in s:
        if comp != 0:
            return comp > 0
    return False


@dataclass(frozen=True)
class ModeSet:
    """A cutoff mode set Lambda together with its halving Lambda'."""

    lam: tuple[WaveVector, ...]
    lam_prime: tuple[WaveVector, ...]
    L: tuple[float, float, float]
    cutoff: int | None = None
    _prime_index: dict = field(default_factory=dict, compare=False, repr=False)

    def __post_init__(self):
        object.__setattr__(
            self, "_prime_index", {wv.s: i for i, wv in enumerate(self.lam_prime)}
        )

    @property
    def N(self) -> int:
        return len(self.lam_prime)

    def prime_index(self, s: tuple[int, int, int]) -> int:
        return self._prime_index[s]

    def contains_prime(self, s: tuple[int, int, int]) -> bool:
        return s in self._prime_index

    @classmethod
    def from_s_triples(cls, triples, L, cutoff=None) -> "ModeSet":
        """Build a mode set from explicit halved representatives.

        Used for desk-scale studies that need a hand-picked Lambda' (for
        example a single coupling mode); ``build_mode_set`` is the standard
        cutoff-driven constructor.
        """
        prime = []
        for s in sorted(tuple(int(c) for c in s) for s in triples):
            if s == (0, 0, 0):
                raise ConfigError("mode set members must have s != 0")
            if not _positive_representative(s):
                raise ConfigError(
                    f"halved representative {s} must have positive first nonzero component"
                )
            prime.append(WaveVector(s, tuple(L)))
        full = sorted(
            [wv for wv in prime] + [wv.negated() for wv in prime], key=lambda wv: wv.s
        )
        return cls(lam=tuple(full), lam_prime=tuple(prime), L=tuple(L), cutoff=cutoff)


def build_mode_set(config: SimulationConfig, which: int) -> ModeSet:
    """Construct Lambda_j and its halving for cutoff index ``which`` in {1,2,3}.

    The halving rule keeps s whose first nonzero component is positive, which
    picks exactly one member of every {s, -s} pair.
    """
    if which not in (1, 2, 3):
        raise ConfigError(f"cutoff index must be 1, 2, or 3, got {which}")
    M = config.M[which - 1]
    L = tuple(config.L)
    full = []
    prime = []
    for s1 in range(-M, M + 1):
        for s2 in range(-M, M + 1):
            for s3 in range(-M, M + 1):
                s = (s1, s2, s3)
                if s == (0, 0, 0):
                    continue
                wv = WaveVector(s, L)
                full.append(wv)
                if _positive_representative(s):
                    prime.append(wv)
    full.sort(key=lambda wv: wv.s)
    prime.sort(key=lambda wv: wv.s)
    return ModeSet(lam=tuple(full), lam_prime=tuple(prime), L=L, cutoff=M)


@dataclass(frozen=True)
class PolarizationFrame:
    """Map k -> (e1(k), e2(k)) with e_j(-k) = -e_j(k) and {e1, e2, k/|k|} orthonormal."""

    _vectors: dict

    def e(self, wv: WaveVector) -> tuple[np.ndarray, np.ndarray]:
        return self._vectors[wv.s]

    def covers(self, modes: ModeSet) -> bool:
        return all(wv.s in self._vectors for wv in modes.lam)


def _reference_frame(k: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    khat = k / np.linalg.norm(k)
    up = np.array([0.0, 0.0, 1.0])
    if np.linalg.norm(np.cross(k, up)) < 1.0e-8:
        up = np.array([0.0, 1.0, 0.0])
    e1 = np.cross(up, khat)
    e1 /= np.linalg.norm(e1)
    e2 = np.cross(khat, e1)
    return e1, e2


def build_polarization(modes: ModeSet) -> PolarizationFrame:
    """Orthonormal transverse frames on Lambda', extended to -k by negation.

    The construction is deterministic: cross the reference direction (0,0,1),
    or (0,1,0) when k is within 1e-8 of the z axis, with k/|k| and complete
    the right-handed triple.  Negating both vectors on -k enforces the parity
    constraint exactly.
    """
    vectors: dict = {}
    for wv in modes.lam_prime:
        if wv.is_zero():
            raise ConfigError("polarization frame is undefined at k = 0")
        e1, e2 = _reference_frame(wv.k)
        vectors[wv.s] = (e1, e2)
        vectors[wv.negated().s] = (-e1, -e2)
    return PolarizationFrame(_vectors=vectors)


def modes_to_csv(modes: ModeSet, frame: PolarizationFrame, path) -> None:
    """Write the full mode set with its frame as CSV (one row per k in Lambda)."""
    header = "s1,s2,s3,k1,k2,k3,e1x,e1y,e1z,e2x,e2y,e2z,in_prime"
    lines = [header]
    for wv in modes.lam:
        e1, e2 = frame.e(wv)
        k = wv.k
        row = list(wv.s) + ["%.17g" % v for v in (*k, *e1, *e2)]
        row.append("1" if modes.contains_prime(wv.s) else "0")
        lines.append(",".join(str(v) for v in row))
    with open(path, "w", encoding="utf-8", newline="\n") as handle:
        handle.write("\n".join(lines) + "\n")
