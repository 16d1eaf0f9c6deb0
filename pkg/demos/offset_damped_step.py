# The damped scalar-offset step and its extrapolation back to the plain step.
#
# Offsetting the first-cutoff modes by free scalar variables makes the step
# integral conditionally convergent; an eps^2 damping regularizes it at the
# cost of a per-mode factor a / (a + i eps^2).  Richardson steps in eps^2
# remove the damping again.

import math

import numpy as np

from boxqed import ModeSet, SimulationConfig
from boxqed.field import ModelContext
from boxqed.fock import OscillatorBasis, StateVector
from boxqed.propagator import (
    StepBackend,
    fresnel_gaussian,
    fundamental_step,
    g_epsilon_extrapolated,
    g_epsilon_step,
    xi_mode_factor,
)

TWO_PI = 2.0 * math.pi
BOX = (TWO_PI, TWO_PI, TWO_PI)

config = SimulationConfig(L=BOX)
modes = ModeSet.from_s_triples([(0, 0, 1)], BOX)
empty = ModeSet.from_s_triples([], BOX)
ctx = ModelContext.custom(config, modes, empty, modes)
basis = OscillatorBasis(modes, cap=4, volume=config.volume)
backend = StepBackend("analytic-quadratic", basis, ctx)

rng = np.random.default_rng(8)
vec = rng.normal(size=backend.state_dim) + 1j * rng.normal(size=backend.state_dim)
state = StateVector(vec).normalized()

if __name__ == "__main__":
    rho = 0.5
    a = rho / (4.0 * math.pi * config.hbar * config.volume)
    print(f"mode coefficient a = {a:.6f}")
    print(f"undamped offset integral squared vs i pi / a: "
          f"{abs(fresnel_gaussian(a) ** 2 - 1j * math.pi / a):.2e}")

    # the damping only matters on the scale eps^2 ~ a
    print("\n  eps        |xi - 1|    step deviation from plain")
    plain = fundamental_step(state, rho, 0.0, backend)
    for scale in (4.0, 2.0, 1.0):
        eps = scale * math.sqrt(0.01 * a)
        xi = xi_mode_factor(1.0, rho, eps, config)
        damped = g_epsilon_step(state, rho, 0.0, eps, backend)
        dev = np.max(np.abs(damped.coefficients - plain.coefficients))
        print(f"  {eps:.2e}   {abs(xi - 1.0):.2e}    {dev:.2e}")

    extrap = g_epsilon_extrapolated(state, rho, 0.0, backend)
    dev = np.max(np.abs(extrap.coefficients - plain.coefficients))
    print(f"\nafter three-level extrapolation: {dev:.2e}")
