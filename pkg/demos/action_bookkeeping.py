# Segment actions, broken-line additivity, and the charge-density identity.

import math

import numpy as np

from boxqed import ModeSet, SimulationConfig
from boxqed.action import (
    BrokenPath,
    Subdivision,
    broken_action,
    constraint_identity_check,
    segment_action,
)
from boxqed.field import ModelContext

TWO_PI = 2.0 * math.pi
BOX = (TWO_PI, TWO_PI, TWO_PI)


def main():
    # a decoupled single particle moving one unit in one time unit, with the
    # field held at zero: kinetic 1/2, plus the ground-energy offset of the
    # four field variables at omega = 1, one half each
    config = SimulationConfig(L=BOX, n_particles=1, masses=(1.0,),
                              charges=(0.0,))
    modes = ModeSet.from_s_triples([(0, 0, 1)], BOX)
    ctx = ModelContext.custom(config, modes, modes, modes)
    zero = np.zeros(4)
    value = segment_action(1.0, 0.0, np.array([[1.0, 0.0, 0.0]]),
                           np.array([[0.0, 0.0, 0.0]]), zero, zero, ctx)
    print(f"straight-line decoupled action: {value:.12f} (expected 2.5)")

    # additivity: a broken line is the sum of its segments
    coupled = SimulationConfig(L=BOX, M=(1, 1, 1), n_particles=2,
                               masses=(1.0, 2.0), charges=(1.0, -0.5),
                               sigma_psi=0.8, width_g=2.0)
    cctx = ModelContext.from_config(coupled)
    rng = np.random.default_rng(7)
    verts = rng.uniform(-1.0, 1.0, size=(4, 2, 3))
    fields = rng.standard_normal((4, cctx.n_field))
    path = BrokenPath(Subdivision((0.0, 0.3, 0.7, 1.2)), verts, fields)
    total = broken_action(path, cctx)
    pieces = [
        segment_action(t, s, verts[i + 1], verts[i],
                       fields[i + 1], fields[i], cctx)
        for i, (s, t) in enumerate(zip(path.subdivision.times,
                                       path.subdivision.times[1:]))
    ]
    print(f"broken action {total:.10f} vs piece sum {sum(pieces):.10f}")

    # the longitudinal-mode elimination identity, checked on random data
    worst = 0.0
    for seed in range(200):
        rng = np.random.default_rng(seed)
        x = rng.uniform(-5.0, 5.0, size=(3, 3))
        e = rng.uniform(-2.0, 2.0, size=3)
        lhs, rhs = constraint_identity_check(x, e, (1, 0, 2))
        worst = max(worst, abs(lhs - rhs))
    print(f"constraint identity, 200 draws: worst |lhs - rhs| = {worst:.2e}")


if __name__ == "__main__":
    main()
