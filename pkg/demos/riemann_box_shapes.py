# When is a reciprocal lattice sum a Riemann sum?
#
# For a cube the mode sum times the cell volume approaches the integral of
# the summand as L grows.  But the cell geometry matters: stretch one side
# as L1 = L2 * L3 and the sum picks up a persistent excess that no amount of
# refinement removes, because a single lattice site at k = (2 pi / L1, 0, 0)
# carries a cell-volume weight that does not shrink.

import math

import numpy as np

from boxqed.coulomb import LatticeSummand, riemann_sum

TWO_PI = 2.0 * math.pi


def inverse_quartic():
    def radial(r):
        r = np.asarray(r, dtype=float)
        return 1.0 / (r * r * (1.0 + r * r))

    return LatticeSummand(
        phi_fn=lambda K: radial(np.linalg.norm(K, axis=-1)),
        bound_fn=lambda r: float(radial(r)),
        radial_fn=radial,
        name="inverse-quartic",
        analytic_limit=2.0 * math.pi ** 2,
    )


def screened():
    def phi(K):
        n2 = np.einsum("...i,...i->...", K, K)
        return np.exp(-n2) / n2

    return LatticeSummand(
        phi_fn=phi,
        bound_fn=lambda r: math.exp(-min(r * r, 700.0)) / (r * r),
        name="screened-inverse-square",
    )


def main():
    summand = inverse_quartic()
    target = summand.analytic_limit
    print(f"cube boxes, target integral {target:.5f}:")
    for L in (15.0, 30.0, 60.0):
        result = riemann_sum(summand, L)
        print(f"  L = {L:4.0f}: sum {result.value:9.5f}  "
              f"error {abs(result.value - target):7.4f}  "
              f"({result.n_points} points, tail <= {result.tail_bound:.1e})")

    print("\nflattened boxes (l^2, l, l), screened 1/|k|^2 summand:")
    integral = 2.0 * math.pi ** 1.5
    for ell in (4, 8, 16):
        box = (float(ell * ell), float(ell), float(ell))
        result = riemann_sum(summand=screened(), L=box)
        cellvol = TWO_PI ** 3 / (box[0] * box[1] * box[2])
        k1 = TWO_PI / box[0]
        site = cellvol * math.exp(-k1 * k1) / (k1 * k1)
        print(f"  l = {ell:3d}: excess {result.value - integral:8.3f}  "
              f"single-site bound {site:8.3f}")
    print("the excess grows with l instead of vanishing")


if __name__ == "__main__":
    main()
