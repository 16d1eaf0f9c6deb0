# Coulomb's law out of discrete lattice sums.
#
# The mollified interaction of a charge pair is a finite sum over reciprocal
# modes.  Widening the box refines the sum toward the screened continuum
# value erf(|d| / (2 eps)) / |d|, and shrinking eps afterwards removes the
# screening.  The finite box depresses every sum by an O(1/L) offset, which
# a two-point Richardson step cancels.

import math

import numpy as np

from boxqed.coulomb import mollified_coulomb, richardson_limit

SEPARATION = 1.0
CHARGES = (1.0, 1.0)


def pair(dist):
    return np.array([[0.0, 0.0, 0.0], [0.0, 0.0, dist]])


def main():
    print("fixed eps = 0.25, growing box:")
    print("    L    lattice sum    screened target")
    target = math.erf(SEPARATION / 0.5) / SEPARATION
    values = {}
    for L in (10.0, 20.0, 40.0):
        values[L] = mollified_coulomb(pair(SEPARATION), CHARGES, L, eps=0.25)
        print(f"  {L:5.0f}  {values[L]:.6f}       {target:.6f}")

    extrap = richardson_limit(values[40.0], values[20.0])
    print(f"Richardson(40, 20) = {extrap:.6f} "
          f"(off by {abs(extrap - target):.2e})")

    print("\njoint eps and L refinement, heading for the bare 1/|d|:")
    joint = {}
    for eps, L in ((1.0, 20.0), (0.5, 30.0), (0.25, 40.0)):
        joint[(eps, L)] = mollified_coulomb(pair(SEPARATION), CHARGES, L,
                                            eps=eps)
        print(f"  eps {eps:5.3f}  L {L:4.0f}  ->  {joint[(eps, L)]:.6f}")
    bare = richardson_limit(joint[(0.25, 40.0)], values[20.0])
    print(f"box-corrected endpoint {bare:.6f} vs bare 1/|d| = 1 "
          f"(off by {abs(bare - 1.0):.2e})")

    # opposite charges just flip the sign
    attract = mollified_coulomb(pair(2.0), (1.0, -1.0), 40.0, eps=0.25)
    print(f"\nopposite charges at |d| = 2: {attract:.6f}")


if __name__ == "__main__":
    main()
