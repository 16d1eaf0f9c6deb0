# Tour of the reciprocal mode lattices and the polarization frame.
#
# The three cutoffs M1 <= M2 <= M3 carve nested finite lattices out of the
# reciprocal grid 2 pi (s1/L1, s2/L2, s3/L3).  Only half of each lattice is
# stored: one representative per +-k pair, chosen by the first nonzero
# component being positive.  Everything downstream (field coordinates,
# oscillator variables, CSV exports) is indexed against that halved order.

import numpy as np

from boxqed import SimulationConfig, build_mode_set, build_polarization


def main():
    config = SimulationConfig(
        L=(6.0, 8.0, 10.0),
        M=(1, 2, 3),
        n_particles=2,
        masses=(1.0, 1836.0),
        charges=(-1.0, 1.0),
    )

    print(f"box |V| = {config.volume:.3f}")
    for which in (1, 2, 3):
        modes = build_mode_set(config, which)
        full = 2 * modes.N
        print(f"Lambda'_{which}: {modes.N:4d} representatives "
              f"({full} modes total)")

    modes = build_mode_set(config, 3)
    frame = build_polarization(modes)

    # spot-check the frame conventions on a few representatives
    rng = np.random.default_rng(0)
    picks = rng.choice(modes.N, size=5, replace=False)
    print("\n  s triple        |k|      e1.k      e2.k     e1.e2")
    for idx in picks:
        wv = modes.lam_prime[idx]
        e1, e2 = frame.e(wv)
        k = wv.k
        print(f"  {str(wv.s):14s} {np.linalg.norm(k):7.4f} "
              f"{abs(e1 @ k):9.1e} {abs(e2 @ k):9.1e} {abs(e1 @ e2):9.1e}")

    # the frame is odd under k -> -k, so the halved storage loses nothing
    wv = modes.lam_prime[picks[0]]
    e_pos = frame.e(wv)
    e_neg = frame.e(wv.negated())
    print(f"\nframe parity check on {wv.s}: "
          f"max |e(-k) + e(k)| = {np.max(np.abs(e_neg + np.asarray(e_pos))):.1e}")


if __name__ == "__main__":
    main()
