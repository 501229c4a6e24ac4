"""
Interior profile of the wave field driven by a homogeneous source.

The source t^{-3} P(r/t), with P built from a_+ = eps (1 - |y|^2)^8, is
evolved from rest and t u is compared with the kernel profile
U_tilde(r/t).  The radiation field of the same run tends to the limit A
as q -> -inf (the q range is limited by t_end).

    python3 demos/interior_profile.py
"""
import numpy as np

from wkg.evolve import GridSpec
from wkg.profiles import extract_radiation_field, radiation_limit_A
from wkg.scattering import build_u1, default_data, source_density


def main():
    data = default_data(epsilon=0.01)
    grid = GridSpec(r_max=120.0, n_r=2400, t_end=120.0)
    u1, prof = build_u1(data, grid)
    print(f"relative error of t u1 against U_tilde: {prof.identity_error:.2e}")

    t = u1.times[-1]
    print("\n |y|    t u1(t, |y| t)   U_tilde")
    for y in (0.0, 0.3, 0.6, 0.9):
        print(f"{y:4.1f}   {t * u1.sample(t, y * t) / data.epsilon**2:12.6f}"
              f"   {prof.u_tilde_at(y) / data.epsilon**2:10.6f}   (units of eps^2)")

    A = radiation_limit_A(source_density(data))
    rad = extract_radiation_field(u1, A=A)
    far = rad.q_grid < -10
    print(f"\nA = {A / data.epsilon**2:.6f} eps^2, "
          f"mean F on q < -10: {np.mean(rad.F[far]) / data.epsilon**2:.6f} eps^2, "
          f"tail exponent {rad.tail_rate[0]:.2f}")


if __name__ == "__main__":
    main()
