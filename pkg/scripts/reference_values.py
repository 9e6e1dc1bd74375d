"""Independent quadrature references used as frozen oracles in the test suite.

    python scripts/reference_values.py
"""

import json
import math

from scipy import integrate, special


def main():
    krylov, _ = integrate.quad(lambda s: 1.0 - math.exp(-1.0 / (2.0 * s)), 0.0, 1.0, epsabs=1e-13)
    ball, _ = integrate.quad(lambda r: 2 * math.pi * r**3 * math.exp(-r * r / 2), 0.0, 1.0)
    box_mass = 2 * math.pi * special.erf(3 / math.sqrt(2)) ** 2
    psi_q, _ = integrate.quad(lambda r: 2 * math.pi * r * r**-1.5, 0.0, 1.0)
    gauss, _ = integrate.dblquad(
        lambda y, x: math.exp(-(x * x + y * y)) * math.exp(-(x * x + y * y) / 2) / (2 * math.pi),
        -math.inf, math.inf, -math.inf, math.inf,
    )
    out = {
        "krylov_ball_occupation_t1": krylov,
        "ou_second_moment_ball_over_box_mass": ball / box_mass,
        "ou_second_moment_ball": ball,
        "ou_box_mass": box_mass,
        "psi_L3_unit_disk_alpha_half": psi_q,
        "brownian_exp_minus_norm2_t1": gauss,
        "quartic_lyapunov_lhs_r4": 4.0**4,
        "quartic_lyapunov_rhs_r4": 16.0 * (math.log(4.0) + 1.0),
        "ou_variance_t1": 1.0 - math.exp(-2.0),
    }
    print(json.dumps(out, indent=2))


if __name__ == "__main__":
    main()
