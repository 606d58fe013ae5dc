#!/usr/bin/env python3
"""Noise-scale calibration tables for both privacy accountants.

For each upload budget t0, prints the smallest Gaussian noise scale meeting
the (epsilon, delta) target, for the quantization-assisted mechanism and for
the plain Gaussian baseline. The gap between the two columns is the noise
saved by counting the quantizer's information loss toward privacy.
"""

from wpflsim.dpq import (PrivacySpec, delta_plain_gaussian_of_sigma,
                         delta_q_of_sigma, search_sigma)

PROFILE = dict(epsilon_q=1.0, delta_q_target=1e-3, clip_c=3.0, r_bits=16,
               q_sample=0.01)

if __name__ == "__main__":
    print(f"{'t0':>4} {'sigma (quant-assisted)':>24} {'sigma (plain gaussian)':>24}")
    for t0 in (5, 10, 15, 20, 25, 30):
        spec = PrivacySpec(t0=t0, **PROFILE)
        qa = search_sigma(spec, delta_fn=delta_q_of_sigma)
        plain = search_sigma(spec, delta_fn=delta_plain_gaussian_of_sigma)
        print(f"{t0:>4} {qa:>24.6g} {plain:>24.6g}")
