"""
How the fitted growth exponent of the weighted kernel integral
approaches its predicted value as r/t -> 1.

For a few admissible tuples the log-slope is fitted on windows of
1 - r/t moving toward the cone; the gap to the prediction shrinks as
sub-leading powers of (1 - r/t) die out.

    python3 demos/kernel_exponents.py
"""
import numpy as np

from wkg.profiles import predicted_exponent, sample_kernel_params, verify_kernel_lemma

WINDOWS = [(1e-1, 5e-2, 2.5e-2, 1e-2), (1e-2, 5e-3, 2.5e-3, 1e-3),
           (1e-3, 3e-4, 1e-4), (1e-4, 3e-5, 1e-5)]


def main():
    params = sample_kernel_params(np.random.default_rng(0), 10)
    print("tuple  predicted  " + "  ".join(f"gap@{w[-1]:.0e}" for w in WINDOWS))
    for i, kp in enumerate(params):
        pred = predicted_exponent(kp)
        gaps = [verify_kernel_lemma(kp, 1 - np.array(w)).exponent - pred for w in WINDOWS]
        print(f"{i:5d}  {pred:9.4f}  " + "  ".join(f"{g:+9.4f}" for g in gaps))


if __name__ == "__main__":
    main()
