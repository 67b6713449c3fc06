#!/usr/bin/env python3
"""Privacy budget arithmetic: forward cost, inverse calibration, composition.

The accountant implements epsilon = (q / sigma) * sqrt(2 E ln(1/delta)) for
sampling-without-replacement training and its exact inverse.
"""

from dpfedsim import PrivacyParams, compose_rounds, epsilon_of, sigma_for_target

# --- forward: how epsilon moves with each knob ----------------------------

base = PrivacyParams(sampling_ratio=0.05, noise_multiplier=1.0, epochs=10, delta=1e-4)
print(f"base: q={base.sampling_ratio} sigma={base.noise_multiplier} E={base.epochs}")
print(f"  epsilon = {epsilon_of(base):.4f}")

print("\nnoise multiplier sweep (more noise, less cost):")
for sigma in (0.5, 1.0, 2.0, 4.0):
    eps = epsilon_of(PrivacyParams(0.05, sigma, 10, 1e-4))
    print(f"  sigma={sigma:4.1f} -> epsilon={eps:.4f}")

print("\nepoch sweep (sqrt growth):")
for epochs in (1, 4, 16, 64):
    eps = epsilon_of(PrivacyParams(0.05, 1.0, epochs, 1e-4))
    print(f"  E={epochs:3d} -> epsilon={eps:.4f}")

# --- inverse: calibrate sigma for a target budget --------------------------

print("\ncalibration at q=0.1, 5 epochs, delta=1e-4:")
for target in (3.15, 1.42, 1.33, 0.65):
    sigma = sigma_for_target(0.1, 5, 1e-4, target)
    back = epsilon_of(PrivacyParams(0.1, sigma, 5, 1e-4))
    print(f"  target={target:5.2f} -> sigma={sigma:.4f} (round trip {back:.10f})")

# --- composition across federated rounds ----------------------------------

per_round = PrivacyParams(0.1, 1.0, epochs=5, delta=1e-4)
print("\ncumulative cost across rounds of 5 local epochs:")
for rounds in (1, 2, 5, 10):
    report = compose_rounds(per_round, rounds)
    print(f"  rounds={rounds:2d} -> epsilon={report.epsilon:.4f} [{report.formula}]")

flat = epsilon_of(PrivacyParams(0.1, 1.0, 50, 1e-4))
print(f"10 rounds == one 50-epoch evaluation: {compose_rounds(per_round, 10).epsilon == flat}")
