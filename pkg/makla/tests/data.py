"""Reference values used in tests"""

import math

# KernelParams(h=0.25, gamma=2.0)
ou_decay_h025_g2 = math.exp(-0.25)
ou_noise_scale_h025_g2 = 0.627271  # sqrt(1 - e^{-1/2})

# TwistedNorm(gamma=2, h=0.25)
twisted_alpha_g2_h025 = 0.5052246
twisted_beta_g2_h025 = 0.5

# K = 1, gamma = 10
contraction_constant_k1_g10 = 1.7839137e-3

# L = 1, gamma = 10, h = 0.05
contraction_rate_l1_g10_h005 = 8.9196e-5
regularization_constant_l1_g10_h005 = 39.598

# theta_h on IsotropicGaussian(L=1) at h = 0.1 from (e_1, 0)
theta_h_iso_from_e1 = ([0.995], [-0.1])
energy_error_iso_from_e1 = 1.25e-5

high_acceptance_budget = 0.12263

# (d, predicted leading energy error divided by h^3)
leading_order_coefficients = [(1, 13 / 24), (16, 14 / 3)]
