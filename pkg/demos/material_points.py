"""
Material points: J2 matrix and bilinear cohesive law
====================================================

The two constitutive models embedded in the network, driven directly.
"""

import numpy as np

from prnn.constitutive import BulkProps, BulkState, CohesiveState, CzmProps, czm_update, j2_update

# a plane-stress uniaxial strain cycle through the J2 matrix
props = BulkProps()
state = BulkState.virgin()
print("eps_xx     sigma_xx   sigma_yy   alpha")
for exx in np.concatenate([np.linspace(0, 0.04, 9), np.linspace(0.035, 0.0, 8)]):
    s, state = j2_update(np.array([exx, 0.0, 0.0]), state, props)
    print(f"{exx:8.4f} {s[0]:10.3f} {s[1]:10.3f} {state.equivalent_plastic_strain:7.4f}")

# mode-I opening of the cohesive law: elastic up to onset, linear softening,
# and secant unloading once damaged
czm = CzmProps()
print(f"\nonset jump {czm.onset_normal:.3e} mm, final jump {czm.final_normal:.5e} mm")
coh = CohesiveState.virgin()
for j in [0.6e-6, 1.2e-6, 0.005, 0.01, 0.005, 0.0, 0.015, 0.03]:
    t, coh = czm_update(np.array([j, 0.0]), coh, czm)
    print(f"jump {j:9.2e}  traction {t[0]:8.3f} MPa  damage {float(coh.damage):.4f}")
