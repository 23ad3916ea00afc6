"""
Passive effective viscosity of hardcore ensembles
=================================================

Sample hardcore particle configurations, solve the passive cell problems
and compare the growth of the effective viscosity with volume fraction
against the dilute slope.
"""
import numpy as np

from activesusp.dilute import dilute_Bpas1
from activesusp.effective import compute_effective_tensors
from activesusp.ensemble import sample_hardcore, volume_fraction
from activesusp.tensors import unit_ball_volume

###############################################################################
# Ensembles
# ---------
# A few realizations per intensity keep this demo quick; the acceptance
# suite uses twenty.
L, N = 32.0, 256
rows = []
for lam in (0.01, 0.02, 0.05):
    ens = [sample_hardcore(2, L, lam / np.pi, 1.0, seed) for seed in range(4)]
    rep = compute_effective_tensors(ens, N, None, (), tol=1e-8)
    vf = np.mean([volume_fraction(e) for e in ens])
    rows.append((vf, np.trace(rep.Bpas) / 2 - 1))
    print(f"volume fraction {vf:.4f}: B_pas diagonal {np.diag(rep.Bpas)} +- {np.diag(rep.Bpas_se)}")

###############################################################################
# Slope
# -----
vf, y = np.array(rows).T
slope = vf @ y / (vf @ vf)
print(f"fitted slope {slope:.3f}, dilute {dilute_Bpas1(2)[0, 0] / unit_ball_volume(2):.3f}")
