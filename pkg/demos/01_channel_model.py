"""Walk through the indoor-factory channel model.

Prints pathloss curves for each InF variant, the AP-UE LoS probability
as a function of distance, and a few sampled realizations for the
default hall.
"""

import numpy as np

from rislab.channel import LinkParams, generate_realization, los_probability, pathloss_db
from rislab.harness import parse_config
from rislab.scenario import InfVariant

cfg = parse_config("ris.rows = 8\nris.cols = 8\n")
fc_ghz = cfg.link.fc_hz / 1e9

print(f"Pathloss at {fc_ghz:g} GHz (dB)")
print("  d [m]   LoS    " + "  ".join(f"{v.value:>6}" for v in InfVariant if v is not InfVariant.HH))
for d in (5, 10, 20, 50, 100):
    los = pathloss_db(InfVariant.DH, True, d, fc_ghz)
    nlos = [pathloss_db(v, False, d, fc_ghz) for v in InfVariant if v is not InfVariant.HH]
    print(f"  {d:5d}  {los:6.2f}  " + "  ".join(f"{x:6.2f}" for x in nlos))

# The LoS probability depends on the 2D AP-UE distance only, so moving the
# UE along a line from the AP traces out the exponential decay.
sc = cfg.scenario("near")
ap = np.array(sc.placement.ap_pos)
print("\nInF-DH LoS probability along the hall")
for d in (2, 5, 10, 20, 40):
    ue = (ap[0] + 0.6 * d, ap[1] + 0.8 * d, 1.5)
    print(f"  d2D = {d:3d} m  p = {los_probability(sc, sc.placement.__class__(tuple(ap), sc.placement.ris_center, ue)):.3f}")

rng = np.random.default_rng(1)
spec = cfg.ris_spec
print(f"\nFive draws for the near UE, {spec.n_elements}-element RIS")
for _ in range(5):
    ch = generate_realization(sc, None, spec, LinkParams(), rng)
    cascade = np.abs(ch.h_br * ch.h_ru).sum()
    print(f"  los={int(ch.los)}  |h_bu|={abs(ch.h_bu):.2e}  sum|h_br h_ru|={cascade:.2e}")
