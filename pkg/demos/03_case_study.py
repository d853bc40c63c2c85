"""Desk-scale rerun of the factory case study and the design sweeps.

Uses the default configuration (InF-DH hall, 80x80 one-bit RIS, near and
far UE) with 10^3 realizations, then sweeps the element count and the
phase resolution for the near UE.
"""

from rislab.harness import parse_config, run_mc


def table(summary, key):
    for s in summary:
        print(f"  {key}={s[key]!s:>6}  {s['method']:9s} {s['ue_label']:4s}  "
              f"rate {s['mean_rate_bps_hz']:.3f}  gain {s['mean_gain_db']:6.2f} dB")


print("Methods at the two UE positions")
table(run_mc(parse_config("")).summary, "ue_label")

print("\nElement count (quantized, near UE)")
table(run_mc(parse_config("sweep.elements = 100, 400, 1600, 6400\nmc.methods = quantized\n"
                          "mc.ue_labels = near\n")).summary, "n_elements")

print("\nPhase resolution on a 32x32 panel (quantized, near UE; 0 = continuous)")
table(run_mc(parse_config("ris.rows = 32\nris.cols = 32\nsweep.phase_bits = 1, 2, 3, 0\n"
                          "mc.methods = quantized\nmc.ue_labels = near\n")).summary, "phase_bits")

print("\nCarrier frequency with a fixed 0.4 m panel (quantized, near UE)")
for fc in (10e9, 28e9, 60e9):
    side = max(1, round(0.4 / (3e8 / fc / 2)))
    res = run_mc(parse_config(f"link.fc_hz = {fc!r}\nris.rows = {side}\nris.cols = {side}\n"
                              "mc.methods = quantized\nmc.ue_labels = near\nmc.realizations = 300\n"))
    s = res.summary[0]
    print(f"  fc={fc / 1e9:4.0f} GHz  N={s['n_elements']:5d}  rate {s['mean_rate_bps_hz']:.3f}  "
          f"gain {s['mean_gain_db']:6.2f} dB")
