"""Compare the phase optimizers on small random channels.

For N=10 elements with one-bit phases the exhaustive search is cheap, so
it serves as ground truth for the iterative and quantized methods. The
continuous row aligns phases and ignores the amplitude response, so with
practical amplitudes a one-bit exhaustive search can beat it.
"""

import numpy as np

from rislab.channel import ChannelRealization
from rislab.optimizer import (
    PowerConfig,
    achievable_rate,
    baseline_rate,
    brute_force_optimum,
    optimize_iterative,
    optimize_quantized,
)
from rislab.ris import AmplitudeParams, RisSpec

rng = np.random.default_rng(0)
power = PowerConfig(pt_dbm=0.0, pn_dbm=0.0)
n = 10


def cn(size=None):
    return (rng.standard_normal(size) + 1j * rng.standard_normal(size)) / np.sqrt(2)


for label, amp in (("ideal amplitude", AmplitudeParams(omega=0.0)), ("practical amplitude", AmplitudeParams())):
    spec = RisSpec(rows=1, cols=n, phase_bits=1, spacing_m=0.005, center=(0, 0, 0), amp=amp)
    cont = RisSpec(rows=1, cols=n, phase_bits=0, spacing_m=0.005, center=(0, 0, 0), amp=amp)
    totals = np.zeros(5)
    trials = 200
    for _ in range(trials):
        ch = ChannelRealization(cn(n), cn(n), 0.3 * cn())
        totals += [
            baseline_rate(ch, power),
            achievable_rate(ch, optimize_quantized(ch, spec), amp, power),
            achievable_rate(ch, optimize_iterative(ch, spec, power), amp, power),
            brute_force_optimum(ch, spec, power)[1],
            achievable_rate(ch, optimize_quantized(ch, cont), amp, power),
        ]
    means = totals / trials
    print(f"{label}: mean rate over {trials} channels (bits/s/Hz)")
    for name, m in zip(("no RIS", "quantized b=1", "iterative b=1", "exhaustive b=1", "aligned, continuous"), means):
        print(f"  {name:19s} {m:.3f}")
