"""Achievable-rate objective and the RIS phase optimizers.

Three practical methods are provided (element-wise iterative sweep,
quantized phase alignment, offline/online codebook) together with an
exhaustive search used as the reference optimum on small panels.

All discrete searches maximise ``|combined|**2``; the rate is a strictly
increasing function of it, so argmax and tie structure are identical.
Ties always resolve to the smallest level index / lexicographically
smallest configuration.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .channel import ChannelRealization, LinkParams, generate_realization
from .ris import (
    AmplitudeParams,
    PhaseConfig,
    RisSpec,
    level_coefficients,
    quantize_phase,
    reflection_coefficient,
    wrap_phase,
)
from .scenario import InfScenario

try:
    from numba import njit
except ImportError:  # pragma: no cover
    def njit(*args, **kwargs):
        if args and callable(args[0]):
            return args[0]
        return lambda f: f

BRUTE_FORCE_LIMIT = 1 << 24
CODEBOOK_MAGIC = "ORIXCB"
CODEBOOK_VERSION = "v1"


class OptimizerError(ValueError):
    pass


class SearchSpaceTooLarge(OptimizerError):
    pass


class FingerprintMismatch(OptimizerError):
    pass


@dataclass(frozen=True)
class PowerConfig:
    pt_dbm: float = 10.0
    pn_dbm: float = -88.0

    @property
    def snr_linear(self) -> float:
        return 10.0 ** ((self.pt_dbm - self.pn_dbm) / 10.0)


def _check_len(ch: ChannelRealization, cfg: PhaseConfig) -> None:
    if len(cfg) != ch.n_elements:
        raise OptimizerError(f"config has {len(cfg)} phases but the channel has {ch.n_elements} elements")


def combined_channel(ch: ChannelRealization, cfg: PhaseConfig, amp: AmplitudeParams) -> complex:
    """``h_br^T diag(rho(theta) e^{j theta}) h_ru + h_bu``."""
    _check_len(ch, cfg)
    if cfg.bits:
        coeff = level_coefficients(cfg.bits, amp)[cfg.values]
    else:
        coeff = reflection_coefficient(cfg.values, amp)
    return complex(np.sum(ch.h_br * coeff * ch.h_ru) + ch.h_bu)


def rate_from_gain(gain, power: PowerConfig):
    return np.log2(1.0 + power.snr_linear * np.asarray(gain))[()]


def achievable_rate(ch: ChannelRealization, cfg: PhaseConfig, amp: AmplitudeParams, power: PowerConfig) -> float:
    """Rate in bit/s/Hz of the RIS-assisted link."""
    return float(rate_from_gain(abs(combined_channel(ch, cfg, amp)) ** 2, power))


def baseline_rate(ch: ChannelRealization, power: PowerConfig) -> float:
    """Rate of the direct link alone (no RIS)."""
    return float(rate_from_gain(abs(ch.h_bu) ** 2, power))


@njit(cache=True)
def _sweep_kernel(g, coeffs, h_bu, idx, sweeps, trace):
    n = g.shape[0]
    levels = coeffs.shape[0]
    s = h_bu
    for i in range(n):
        s += g[i] * coeffs[idx[i]]
    t = 0
    for _ in range(sweeps):
        for i in range(n):
            rest = s - g[i] * coeffs[idx[i]]
            best_k = 0
            best = -1.0
            for k in range(levels):
                c = rest + g[i] * coeffs[k]
                val = c.real * c.real + c.imag * c.imag
                if val > best:
                    best = val
                    best_k = k
            idx[i] = best_k
            s = rest + g[i] * coeffs[best_k]
            trace[t] = best
            t += 1
    return idx


def optimize_iterative(
    ch: ChannelRealization,
    spec: RisSpec,
    power: PowerConfig,
    init: PhaseConfig | None = None,
    sweeps: int = 1,
    return_trace: bool = False,
):
    """Element-by-element sweep over all phase levels, others held fixed.

    Starts from all-zeros unless ``init`` is given. With ``return_trace``
    also returns the rate after every element update.
    """
    if spec.continuous:
        raise OptimizerError("iterative sweep needs a discrete phase set (phase_bits >= 1)")
    if sweeps < 1:
        raise OptimizerError("sweeps must be at least 1")
    if init is None:
        init = PhaseConfig.zeros(ch.n_elements, spec.phase_bits)
    if init.bits != spec.phase_bits:
        raise OptimizerError(f"init has {init.bits} bits, spec has {spec.phase_bits}")
    _check_len(ch, init)
    coeffs = level_coefficients(spec.phase_bits, spec.amp)
    idx = np.array(init.values, dtype=np.int64)
    trace = np.empty(ch.n_elements * sweeps)
    idx = _sweep_kernel(ch.cascaded, coeffs, complex(ch.h_bu), idx, sweeps, trace)
    cfg = PhaseConfig(idx, spec.phase_bits)
    if return_trace:
        return cfg, rate_from_gain(trace, power)
    return cfg


def ideal_phases(ch: ChannelRealization) -> np.ndarray:
    """Per-element phase that aligns each cascaded path with the direct path."""
    ref = np.angle(ch.h_bu) if ch.h_bu != 0 else 0.0
    return wrap_phase(ref - np.angle(ch.cascaded))


def optimize_quantized(ch: ChannelRealization, spec: RisSpec) -> PhaseConfig:
    """Align every cascaded path with the direct path, then quantize.

    Amplitude loss is ignored when choosing phases.
    """
    phi = ideal_phases(ch)
    if spec.continuous:
        return PhaseConfig(phi, 0)
    return PhaseConfig(quantize_phase(phi, spec.phase_bits), spec.phase_bits)


def brute_force_optimum(ch: ChannelRealization, spec: RisSpec, power: PowerConfig, chunk: int = 1 << 16):
    """Exhaustive search over every level assignment.

    Returns ``(config, rate)``; ties go to the lexicographically smallest
    index vector (element 0 most significant).
    """
    if spec.continuous:
        raise OptimizerError("exhaustive search needs a discrete phase set")
    n = ch.n_elements
    levels = 1 << spec.phase_bits
    if spec.phase_bits * n > 24:
        raise SearchSpaceTooLarge(f"{levels}^{n} configurations exceed the 2^24 limit")
    total = levels**n
    coeffs = level_coefficients(spec.phase_bits, spec.amp)
    g = ch.cascaded
    weights = levels ** np.arange(n - 1, -1, -1, dtype=np.int64)
    best_val, best_code = -1.0, 0
    for start in range(0, total, chunk):
        codes = np.arange(start, min(start + chunk, total), dtype=np.int64)
        digits = (codes[:, None] // weights[None, :]) % levels
        s = np.full(codes.size, ch.h_bu, dtype=complex)
        for i in range(n):
            s = s + g[i] * coeffs[digits[:, i]]
        vals = s.real**2 + s.imag**2
        j = int(np.argmax(vals))
        if vals[j] > best_val:
            best_val, best_code = float(vals[j]), int(codes[j])
    digits = (best_code // weights) % levels
    cfg = PhaseConfig(digits, spec.phase_bits)
    return cfg, achievable_rate(ch, cfg, spec.amp, power)


@dataclass
class Codebook:
    """Library of phase configurations, one per labelled UE position."""

    fingerprint: tuple
    labels: list[str] = field(default_factory=list)
    configs: list[PhaseConfig] = field(default_factory=list)

    def __post_init__(self):
        if len(self.labels) != len(self.configs):
            raise OptimizerError("labels and configs differ in length")

    def __len__(self) -> int:
        return len(self.configs)

    @property
    def entries(self) -> list[tuple[str, PhaseConfig]]:
        return list(zip(self.labels, self.configs))

    def check(self, spec: RisSpec) -> None:
        mismatch = fingerprint_diff(self.fingerprint, spec.fingerprint)
        if mismatch:
            raise FingerprintMismatch("codebook fingerprint mismatch: " + ", ".join(mismatch))

    def dumps(self) -> str:
        n, b, rho_min, xi, omega = self.fingerprint
        lines = [f"{CODEBOOK_MAGIC} {CODEBOOK_VERSION} N={n} b={b} rho_min={rho_min!r} xi={xi!r} omega={omega!r}"]
        for label, cfg in self.entries:
            lines.append(" ".join([label, *map(str, cfg.values.tolist())]))
        return "\n".join(lines) + "\n"

    def save(self, path) -> None:
        Path(path).write_text(self.dumps())

    @classmethod
    def loads(cls, text: str, expect: RisSpec | None = None) -> "Codebook":
        lines = [ln for ln in text.splitlines() if ln.strip()]
        if not lines:
            raise OptimizerError("empty codebook file")
        head = lines[0].split()
        if head[:2] != [CODEBOOK_MAGIC, CODEBOOK_VERSION] or len(head) != 7:
            raise OptimizerError(f"bad codebook header: {lines[0]!r}")
        fields = dict(tok.split("=", 1) for tok in head[2:])
        try:
            fp = (int(fields["N"]), int(fields["b"]), float(fields["rho_min"]), float(fields["xi"]), float(fields["omega"]))
        except (KeyError, ValueError) as exc:
            raise OptimizerError(f"bad codebook header: {lines[0]!r}") from exc
        n, b = fp[0], fp[1]
        if b < 1:
            raise OptimizerError("continuous codebooks are not persisted")
        labels, configs = [], []
        for lineno, line in enumerate(lines[1:], start=2):
            tok = line.split()
            if len(tok) != n + 1:
                raise OptimizerError(f"line {lineno}: expected {n} indices, got {len(tok) - 1}")
            labels.append(tok[0])
            configs.append(PhaseConfig(np.array([int(t) for t in tok[1:]], dtype=np.int64), b))
        if not configs:
            raise OptimizerError("codebook has no entries")
        book = cls(fp, labels, configs)
        if expect is not None:
            book.check(expect)
        return book

    @classmethod
    def load(cls, path, expect: RisSpec | None = None) -> "Codebook":
        return cls.loads(Path(path).read_text(), expect)


def fingerprint_diff(have: tuple, want: tuple) -> list[str]:
    names = ("N", "b", "rho_min", "xi", "omega")
    return [f"{k} (codebook {a!r} vs ris {b!r})" for k, a, b in zip(names, have, want) if a != b]


def nominal_realization(scenario: InfScenario, spec: RisSpec, link: LinkParams) -> ChannelRealization:
    """Deterministic draw: LoS forced, no shadow fading, pure-LoS links."""
    nominal = LinkParams(
        fc_hz=link.fc_hz,
        k_ris_links_db=math.inf,
        k_bu_db=math.inf,
        shadow_fading=False,
        direct_blocked=link.direct_blocked,
    )
    # nothing random is consumed beyond the ignored LoS uniform
    return generate_realization(scenario, None, spec, nominal, np.random.default_rng(0), force_los=True)


def build_codebook(
    spec: RisSpec,
    scenario: InfScenario,
    positions,
    power: PowerConfig,
    link: LinkParams | None = None,
    labels=None,
    realizations: int = 0,
    seed: int = 0,
) -> Codebook:
    """Offline stage: one optimised configuration per candidate UE position.

    By default each position uses its nominal deterministic channel and the
    iterative sweep from all-zeros. With ``realizations > 0`` the stored
    entry is instead the candidate (one per random draw) with the best mean
    rate over those draws.
    """
    from .channel import substream

    if spec.continuous:
        raise OptimizerError("codebooks need a discrete phase set")
    positions = [tuple(float(v) for v in p) for p in positions]
    if not positions:
        raise OptimizerError("codebook needs at least one position")
    link = link or LinkParams()
    if labels is None:
        labels = [f"cb{i}" for i in range(len(positions))]
    labels = list(labels)
    if len(labels) != len(positions):
        raise OptimizerError("one label per position required")
    configs = []
    for i, pos in enumerate(positions):
        sc = scenario.with_ue(pos)
        if realizations <= 0:
            ch = nominal_realization(sc, spec, link)
            configs.append(optimize_iterative(ch, spec, power))
            continue
        draws = [
            generate_realization(sc, None, spec, link, substream(seed, r, f"codebook/{labels[i]}"))
            for r in range(realizations)
        ]
        cands = [optimize_iterative(ch, spec, power) for ch in draws]
        means = [np.mean([achievable_rate(ch, c, spec.amp, power) for ch in draws]) for c in cands]
        configs.append(cands[int(np.argmax(means))])
    return Codebook(spec.fingerprint, labels, configs)


def select_codebook_entry(ch: ChannelRealization, codebook: Codebook, spec: RisSpec, power: PowerConfig):
    """Online stage: the entry with the best rate on ``ch``.

    Returns ``(index, config, rate)``; ties go to the lowest index.
    """
    codebook.check(spec)
    coeffs = level_coefficients(spec.phase_bits, spec.amp)
    g = ch.cascaded
    gains = np.array([abs(np.sum(g * coeffs[c.values]) + ch.h_bu) ** 2 for c in codebook.configs])
    j = int(np.argmax(gains))
    cfg = codebook.configs[j]
    return j, cfg, achievable_rate(ch, cfg, spec.amp, power)
