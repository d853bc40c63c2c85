"""Experiment configuration, Monte Carlo sweeps and closed-loop runs.

Config files are flat ``section.key = value`` lines with ``#`` comments.
Points are ``x, y, z``; lists of points are separated by ``;``; scalar
lists by ``,``. Keys in the ``ue`` section are free UE labels. Missing keys
take the case-study defaults below.
"""

from __future__ import annotations

import asyncio
import csv
import io
import itertools
import logging
import math
import signal
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import e2proto as e2
from .agent import AgentState, run_agent
from .channel import LinkParams, generate_realization, substream
from .optimizer import (
    Codebook,
    FingerprintMismatch,
    OptimizerError,
    PowerConfig,
    achievable_rate,
    baseline_rate,
    brute_force_optimum,
    build_codebook,
    fingerprint_diff,
    optimize_iterative,
    optimize_quantized,
    select_codebook_entry,
)
from .ric import RicService, builtin_registry
from .ris import AmplitudeParams, RisSpec
from .scenario import FactoryLayout, InfScenario, InfVariant, Placement, ScenarioError, validate_scenario
from .transport import EventLog

log = logging.getLogger(__name__)

METHODS = ("none", "iterative", "quantized", "codebook", "bruteforce")
CSV_COLUMNS = (
    "seed", "realization_idx", "variant", "n_elements", "phase_bits", "fc_hz", "pt_dbm",
    "method", "ue_label", "los_flag", "rate_bps_hz", "baseline_rate_bps_hz", "gain_db",
)
GAIN_DEFINITION = "gain_db = 10*log10((2^rate_bps_hz - 1) / (2^baseline_rate_bps_hz - 1)), SNR gain over the direct link alone"
SWEEP_KEYS = ("variant", "fc_hz", "elements", "phase_bits", "pt_dbm")

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_RUNTIME = 3


class ConfigError(ValueError):
    pass


def _point(text: str):
    parts = [p.strip() for p in text.strip().strip("()").split(",")]
    if len(parts) != 3:
        raise ValueError(f"expected 'x, y, z', got {text!r}")
    return tuple(float(p) for p in parts)


def _points(text: str):
    return [_point(p) for p in text.split(";") if p.strip()]


def _bool(text: str) -> bool:
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"expected a boolean, got {text!r}")


def _opt_float(text: str):
    t = text.strip().lower()
    return None if t in ("", "auto", "none") else float(t)


def _opt_str(text: str):
    t = text.strip()
    return None if t.lower() in ("", "none") else t


def _int(text: str) -> int:
    return int(text.strip())


def _list(conv):
    def parse(text: str):
        items = [conv(t) for t in text.split(",") if t.strip()]
        if not items:
            raise ValueError("empty list")
        return items

    return parse


def _methods(text: str):
    items = [t.strip().lower() for t in text.split(",") if t.strip()]
    bad = [m for m in items if m not in METHODS]
    if bad or not items:
        raise ValueError(f"methods must be a non-empty subset of {METHODS}, got {text!r}")
    return items


def _variant(text: str) -> str:
    return InfVariant.parse(text).value


DEFAULT_CODEBOOK_POSITIONS = [
    (60.0, 20.0, 1.5), (60.0, 30.0, 1.5), (66.0, 25.0, 1.5), (66.0, 35.0, 1.5),
    (72.0, 20.0, 1.5), (72.0, 30.0, 1.5), (72.0, 40.0, 1.5),
]

# key -> (parser, default)
SCHEMA = {
    "scenario.variant": (_variant, "DH"),
    "scenario.length_m": (float, 75.0),
    "scenario.width_m": (float, 50.0),
    "scenario.ceiling_height_m": (float, 10.0),
    "scenario.clutter_density": (float, 0.6),
    "scenario.clutter_height_m": (float, 2.0),
    "scenario.clutter_size_m": (_opt_float, None),
    "scenario.ap_pos": (_point, (30.0, 0.0, 8.0)),
    "ris.ris_id": (_int, 1),
    "ris.rows": (_int, 80),
    "ris.cols": (_int, 80),
    "ris.phase_bits": (_int, 1),
    "ris.center": (_point, (75.0, 30.0, 6.0)),
    "ris.normal": (_point, (-1.0, 0.0, 0.0)),
    "ris.spacing_m": (_opt_float, None),
    "ris.element_aperture_m": (_opt_float, None),
    "ris.rho_min": (float, 0.2),
    "ris.xi_rad": (float, 0.43 * math.pi),
    "ris.omega": (float, 1.6),
    "link.fc_hz": (float, 28e9),
    "link.k_ris_links_db": (float, math.inf),
    "link.k_bu_db": (float, 10.0),
    "link.shadow_fading": (_bool, True),
    "link.direct_blocked": (_bool, False),
    "power.pt_dbm": (float, 10.0),
    "power.pn_dbm": (float, -88.0),
    "mc.realizations": (_int, 1000),
    "mc.seed": (_int, 0),
    "mc.methods": (_methods, ["none", "iterative", "quantized", "codebook"]),
    "mc.ue_labels": (_list(str.strip), None),
    "sweep.elements": (_list(_int), None),
    "sweep.phase_bits": (_list(_int), None),
    "sweep.fc_hz": (_list(float), None),
    "sweep.variant": (_list(_variant), None),
    "sweep.pt_dbm": (_list(float), None),
    "codebook.positions": (_points, DEFAULT_CODEBOOK_POSITIONS),
    "codebook.file": (_opt_str, None),
    "codebook.realizations": (_int, 0),
    "e2.host": (str.strip, "127.0.0.1"),
    "e2.port": (_int, 0),
    "e2.period_ms": (_int, 100),
    "e2.periods": (_int, 10),
    "e2.xapp": (str.strip, "quantized"),
    "e2.ue": (str.strip, "near"),
    "e2.freeze": (_bool, False),
}
DEFAULT_UES = {"near": (72.0, 32.0, 1.5), "far": (62.0, 22.0, 1.5)}


@dataclass
class ExperimentConfig:
    values: dict = field(default_factory=lambda: {k: d for k, (_, d) in SCHEMA.items()})
    ues: dict = field(default_factory=lambda: dict(DEFAULT_UES))

    def __getitem__(self, key):
        return self.values[key]

    def override(self, **kv) -> "ExperimentConfig":
        vals = dict(self.values)
        for k, v in kv.items():
            key = k.replace("__", ".")
            if key not in vals:
                raise ConfigError(f"unknown key {key!r}")
            vals[key] = v
        return ExperimentConfig(vals, dict(self.ues))

    @property
    def variant(self) -> InfVariant:
        return InfVariant(self["scenario.variant"])

    @property
    def layout(self) -> FactoryLayout:
        return FactoryLayout(
            length_m=self["scenario.length_m"],
            width_m=self["scenario.width_m"],
            ceiling_height_m=self["scenario.ceiling_height_m"],
            clutter_density=self["scenario.clutter_density"],
            clutter_height_m=self["scenario.clutter_height_m"],
            clutter_size_m=self["scenario.clutter_size_m"],
        )

    @property
    def ue_labels(self) -> list[str]:
        return list(self["mc.ue_labels"] or self.ues)

    def scenario(self, ue_label: str | None = None) -> InfScenario:
        label = ue_label or next(iter(self.ues))
        placement = Placement(self["scenario.ap_pos"], self["ris.center"], self.ues[label])
        return validate_scenario(self.variant, self.layout, placement)

    @property
    def link(self) -> LinkParams:
        return LinkParams(
            fc_hz=self["link.fc_hz"],
            k_ris_links_db=self["link.k_ris_links_db"],
            k_bu_db=self["link.k_bu_db"],
            shadow_fading=self["link.shadow_fading"],
            direct_blocked=self["link.direct_blocked"],
        )

    @property
    def power(self) -> PowerConfig:
        return PowerConfig(self["power.pt_dbm"], self["power.pn_dbm"])

    @property
    def amp(self) -> AmplitudeParams:
        return AmplitudeParams(self["ris.rho_min"], self["ris.xi_rad"], self["ris.omega"])

    @property
    def ris_spec(self) -> RisSpec:
        kwargs = dict(normal=self["ris.normal"], element_aperture_m=self["ris.element_aperture_m"], amp=self.amp)
        if self["ris.spacing_m"] is not None:
            kwargs["spacing_m"] = self["ris.spacing_m"]
        return RisSpec.for_frequency(
            self["ris.rows"], self["ris.cols"], self["ris.phase_bits"], self["link.fc_hz"], self["ris.center"], **kwargs
        )

    def sweep_points(self) -> list[dict]:
        axes = [(k, self[f"sweep.{k}"]) for k in SWEEP_KEYS if self[f"sweep.{k}"] is not None]
        if not axes:
            return [{}]
        names = [k for k, _ in axes]
        return [dict(zip(names, combo)) for combo in itertools.product(*(v for _, v in axes))]

    def at(self, point: dict) -> "ExperimentConfig":
        """Config with one sweep point applied."""
        cfg = self
        if "variant" in point:
            cfg = cfg.override(**variant_overrides(cfg, InfVariant(point["variant"])))
        if "fc_hz" in point:
            cfg = cfg.override(link__fc_hz=float(point["fc_hz"]))
        if "elements" in point:
            rows, cols = grid_shape(point["elements"])
            cfg = cfg.override(ris__rows=rows, ris__cols=cols)
        if "phase_bits" in point:
            cfg = cfg.override(ris__phase_bits=int(point["phase_bits"]))
        if "pt_dbm" in point:
            cfg = cfg.override(power__pt_dbm=float(point["pt_dbm"]))
        return cfg


def grid_shape(n: int) -> tuple[int, int]:
    """Most square rows x cols factorisation of ``n``."""
    if n < 1:
        raise ConfigError(f"element count must be positive, got {n}")
    rows = int(math.isqrt(n))
    while n % rows:
        rows -= 1
    return rows, n // rows


def variant_overrides(cfg: ExperimentConfig, variant: InfVariant) -> dict:
    """Adjust clutter statistics so the base geometry fits ``variant``."""
    r = cfg["scenario.clutter_density"]
    h_c = cfg["scenario.clutter_height_m"]
    ap_z = cfg["scenario.ap_pos"][2]
    ue_z = min(p[2] for p in cfg.ues.values())
    out = {"scenario__variant": variant.value, "scenario__clutter_size_m": None}
    if variant.sparse and r >= 0.4:
        out["scenario__clutter_density"] = 0.2
    if variant.dense and r < 0.4:
        out["scenario__clutter_density"] = 0.6
    if variant.clutter_embedded_ap and ap_z > h_c:
        out["scenario__clutter_height_m"] = ap_z
    if variant is InfVariant.HH:
        out["scenario__clutter_size_m"] = cfg["scenario.clutter_size_m"] or 2.0
        if ue_z <= h_c:
            out["scenario__clutter_height_m"] = max(0.0, ue_z - 0.5)
    return out


def _validate(cfg: ExperimentConfig) -> None:
    if cfg["mc.realizations"] < 1:
        raise ConfigError("mc.realizations must be at least 1")
    if not cfg.ues:
        raise ConfigError("at least one ue.<label> position is required")
    unknown = [u for u in cfg.ue_labels if u not in cfg.ues]
    if unknown:
        raise ConfigError(f"mc.ue_labels names unknown UE labels {unknown}")
    if cfg["e2.ue"] not in cfg.ues:
        raise ConfigError(f"e2.ue {cfg['e2.ue']!r} is not a configured UE label")
    methods = cfg["mc.methods"]
    for point in cfg.sweep_points():
        sub = cfg.at(point)
        try:
            spec = sub.ris_spec
            for label in sub.ues:
                sub.scenario(label)
            _ = sub.link, sub.power
        except ScenarioError as exc:
            raise ConfigError(f"scenario constraint violated at sweep point {point}: {exc}") from exc
        except ValueError as exc:
            raise ConfigError(f"invalid parameters at sweep point {point}: {exc}") from exc
        if spec.continuous and any(m in methods for m in ("iterative", "codebook", "bruteforce")):
            raise ConfigError("iterative, codebook and bruteforce need phase_bits >= 1")
        if "bruteforce" in methods and spec.phase_bits * spec.n_elements > 24:
            raise ConfigError(f"bruteforce needs (2^b)^N <= 2^24, got b={spec.phase_bits} N={spec.n_elements}")


def parse_config(text: str) -> ExperimentConfig:
    """Parse config text; missing keys keep the case-study defaults."""
    values = {k: d for k, (_, d) in SCHEMA.items()}
    ues: dict = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, val = line.partition("=")
        key = key.strip()
        if not sep or "." not in key:
            raise ConfigError(f"line {lineno}: expected 'section.key = value', got {raw.strip()!r}")
        section, _, name = key.partition(".")
        try:
            if section == "ue":
                if not name or any(c.isspace() for c in name):
                    raise ConfigError(f"line {lineno}: bad UE label {name!r}")
                ues[name] = _point(val)
                continue
            if key not in SCHEMA:
                raise ConfigError(f"line {lineno}: unknown key {key!r}")
            values[key] = SCHEMA[key][0](val)
        except ConfigError:
            raise
        except ValueError as exc:
            raise ConfigError(f"line {lineno}: bad value for {key}: {exc}") from exc
    cfg = ExperimentConfig(values, ues or dict(DEFAULT_UES))
    _validate(cfg)
    return cfg


def load_config(path=None) -> ExperimentConfig:
    return parse_config(Path(path).read_text() if path else "")


def gain_db(rate: float, base: float) -> float:
    num = 2.0**rate - 1.0
    den = 2.0**base - 1.0
    if num == den:
        return 0.0
    if den <= 0.0:
        return math.inf
    if num <= 0.0:
        return -math.inf
    return 10.0 * math.log10(num / den)


def _fmt(v) -> str:
    if isinstance(v, bool):
        return str(int(v))
    if isinstance(v, float):
        return repr(v)
    return str(v)


def codebook_for(cfg: ExperimentConfig) -> Codebook:
    spec = cfg.ris_spec
    if cfg["codebook.file"]:
        return Codebook.load(cfg["codebook.file"], expect=spec)
    return build_codebook(
        spec,
        cfg.scenario(),
        cfg["codebook.positions"],
        cfg.power,
        link=cfg.link,
        realizations=cfg["codebook.realizations"],
        seed=cfg["mc.seed"],
    )


def realization_rng(seed: int, realization_idx: int, ue_label: str) -> np.random.Generator:
    """Stream behind one CSV row; shared by every sweep point and method."""
    return substream(seed, realization_idx, f"mc/{ue_label}")


def evaluate_methods(ch, spec: RisSpec, power: PowerConfig, methods, codebook=None) -> dict:
    out = {}
    for m in methods:
        if m == "none":
            out[m] = baseline_rate(ch, power)
        elif m == "quantized":
            out[m] = achievable_rate(ch, optimize_quantized(ch, spec), spec.amp, power)
        elif m == "iterative":
            out[m] = achievable_rate(ch, optimize_iterative(ch, spec, power), spec.amp, power)
        elif m == "codebook":
            out[m] = select_codebook_entry(ch, codebook, spec, power)[2]
        elif m == "bruteforce":
            out[m] = brute_force_optimum(ch, spec, power)[1]
    return out


@dataclass
class McResult:
    rows: list[dict]
    summary: list[dict]


def iter_mc(cfg: ExperimentConfig, summary: list | None = None):
    """Yield CSV rows in (sweep point, UE label, realization, method) order.

    Per-(point, method, label) means are appended to ``summary`` as each
    block completes.
    """
    seed = cfg["mc.seed"]
    methods = cfg["mc.methods"]
    for point in cfg.sweep_points():
        sub = cfg.at(point)
        spec, link, power = sub.ris_spec, sub.link, sub.power
        book = codebook_for(sub) if "codebook" in methods else None
        for label in sub.ue_labels:
            sc = sub.scenario(label)
            acc = {m: [] for m in methods}
            for r in range(sub["mc.realizations"]):
                ch = generate_realization(sc, None, spec, link, realization_rng(seed, r, label), seed_tag=(seed, r, label))
                rates = evaluate_methods(ch, spec, power, methods, book)
                base = baseline_rate(ch, power)
                for m in methods:
                    g = gain_db(rates[m], base)
                    acc[m].append((rates[m], g))
                    yield dict(
                        seed=seed, realization_idx=r, variant=sub.variant.value, n_elements=spec.n_elements,
                        phase_bits=spec.phase_bits, fc_hz=link.fc_hz, pt_dbm=power.pt_dbm, method=m,
                        ue_label=label, los_flag=int(ch.los), rate_bps_hz=rates[m], baseline_rate_bps_hz=base,
                        gain_db=g,
                    )
            if summary is not None:
                for m in methods:
                    arr = np.array(acc[m])
                    summary.append(dict(
                        variant=sub.variant.value, n_elements=spec.n_elements, phase_bits=spec.phase_bits,
                        fc_hz=link.fc_hz, pt_dbm=power.pt_dbm, method=m, ue_label=label,
                        mean_rate_bps_hz=float(arr[:, 0].mean()), mean_gain_db=float(arr[:, 1].mean()),
                        count=len(arr),
                    ))


def run_mc(cfg: ExperimentConfig) -> McResult:
    """Monte Carlo over sweep points x UE labels x realizations."""
    summary: list[dict] = []
    rows = list(iter_mc(cfg, summary))
    return McResult(rows, summary)


SUMMARY_COLUMNS = (
    "variant", "n_elements", "phase_bits", "fc_hz", "pt_dbm", "method", "ue_label",
    "mean_rate_bps_hz", "mean_gain_db", "count",
)


def write_mc_csv(cfg: ExperimentConfig, out, generated_at: str | None = None) -> McResult:
    """Stream the Monte Carlo CSV to ``out``.

    Summary lines follow the rows as ``# summary:`` comments. If the run
    is interrupted the rows written so far are flushed with a
    ``# truncated`` marker.
    """
    generated_at = generated_at or datetime.now(timezone.utc).isoformat()
    out.write(f"# generated_at={generated_at}\n")
    out.write(f"# {GAIN_DEFINITION}\n")
    w = csv.writer(out, lineterminator="\n")
    w.writerow(CSV_COLUMNS)
    rows: list[dict] = []
    summary: list[dict] = []
    try:
        for row in iter_mc(cfg, summary):
            w.writerow([_fmt(row[c]) for c in CSV_COLUMNS])
            rows.append(row)
    except BaseException:
        out.write(f"# truncated after {len(rows)} rows\n")
        out.flush()
        raise
    out.write("# summary: " + ",".join(SUMMARY_COLUMNS) + "\n")
    for s in summary:
        out.write("# summary: " + ",".join(_fmt(s[c]) for c in SUMMARY_COLUMNS) + "\n")
    out.flush()
    return McResult(rows, summary)


def cmd_mc(cfg: ExperimentConfig, out_path=None) -> McResult:
    if not out_path:
        return run_mc(cfg)
    with open(out_path, "w", newline="") as fh:
        return write_mc_csv(cfg, fh)


def read_mc_csv(text: str) -> list[dict]:
    body = [ln for ln in text.splitlines() if ln and not ln.startswith("#")]
    return list(csv.DictReader(io.StringIO("\n".join(body))))


def cmd_codebook(cfg: ExperimentConfig, out_path, positions=None, labels=None) -> Codebook:
    book = build_codebook(
        cfg.ris_spec,
        cfg.scenario(),
        positions or cfg["codebook.positions"],
        cfg.power,
        link=cfg.link,
        labels=labels,
        realizations=cfg["codebook.realizations"],
        seed=cfg["mc.seed"],
    )
    book.save(out_path)
    return book


def agent_state(cfg: ExperimentConfig) -> AgentState:
    return AgentState(
        scenario=cfg.scenario(cfg["e2.ue"]),
        spec=cfg.ris_spec,
        link=cfg.link,
        power=cfg.power,
        ris_id=cfg["ris.ris_id"],
        seed=cfg["mc.seed"],
        report_period_ms=cfg["e2.period_ms"],
        freeze=cfg["e2.freeze"],
    )


def ric_service(cfg: ExperimentConfig, events: EventLog | None = None) -> RicService:
    xapp = cfg["e2.xapp"]
    book = codebook_for(cfg) if xapp == "codebook" else None
    registry = builtin_registry(cfg.power, book)
    registry.get(xapp)
    return RicService(
        registry,
        {cfg["ris.ris_id"]: xapp},
        default_xapp=xapp,
        power=cfg.power,
        amp=cfg.amp,
        report_period_ms=cfg["e2.period_ms"],
        events=events,
    )


@dataclass
class E2eResult:
    exit_code: int
    records: list
    log_lines: list[str]
    indications: int
    message: str = ""


async def run_e2e(cfg: ExperimentConfig, rel_tol: float = 1e-9) -> E2eResult:
    events = EventLog("rislab.e2e")
    ric = ric_service(cfg, events)
    await ric.start(cfg["e2.host"], cfg["e2.port"])
    try:
        run = await run_agent(
            cfg["e2.host"], ric.port, agent_state(cfg), periods=cfg["e2.periods"], max_retries=3,
            base_delay=0.05, events=events,
        )
    finally:
        await ric.stop()
    records = ric.records
    problems = []
    seqs = [r.seq for r in records]
    if any(b <= a for a, b in zip(seqs, seqs[1:])):
        problems.append("control seq not strictly increasing")
    for r in records:
        if r.status != e2.ACK_OK or r.applied_rate is None:
            problems.append(f"seq {r.seq}: ack status {r.status}")
        elif abs(r.predicted_rate - r.applied_rate) > rel_tol * max(abs(r.predicted_rate), 1e-300):
            problems.append(f"seq {r.seq}: predicted {r.predicted_rate!r} != applied {r.applied_rate!r}")
    if run.indications != cfg["e2.periods"]:
        problems.append(f"{run.indications} indications for {cfg['e2.periods']} periods")
    code = EXIT_RUNTIME if problems else EXIT_OK
    return E2eResult(code, records, events.lines, run.indications, "; ".join(problems))


def cmd_e2e(cfg: ExperimentConfig, out_path=None) -> E2eResult:
    if cfg["e2.xapp"] == "codebook" and cfg["codebook.file"]:
        try:
            Codebook.load(cfg["codebook.file"], expect=cfg.ris_spec)
        except FingerprintMismatch as exc:
            return E2eResult(EXIT_RUNTIME, [], [], 0, str(exc))
    result = asyncio.run(run_e2e(cfg))
    if out_path:
        with open(out_path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(("seq", "method", "predicted_rate", "applied_rate"))
            for r in result.records:
                w.writerow((r.seq, r.method, _fmt(r.predicted_rate), _fmt(r.applied_rate)))
        Path(str(out_path) + ".log").write_text("\n".join(result.log_lines) + "\n")
    return result


def _stop_on_signals(loop: asyncio.AbstractEventLoop) -> asyncio.Event:
    stop = asyncio.Event()
    for sig in (signal.SIGINT, signal.SIGTERM):
        try:
            loop.add_signal_handler(sig, stop.set)
        except (NotImplementedError, RuntimeError):  # pragma: no cover
            pass
    return stop


async def serve_ric(cfg: ExperimentConfig, stop: asyncio.Event | None = None, ready=None) -> int:
    stop = stop or _stop_on_signals(asyncio.get_running_loop())
    ric = ric_service(cfg)
    await ric.start(cfg["e2.host"], cfg["e2.port"])
    log.info("RIC listening on %s:%d", cfg["e2.host"], ric.port)
    if ready is not None:
        ready(ric)
    await ric.serve_until(stop)
    return EXIT_OK


async def serve_agent(cfg: ExperimentConfig, stop: asyncio.Event | None = None) -> int:
    stop = stop or _stop_on_signals(asyncio.get_running_loop())
    await run_agent(cfg["e2.host"], cfg["e2.port"], agent_state(cfg), periods=None, stop=stop)
    return EXIT_OK
