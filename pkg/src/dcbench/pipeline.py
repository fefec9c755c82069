"""Pipeline stages and the ``run`` driver.

Every stage is a plain function over file paths so it runs the same way
standalone (from the CLI) and inside a configured run. A run writes all
stage outputs to one directory together with ``manifest.json``, which
records the config, tool versions, seeds and SHA-256 of every input and
output. Manifests contain no wall-clock data, so identical configs give
byte-identical manifests.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import platform
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from . import __version__
from .analysis import (
    DEFAULT_SIZE_BINS,
    ClassificationReport,
    classify_trace,
    flow_cdf,
    packet_size_histogram,
    traffic_matrix,
    window_series,
)
from .errors import ConfigError, DCBenchError, InsufficientDataError, StageError
from .extract import build_component, extract_micro
from .metrics import DEFAULT_MAPPING, compare_report, evaluate
from .pcap import ExtractStats, ingest_pcap
from .simulator import SimConfig, Simulation, amplify_sweep, outcomes_from_csv, outcomes_to_csv, preset_switch
from .synth import BurstSchedule, Model, SynthSpec, parse_size_model
from .topology import Tier, build, load_topology, save_topology
from .trace import NodeRegistry, PatternLabel, PortPair, canonicalize_nodes, fuse_captures, read_trace, write_trace

log = logging.getLogger("dcbench")

ANALYSIS_VIEWS = ("cdf", "matrix", "hist", "windows")


def _dump_json(obj, path: Path):
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _write_text(path: Path, text: str):
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text)


def _load_json(path: Path):
    try:
        return json.loads(Path(path).read_text())
    except FileNotFoundError:
        raise ConfigError(f"file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path} is not valid JSON: {exc}") from None


def _read_trace(path: Path):
    if not Path(path).is_file():
        raise ConfigError(f"trace file not found: {path}")
    return read_trace(path)


class StageLog(logging.LoggerAdapter):
    def process(self, msg, kwargs):
        return f"[{self.extra['stage']}] {msg}", kwargs


@dataclass
class Context:
    """Path resolution and logging for one stage invocation."""

    stage: str = "cli"
    in_dirs: tuple[Path, ...] = (Path("."),)
    out_dir: Path = Path(".")
    inputs: list[Path] = field(default_factory=list)
    outputs: list[Path] = field(default_factory=list)

    @property
    def log(self):
        return StageLog(log, {"stage": self.stage})

    def input(self, p) -> Path:
        p = Path(p)
        cands = [p] if p.is_absolute() else [d / p for d in self.in_dirs]
        for c in cands:
            if c.exists():
                self.inputs.append(c)
                return c
        raise ConfigError(f"stage '{self.stage}': input not found: {p}")

    def output(self, p) -> Path:
        p = Path(p)
        out = p if p.is_absolute() else self.out_dir / p
        out.parent.mkdir(parents=True, exist_ok=True)
        return out

    def wrote(self, *paths: Path):
        self.outputs.extend(paths)


# --------------------------------------------------------------------------
# stages
# --------------------------------------------------------------------------


def stage_ingest(ctx: Context, *, pcap, out, port_map=None, node_key="ip:port", **_):
    files = [pcap] if isinstance(pcap, (str, Path)) else list(pcap)
    if not files:
        raise ConfigError("ingest needs at least one pcap file")
    paths = [ctx.input(f) for f in files]
    if port_map is None:
        if len(paths) > 1:
            raise ConfigError("fusing several captures needs a port map")
        pmap = {str(files[0]): PortPair()}
    elif isinstance(port_map, dict):
        pmap = {k: PortPair(v.get("ingress"), v.get("egress")) for k, v in port_map.items()}
    else:
        raw = _load_json(ctx.input(port_map))
        pmap = {k: PortPair(v.get("ingress"), v.get("egress")) for k, v in raw.items()}
    # entries may name a capture by its path as given or by its file name
    registry = NodeRegistry()
    stats = ExtractStats()
    captures = {}
    for f, path in zip(files, paths):
        key = str(f) if str(f) in pmap else Path(f).name
        captures[key] = ingest_pcap(path.read_bytes(), registry, stats, node_key=node_key, canonical=False)
    trace = canonicalize_nodes(fuse_captures(captures, pmap))
    dest = ctx.output(out)
    write_trace(trace, dest)
    ctx.wrote(dest)
    skipped = ", ".join(f"{k}={v}" for k, v in sorted(stats.skipped.items())) or "none"
    ctx.log.info("parsed %d packets, emitted %d records (%d padded), skipped: %s; fused trace has %d records",
                 stats.parsed, stats.emitted, stats.padded, skipped, len(trace))
    return trace


def stage_topo(ctx: Context, *, kind, out, **params):
    params = {k: v for k, v in params.items() if v is not None and k not in ("stage", "seed")}
    topo = build(kind, **params)
    dest = ctx.output(out)
    save_topology(topo, dest)
    ctx.wrote(dest)
    h, s, l = topo.counts()
    ctx.log.info("%s: %d hosts, %d switches, %d links", topo.kind.value, h, s, l)
    return topo


def synth_spec_from_params(p: dict, seed: int) -> SynthSpec:
    bursts = None
    if p.get("burst_period_ms") is not None:
        bursts = BurstSchedule(
            period_us=round(p["burst_period_ms"] * 1000),
            length_us=round(p["burst_length_ms"] * 1000),
            p=float(p["burst_p"]),
            offset_us=round(p.get("burst_offset_ms", 0) * 1000),
        )
    return SynthSpec(
        model=Model.parse(p["model"]),
        nodes=int(p["nodes"]),
        duration_us=round(float(p["duration_ms"]) * 1000),
        p=float(p["p"]),
        size_model=parse_size_model(str(p.get("size", "512"))),
        tick_us=int(p.get("tick_us", 10)),
        seed=int(p.get("seed", seed)),
        hotspot_fraction=float(p.get("hotspot_fraction", 0.5)),
        hotspot_node=int(p.get("hotspot_node", 0)),
        bursts=bursts,
    )


def stage_synth(ctx: Context, *, out, seed=0, **params):
    from .synth import generate

    spec = synth_spec_from_params(params, seed)
    trace = generate(spec)
    dest = ctx.output(out)
    write_trace(trace, dest)
    ctx.wrote(dest)
    ctx.log.info("%s model, %d nodes, seed %d: %d records", spec.model.value, spec.nodes, spec.seed, len(trace))
    return trace


def _fmt(x: float) -> str:
    return repr(float(x))


def stage_analyze(ctx: Context, *, trace, out, window_ms=50, emit=ANALYSIS_VIEWS, metric="bits",
                  bins=DEFAULT_SIZE_BINS, **_):
    tr = _read_trace(ctx.input(trace))
    w = round(float(window_ms) * 1000)
    views = emit.split(",") if isinstance(emit, str) else list(emit)
    bad = [v for v in views if v not in ANALYSIS_VIEWS]
    if bad:
        raise ConfigError(f"unknown analysis view(s): {', '.join(bad)}")
    out_dir = ctx.output(out)
    out_dir.mkdir(parents=True, exist_ok=True)
    series = window_series(tr, w)
    if "windows" in views:
        lines = ["window,start_us,bits,packets"]
        lines += [f"{i},{i * w},{b},{p}" for i, (b, p) in enumerate(zip(series.bits.tolist(), series.packets.tolist()))]
        _write_text(out_dir / "windows.csv", "\n".join(lines) + "\n")
        ctx.wrote(out_dir / "windows.csv")
    if "cdf" in views:
        lines = ["normalized_time,cumulative_fraction"] + [f"{_fmt(x)},{_fmt(y)}" for x, y in flow_cdf(tr)]
        _write_text(out_dir / "cdf.csv", "\n".join(lines) + "\n")
        ctx.wrote(out_dir / "cdf.csv")
    if "matrix" in views:
        tm = traffic_matrix(tr)
        lines = ["src," + ",".join(str(j) for j in range(tm.n))]
        lines += [f"{i}," + ",".join(str(v) for v in row) for i, row in enumerate(tm.cells.tolist())]
        _write_text(out_dir / "matrix.csv", "\n".join(lines) + "\n")
        ctx.wrote(out_dir / "matrix.csv")
    if "hist" in views:
        h = packet_size_histogram(tr, bins)
        lines = ["bin_low,bin_high,probability"]
        lines += [f"{a},{b},{_fmt(p)}" for a, b, p in zip(h.edges, h.edges[1:], h.probabilities)]
        _write_text(out_dir / "hist.csv", "\n".join(lines) + "\n")
        ctx.wrote(out_dir / "hist.csv")
    try:
        report = classify_trace(tr, w, metric)
    except InsufficientDataError as exc:
        # the views above stay useful for short traces
        ctx.log.warning("no classification written: %s", exc)
        return None
    _dump_json(report.to_json_dict(), out_dir / "classification.json")
    ctx.wrote(out_dir / "classification.json")
    ctx.log.info("%d windows of %d us; dominant pattern %s over %d segment(s)",
                 len(series), w, report.dominant.value, len(report.segments))
    return report


def stage_classify(ctx: Context, *, trace, out=None, window_ms=50, metric="bits", **_):
    tr = _read_trace(ctx.input(trace))
    report = classify_trace(tr, round(float(window_ms) * 1000), metric)
    if out is not None:
        dest = ctx.output(out)
        _dump_json(report.to_json_dict(), dest)
        ctx.wrote(dest)
    ctx.log.info("dominant %s; segments: %s", report.dominant.value,
                 ", ".join(f"{s.label.value}[{s.start_us},{s.end_us})" for s in report.segments))
    return report


def stage_extract(ctx: Context, *, trace, out, pattern=None, component=False, report=None, window_ms=50,
                  max_duration_ms=None, metric="bits", **_):
    tr = _read_trace(ctx.input(trace))
    if report is not None:
        rep = ClassificationReport.from_json_dict(_load_json(ctx.input(report)))
    else:
        rep = classify_trace(tr, round(float(window_ms) * 1000), metric)
    if component:
        res = build_component(tr, rep)
    else:
        if pattern is None:
            raise ConfigError("extract needs a pattern or component mode")
        cap = None if max_duration_ms is None else round(float(max_duration_ms) * 1000)
        res = extract_micro(tr, rep, PatternLabel.parse(pattern), cap)
    dest = ctx.output(out)
    write_trace(res, dest)
    ctx.wrote(dest)
    what = "component" if component else f"{PatternLabel.parse(pattern).value} micro"
    ctx.log.info("%s trace: %d of %d records, %d label span(s)", what, len(res), len(tr), len(res.meta.pattern_labels))
    return res


def sim_config_from_params(topo, *, switch="s7706", tiers=None, amplify=1, seed=0, delay_us=None,
                           buffer_kb=None, latency_us=None, port_rate_gbps=None, routing="ecmp", **_):
    over = dict(
        buffer_bytes=None if buffer_kb is None else int(buffer_kb * 1024),
        latency_us=latency_us,
        port_rate_bps=None if port_rate_gbps is None else int(port_rate_gbps * 10**9),
    )
    base = preset_switch(switch).with_overrides(**over)
    models = {t: base for t in Tier}
    for tier, name in (tiers or {}).items():
        models[Tier(tier)] = preset_switch(name).with_overrides(**over)
    kw = {} if delay_us is None else {"delay_us": float(delay_us)}
    return SimConfig(topo, models, amplification=int(amplify), seed=int(seed), routing=routing, **kw)


def stage_simulate(ctx: Context, *, topo, out, trace=None, traces=None, switch="s7706", amplify=1,
                   amplify_sweep=None, seed=0, **params):
    """Replay one or more traces on one or more switch presets.

    With a single trace and a single switch ``out`` is the outcome CSV;
    otherwise ``out`` is a results directory laid out as
    ``<switch>/<trace name>.csv``, ready for the report stage.
    """
    topo_spec = load_topology(ctx.input(topo))
    if traces is None:
        if trace is None:
            raise ConfigError("simulate needs a trace")
        traces = {Path(trace).stem: trace}
    switches = [switch] if isinstance(switch, str) else list(switch)
    loaded = {name: _read_trace(ctx.input(p)) for name, p in sorted(traces.items())}
    single = len(loaded) == 1 and len(switches) == 1 and not amplify_sweep
    results = {}
    for sw in switches:
        for name, tr in loaded.items():
            cfg = sim_config_from_params(topo_spec, switch=sw, amplify=amplify, seed=seed, **params)
            if amplify_sweep:
                factors = [int(k) for k in (amplify_sweep.split(",") if isinstance(amplify_sweep, str) else amplify_sweep)]
                rounds = amplify_sweep_run(ctx, tr, cfg, factors, Path(out) / sw / name)
                results[(sw, name)] = rounds
                continue
            sim = Simulation(cfg)
            outcomes = sim.run(tr)
            dest = ctx.output(out if single else Path(out) / sw / f"{name}.csv")
            _write_text(dest, outcomes_to_csv(outcomes))
            ctx.wrote(dest)
            drops = sum(o.deliver_us is None for o in outcomes)
            ctx.log.info("%s on %s: %d packets, %d dropped, mean port utilization %.3f",
                         name, sw, len(outcomes), drops, sim.utilization())
            results[(sw, name)] = outcomes
    return results


def amplify_sweep_run(ctx, trace, cfg, factors, out_dir):
    rounds = amplify_sweep(trace, cfg, factors)
    summary = []
    for r in rounds:
        dest = ctx.output(out_dir / f"k{r.factor}.csv")
        _write_text(dest, outcomes_to_csv(r.outcomes))
        ctx.wrote(dest)
        drops = sum(o.deliver_us is None for o in r.outcomes)
        summary.append({"factor": r.factor, "packets": len(r.outcomes), "dropped": drops,
                        "mean_port_utilization": round(r.utilization, 9)})
        ctx.log.info("round k=%d: %d packets, %d dropped, mean port utilization %.3f",
                     r.factor, len(r.outcomes), drops, r.utilization)
    dest = ctx.output(out_dir / "sweep.json")
    _dump_json({"rounds": summary}, dest)
    ctx.wrote(dest)
    return rounds


def stage_report(ctx: Context, *, results, out, mapping=None, window_ms=50, **_):
    root = ctx.input(results)
    if mapping is None:
        mp = DEFAULT_MAPPING
    elif isinstance(mapping, dict):
        mp = mapping
    else:
        mp = _load_json(ctx.input(mapping))
    w = round(float(window_ms) * 1000)
    reports = {}
    devices = sorted(d.name for d in root.iterdir() if d.is_dir())
    for d in devices:
        for f in sorted((root / d).glob("*.csv")):
            reports[(d, f.stem)] = evaluate(outcomes_from_csv(f.read_text()), w)
            ctx.inputs.append(f)
    table = compare_report(devices, reports, mp)
    table["window_us"] = w
    table["results"] = {f"{d}/{t}": r.to_json_dict() for (d, t), r in sorted(reports.items())}
    dest = ctx.output(out)
    _dump_json(table, dest)
    ctx.wrote(dest)
    ctx.log.info("compared %d device(s) over %d result file(s)", len(devices), len(reports))
    return table


STAGES: dict[str, Callable] = {
    "ingest": stage_ingest,
    "topo": stage_topo,
    "synth": stage_synth,
    "analyze": stage_analyze,
    "classify": stage_classify,
    "extract": stage_extract,
    "simulate": stage_simulate,
    "report": stage_report,
}


# --------------------------------------------------------------------------
# run driver
# --------------------------------------------------------------------------


def sha256_file(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _rel(p: Path, base: Path) -> str:
    try:
        return Path(os.path.relpath(p, base)).as_posix()
    except ValueError:
        return p.as_posix()


def run_pipeline(config_path, run_dir=None) -> Path:
    """Execute the configured stages in order; returns the run directory."""
    config_path = Path(config_path)
    cfg = _load_json(config_path)
    if not isinstance(cfg, dict) or not isinstance(cfg.get("stages"), list) or not cfg["stages"]:
        raise ConfigError(f"{config_path}: config needs a nonempty 'stages' array")
    base = config_path.parent
    run_dir = Path(run_dir) if run_dir is not None else base / cfg.get("run_dir", f"runs/{cfg.get('name', 'run')}")
    run_dir.mkdir(parents=True, exist_ok=True)
    seed = int(cfg.get("seed", 0))

    manifest = {
        "name": cfg.get("name"),
        "config": cfg,
        "versions": {"dcbench": __version__, "numpy": np.__version__, "python": platform.python_version()},
        "seed": seed,
        "stages": [],
        "status": "running",
    }

    def save():
        _dump_json(manifest, run_dir / "manifest.json")

    for i, st in enumerate(cfg["stages"]):
        if not isinstance(st, dict) or "stage" not in st:
            raise ConfigError(f"{config_path}: stage #{i} lacks a 'stage' field")
        name = st["stage"]
        fn = STAGES.get(name)
        if fn is None:
            raise ConfigError(f"{config_path}: unknown stage '{name}' (#{i})")
        params = {k: v for k, v in st.items() if k != "stage"}
        params.setdefault("seed", seed)
        ctx = Context(stage=name, in_dirs=(run_dir, base), out_dir=run_dir)
        ctx.log.info("starting")
        try:
            fn(ctx, **params)
        except DCBenchError as exc:
            manifest["status"] = f"failed at stage {i} ({name})"
            manifest["error"] = str(exc)
            save()
            raise StageError(name, exc) from exc
        except TypeError as exc:
            manifest["status"] = f"failed at stage {i} ({name})"
            manifest["error"] = str(exc)
            save()
            raise StageError(name, ConfigError(f"bad parameters: {exc}")) from exc
        manifest["stages"].append(
            {
                "stage": name,
                "seed": params["seed"],
                "inputs": {_rel(p, run_dir) if _is_under(p, run_dir) else _rel(p, base): sha256_file(p)
                           for p in sorted(set(ctx.inputs)) if p.is_file()},
                "outputs": {_rel(p, run_dir): sha256_file(p) for p in sorted(set(ctx.outputs))},
            }
        )
        save()
    manifest["status"] = "ok"
    save()
    return run_dir


def _is_under(p: Path, root: Path) -> bool:
    try:
        Path(p).resolve().relative_to(root.resolve())
        return True
    except ValueError:
        return False
