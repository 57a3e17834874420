"""Command-line entry point: ``simulate``, ``sweep`` and ``inspect``.

Exit codes: 0 success, 1 internal invariant violation, 2 configuration or
usage error, 3 unreadable or corrupt fixture/input.
"""
from __future__ import annotations

import argparse
import itertools
import json
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import yaml

from .config import (
    DATA_DIR,
    CoreConfig,
    constants_path,
    from_dict,
    load_constants,
    load_yaml,
    parse_assignment,
    to_dict,
)
from .errors import ConfigError, FixtureError, GeometryError, InvariantError
from .fixtures import MANIFEST, load_fixture
from .inference import (
    QuantModel,
    baseline,
    evaluate,
    load_dataset,
    load_model,
    oracle_conv,
)
from .mapper import LayerSpec, Schedule, plan_layer
from .opc import MODES, execute_schedule
from .perf import estimate, programming_cost, synthetic_weights
from .plotting import plot_breakdown, plot_occupancy, plot_sweep
from .report import Report, atomic_write, csv_text, now, summary_text

SECTIONS = ("run", "core", "layer", "sweep")
RUN_DEFAULTS = {
    "mode": "ideal", "seed": 0, "constants": "default", "model": None, "dataset": None,
    "samples": None, "weights_seed": 0, "check_frames": 2, "output": None,
}
SWEEP_COLUMNS = ["bit_width", "noise", "kernel_size", "macs_per_cycle", "accuracy", "power",
                 "power_per_pixel", "efficiency", "throughput", "frame_rate", "latency",
                 "utilization", "status"]
PKG_PREFIX = "pkg:"


# ------------------------------------------------------------------ config


@dataclass(frozen=True)
class RunConfig:
    core: CoreConfig
    mode: str = "ideal"
    seed: int = 0
    constants: str = "default"
    model: Path | None = None
    dataset: Path | None = None
    samples: int | None = None
    layer: LayerSpec | None = None
    weights_seed: int = 0
    check_frames: int = 2
    axes: tuple = ()
    output: Path | None = None
    raw: dict = field(default_factory=dict, compare=False, repr=False)
    base_dir: Path = Path(".")


def _qualify(key: str) -> str:
    head = key.split(".", 1)[0]
    return key if head in SECTIONS else "core." + key


def _set_path(doc: dict, path: str, value) -> None:
    parts = path.split(".")
    node = doc
    for part in parts[:-1]:
        nxt = node.setdefault(part, {})
        if not isinstance(nxt, dict):
            raise ConfigError(f"cannot set {path!r}: {part!r} is not a section")
        node = nxt
    node[parts[-1]] = value


def _merge(base: dict, update: dict) -> dict:
    out = dict(base)
    for k, v in (update or {}).items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = v
    return out


def resolve_path(value, base_dir: Path, what: str) -> Path:
    text = str(value)
    if text.startswith(PKG_PREFIX):
        path = DATA_DIR / text[len(PKG_PREFIX):]
    else:
        path = Path(text)
        if not path.is_absolute():
            path = base_dir / path
    if not path.exists():
        raise FixtureError(f"{what} not found: {path}")
    return path


def build_run(raw: dict, overrides: dict | None = None, base_dir: Path = Path(".")) -> RunConfig:
    """Layer defaults, the constants fixture, the run file and overrides."""
    if not isinstance(raw, dict):
        raise ConfigError("run config must be a mapping")
    unknown = set(raw) - set(SECTIONS)
    if unknown:
        raise ConfigError(f"unknown config sections: {sorted(unknown)}")
    doc = yaml.safe_load(yaml.safe_dump(raw))
    for key, value in (overrides or {}).items():
        _set_path(doc, _qualify(key), value)
    run = _merge(RUN_DEFAULTS, doc.get("run") or {})
    bad = set(run) - set(RUN_DEFAULTS)
    if bad:
        raise ConfigError(f"unknown run keys: {sorted(bad)}")
    if run["mode"] not in MODES:
        raise ConfigError(f"mode must be one of {MODES}, got {run['mode']!r}")
    cpath = constants_path(run["constants"])
    if not cpath.is_absolute() and not cpath.exists():
        cpath = base_dir / cpath
    constants = load_constants(cpath)
    base = to_dict(CoreConfig(constants=constants))
    base["awc"]["gain_error_per_bit"] = []  # zeros sized to whatever bit width is chosen
    core_doc = _merge(base, doc.get("core") or {})
    core = from_dict(CoreConfig, core_doc)
    layer = None
    if doc.get("layer"):
        try:
            layer = LayerSpec(**doc["layer"])
        except TypeError as exc:
            raise ConfigError(f"invalid layer: {exc}") from exc
    model = resolve_path(run["model"], base_dir, "model fixture") if run["model"] else None
    dataset = resolve_path(run["dataset"], base_dir, "dataset fixture") if run["dataset"] else None
    if model is None and layer is None:
        raise ConfigError("config needs either run.model or a layer section")
    if dataset is not None and model is None:
        raise ConfigError("run.dataset needs run.model")
    axes = tuple((_qualify(k), tuple(v if isinstance(v, list) else [v]))
                 for k, v in ((doc.get("sweep") or {}).get("axes") or {}).items())
    return RunConfig(
        core=core, mode=run["mode"], seed=int(run["seed"]), constants=str(run["constants"]),
        model=model, dataset=dataset,
        samples=None if run["samples"] is None else int(run["samples"]),
        layer=layer, weights_seed=int(run["weights_seed"]),
        check_frames=int(run["check_frames"]), axes=axes,
        output=None if run["output"] is None else base_dir / run["output"],
        raw=raw, base_dir=base_dir,
    )


def load_run_config(path, sets=()) -> RunConfig:
    path = Path(path)
    overrides = dict(parse_assignment(s) for s in sets)
    return build_run(load_yaml(path), overrides, path.parent)


# --------------------------------------------------------------- execution


def _ideal_check(schedule: Schedule, weights, cfg: CoreConfig, frames: int, seed: int) -> bool:
    """Ideal optical output equals the integer reference on random frames."""
    layer = schedule.layer
    if frames <= 0:
        return True
    rng = np.random.default_rng([seed, 0xC4EC])
    if layer.kind == "mlp":
        codes = rng.integers(0, 3, size=(frames, layer.fan_in))
        ref = codes @ weights.T
    else:
        codes = rng.integers(0, 3, size=(frames, layer.in_channels, layer.in_height,
                                         layer.in_width))
        ref = oracle_conv(codes, weights, layer)
    got = execute_schedule(schedule, codes, weights, cfg, "ideal")
    return bool(np.array_equal(got, ref))


def _schedule_summary(schedule: Schedule) -> dict:
    return {**schedule.counters, "utilization": schedule.utilization,
            "macs_per_cycle": schedule.macs_per_cycle, "vom_depth": schedule.vom_depth,
            "arms_per_unit": schedule.arms_per_unit,
            "occupancy": [schedule.occupancy(r).tolist() for r in range(len(schedule.rounds))]}


def run_point(rc: RunConfig, threads: int = 1):
    """Run one configuration; returns (Report, Schedule)."""
    cfg = rc.core
    bits = cfg.awc.bit_width
    model: QuantModel | None = None
    if rc.model is not None:
        model = load_model(rc.model, bits)
        layer, weights = model.first, model.weights
    else:
        layer = rc.layer
        weights = synthetic_weights(layer, bits, rc.weights_seed)
    schedule = plan_layer(layer, cfg)
    prog = programming_cost(schedule, weights, cfg)
    perf = estimate(schedule, cfg.constants, prog, cfg,
                    frame_pixels=layer.in_height * layer.in_width * layer.in_channels)
    checks = {"oracle_match": _ideal_check(schedule, weights, cfg, rc.check_frames, rc.seed)}
    payload = {
        "config": {"mode": rc.mode, "seed": rc.seed, "constants": cfg.constants.provenance,
                   "core": to_dict(cfg), "weights_seed": rc.weights_seed,
                   "model": None if model is None else model.name},
        "layer": layer.to_dict(),
        "schedule": _schedule_summary(schedule),
        "programming": asdict(prog),
        "perf": perf.to_dict(),
        "checks": checks,
    }
    if rc.dataset is not None:
        data = load_dataset(rc.dataset)
        if rc.samples is not None:
            data = data.subset(rc.samples)
        result = evaluate(data, model, cfg, rc.mode, rc.seed, threads)
        payload["eval"] = result.to_dict()
        payload["config"]["dataset"] = data.name
        if rc.mode == "ideal":
            base = baseline(data, model, cfg, threads)
            checks["baseline_match"] = base.correct == result.correct
    failed = [k for k, ok in checks.items() if not ok]
    if failed:
        raise InvariantError(f"internal check failed: {', '.join(failed)}")
    return Report("simulate", payload, now()), schedule


def write_simulate(out: Path, report: Report, schedule: Schedule, cfg: CoreConfig) -> None:
    out.mkdir(parents=True, exist_ok=True)
    atomic_write(out / "report.json", report.to_json())
    atomic_write(out / "summary.txt", summary_text(report.payload))
    atomic_write(out / "schedule.json", schedule.to_json())
    perf = report.payload["perf"]
    total = perf["energy"] or 1.0
    rows = [{"component": k, "energy_J": v, "share": v / total}
            for k, v in perf["breakdown"].items()]
    atomic_write(out / "breakdown.csv", csv_text(rows, ["component", "energy_J", "share"]))
    plot_breakdown(perf["breakdown"], out / "breakdown.png")
    plot_occupancy(schedule.occupancy(0), schedule.arms_per_bank, cfg.bank_columns,
                   out / "occupancy.png", "arms in use per bank (round 0)")


def cmd_simulate(args) -> int:
    rc = load_run_config(args.config, args.set)
    report, schedule = run_point(rc, args.threads)
    out = Path(args.out) if args.out else rc.output
    if out is not None:
        write_simulate(out, report, schedule, rc.core)
    sys.stdout.write(summary_text(report.payload))
    return 0


def _axis_arg(text: str):
    """``awc.bit_width=1,2,3`` -> ('core.awc.bit_width', (1, 2, 3))."""
    if "=" not in text:
        raise ConfigError(f"expected name=v1,v2,... got {text!r}")
    key, raw = text.split("=", 1)
    try:
        values = tuple(yaml.safe_load(v) for v in raw.split(",") if v.strip())
    except yaml.YAMLError as exc:
        raise ConfigError(f"bad axis value in {text!r}: {exc}") from exc
    return _qualify(key.strip()), values


def _sweep_row(index: int, point: dict, report: Report | None, status: str) -> dict:
    row = {"point": index, **{k: v for k, v in point.items()}, "status": status}
    if report is None:
        return row
    p = report.payload
    perf, core = p["perf"], p["config"]["core"]
    row.update({
        "bit_width": core["awc"]["bit_width"],
        "noise": core["awc"]["mismatch_sigma"],
        "kernel_size": p["layer"]["kernel_size"],
        "macs_per_cycle": p["schedule"]["macs_per_cycle"],
        "accuracy": p["eval"]["accuracy"] if "eval" in p else "",
        "power": perf["frame_power"],
        "power_per_pixel": perf["power_per_pixel"],
        "efficiency": perf["efficiency"],
        "throughput": perf["throughput"],
        "frame_rate": perf["frame_rate"],
        "latency": perf["latency"],
        "utilization": perf["utilization"],
    })
    return row


def cmd_sweep(args) -> int:
    path = Path(args.config)
    raw = load_yaml(path)
    base_sets = dict(parse_assignment(s) for s in args.set)
    rc0 = build_run(raw, base_sets, path.parent)
    axes = [_axis_arg(a) for a in args.axis] if args.axis else list(rc0.axes)
    if not axes or any(not vals for _, vals in axes):
        raise ConfigError("sweep needs at least one non-empty axis (--axis name=v1,v2,...)")
    names = [k for k, _ in axes]
    grid = [dict(zip(names, combo)) for combo in itertools.product(*(v for _, v in axes))]
    out = Path(args.out) if args.out else (rc0.output or Path("sweep_out"))
    jobs = max(1, args.threads)

    def work(i):
        try:
            rc = build_run(raw, {**base_sets, **grid[i]}, path.parent)
            report, schedule = run_point(rc, 1 if jobs > 1 else args.threads)
        except (ConfigError, GeometryError) as exc:
            return i, None, f"config error: {exc}", 2
        except FixtureError as exc:
            return i, None, f"fixture error: {exc}", 3
        except InvariantError as exc:
            return i, None, f"invariant: {exc}", 1
        pdir = out / "points" / f"{i:03d}"
        write_simulate(pdir, report, schedule, rc.core)
        return i, report, "ok", 0

    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(work, range(len(grid))))
    else:
        results = [work(i) for i in range(len(grid))]
    rows = [_sweep_row(i, grid[i], rep, status) for i, rep, status, _ in results]
    cols = ["point"] + names + [c for c in SWEEP_COLUMNS if c not in names]
    atomic_write(out / "sweep.csv", csv_text(rows, cols))
    codes = [code for *_, code in results if code]
    combined = Report("sweep", {"axes": [[k, list(v)] for k, v in axes],
                                "partial": bool(codes), "rows": rows}, now())
    atomic_write(out / "sweep.json", combined.to_json())
    ok_rows = [r for r in rows if r["status"] == "ok"]
    if ok_rows:
        ys = [c for c in ("accuracy", "power", "efficiency", "macs_per_cycle")
              if c not in names]
        plot_sweep(ok_rows, names[0], ys, out / "sweep.png",
                   group=names[1] if len(names) > 1 else None)
    sys.stdout.write(csv_text(rows, cols))
    if codes:
        sys.stderr.write(f"sweep: {len(codes)} of {len(rows)} points failed (partial grid)\n")
        return max(codes) if 1 not in codes else 1
    return 0


# ------------------------------------------------------------------- inspect


def occupancy_text(schedule: Schedule, columns: int = 4) -> str:
    lines = []
    total = schedule.num_banks * schedule.arms_per_bank
    for r, rnd in enumerate(schedule.rounds):
        occ = schedule.occupancy(r)
        lines.append(f"round {r}: {len(rnd.placements)} units, {rnd.cycles} cycles, "
                     f"arms in use {int(occ.sum())}/{total}")
        grid = occ.reshape(-1, columns)
        lines.append("        " + " ".join(f"c{c:<3d}" for c in range(columns)))
        for i, row in enumerate(grid):
            cells = " ".join(f"{int(v)}/{schedule.arms_per_bank}" for v in row)
            lines.append(f"  r{i:<3d}  {cells}")
    return "\n".join(lines)


def inspect_schedule(schedule: Schedule) -> str:
    lay = schedule.layer
    c = schedule.counters
    head = [
        f"layer       {lay.kind} K={lay.kernel_size} in {lay.in_channels}x{lay.in_height}x"
        f"{lay.in_width} out {lay.out_channels} stride {lay.stride} pad {lay.padding}",
        f"geometry    {schedule.num_banks} banks x {schedule.arms_per_bank} arms x "
        f"{schedule.mrs_per_arm} MRs; {schedule.arms_per_unit} arm(s) per kernel unit",
        f"vom depth   {schedule.vom_depth}",
        f"rounds      {schedule.remap_count}",
    ]
    head += [f"{k:<20s}{v}" for k, v in c.items()]
    head.append(f"{'utilization':<20s}{schedule.utilization:.6f}")
    return "\n".join(head) + "\n" + occupancy_text(schedule) + "\n"


def inspect_fixture(path: Path) -> str:
    fx = load_fixture(path)
    lines = [f"fixture     {fx.path} (kind {fx.kind}), checksums ok"]
    for k, v in sorted(fx.meta.items()):
        if k != "layers":
            lines.append(f"  {k}: {json.dumps(v, sort_keys=True)}")
    for op in fx.meta.get("layers", []):
        lines.append(f"  layer {json.dumps(op, sort_keys=True)}")
    for name, arr in sorted(fx.tensors.items()):
        lines.append(f"  tensor {name:<22s} {str(arr.dtype):<8s} {list(arr.shape)}")
    return "\n".join(lines) + "\n"


def cmd_inspect(args) -> int:
    path = Path(args.path)
    if not path.exists():
        raise FixtureError(f"cannot read {path}")
    if path.is_dir() or path.name == MANIFEST:
        sys.stdout.write(inspect_fixture(path))
        return 0
    if path.suffix in (".yaml", ".yml"):
        rc = load_run_config(path, args.set)
        layer = load_model(rc.model, rc.core.awc.bit_width).first if rc.model else rc.layer
        sys.stdout.write(inspect_schedule(plan_layer(layer, rc.core)))
        return 0
    try:
        doc = json.loads(path.read_text())
        if doc.get("format") == "opticsense-report":
            sys.stdout.write(summary_text(Report.from_dict(doc).payload))
            return 0
        schedule = Schedule.from_dict(doc)
    except (OSError, UnicodeDecodeError, json.JSONDecodeError, AttributeError,
            KeyError, TypeError, ValueError) as exc:
        raise FixtureError(f"unreadable or corrupt input {path}: {exc}") from exc
    sys.stdout.write(inspect_schedule(schedule))
    return 0


# ---------------------------------------------------------------------- main


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="opticsense",
                                 description="Photonic in-sensor accelerator simulator")
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                       help="override a config value (dotted path, e.g. awc.noise_sigma=0.01)")

    p = sub.add_parser("simulate", help="plan, cost and (optionally) evaluate one configuration")
    p.add_argument("--config", required=True)
    p.add_argument("--out", help="directory for report files")
    p.add_argument("--threads", type=int, default=1)
    common(p)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("sweep", help="run a grid of configurations")
    p.add_argument("--config", required=True)
    p.add_argument("--axis", action="append", default=[], metavar="NAME=V1,V2,...")
    p.add_argument("--out")
    p.add_argument("--threads", type=int, default=1, help="grid points run concurrently")
    common(p)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("inspect", help="dump a schedule, report, run config or fixture")
    p.add_argument("path")
    common(p)
    p.set_defaults(func=cmd_inspect)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except InvariantError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (ConfigError, GeometryError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except FixtureError as exc:
        print(f"fixture error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
