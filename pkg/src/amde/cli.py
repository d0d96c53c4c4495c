"""``amde`` command-line entry point.

Subcommands: generate, run-sync, run-async, sweep-lag, bench-cache.
Exit codes: 0 success, 1 configuration error, 2 runtime invariant
violation, 3 I/O error.
"""

from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import replace
from pathlib import Path
from typing import Sequence

import numpy as np

from . import cache as cache_mod
from .config import Settings, describe, load_settings
from .errors import ConfigError, FormatError, InvalidArgumentError, InvariantViolation
from .metrics import LagProfile, accumulate, cycle_average, write_lag_csv
from .runtime import (
    Model,
    adoption_lags,
    effective_interval,
    run_async,
    run_sync,
    write_frame_log,
)
from .synthworld import SyntheticWorld, load_sequence, save_sequence

log = logging.getLogger("amde")

EXIT_OK, EXIT_CONFIG, EXIT_INVARIANT, EXIT_IO = 0, 1, 2, 3
REPORT_HEADER = "# metrics are computed after per-frame least-squares alignment of prediction to ground truth"
COMMANDS = ("generate", "run-sync", "run-async", "sweep-lag", "bench-cache")


def _parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="INI file with [scene] [model] [run] [loss] [bench] sections")
    common.add_argument("--set", dest="overrides", action="append", default=[], metavar="SECTION.KEY=VALUE",
                        help="override one config key; repeatable; wins over --config")
    common.add_argument("--out", default="amde_out", help="output directory (default: %(default)s)")
    common.add_argument("--seed", type=int, help="scene.seed; for sweep-lag, a single-seed sweep")
    common.add_argument("--mode", help="sweep-lag: sync|async (run.sweep_mode); bench-cache: stress|single")
    common.add_argument("--n", type=int, help="refresh interval N (run.n)")
    common.add_argument("--frames", type=int, help="sequence length (run.frames)")
    common.add_argument("--virtual-clock", action=argparse.BooleanOptionalAction, default=None,
                        help="async timing on a simulated clock (run.virtual_clock)")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(
        prog="amde",
        description="Memory-fused fast-path depth runtime on synthetic scenes.",
        epilog="config keys:\n" + describe(),
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    sub = p.add_subparsers(dest="command", required=True, metavar="COMMAND")
    helps = {
        "generate": "write a synthetic sequence as tensor files",
        "run-sync": "fixed-interval refresh run; writes frames.csv and lag.csv",
        "run-async": "concurrent slow/fast path run; writes frames.csv and lag.csv",
        "sweep-lag": "per-lag accuracy over a seed list; per-seed and mean CSVs",
        "bench-cache": "snapshot cache stress test with torn-read verdict",
    }
    for name in COMMANDS:
        sub.add_parser(name, parents=[common], help=helps[name], epilog="config keys:\n" + describe(),
                       formatter_class=argparse.RawDescriptionHelpFormatter)
    return p


def _overrides(args) -> list[str]:
    out = list(args.overrides)
    if args.seed is not None:
        out.append(f"run.seeds={args.seed}" if args.command == "sweep-lag" else f"scene.seed={args.seed}")
    if args.n is not None:
        out.append(f"run.n={args.n}")
    if args.frames is not None:
        out.append(f"run.frames={args.frames}")
    if args.virtual_clock is not None:
        out.append(f"run.virtual_clock={args.virtual_clock}")
    if args.mode is not None:
        if args.command == "bench-cache":
            out.append(f"bench.mode={args.mode}")
        elif args.command == "sweep-lag":
            out.append(f"run.sweep_mode={args.mode}")
        else:
            raise ConfigError(f"--mode does not apply to {args.command}")
    return out


# ---- helpers -----------------------------------------------------------------------

def _model(settings: Settings, projector, decoder, **kw) -> Model:
    m = settings.model
    opts = dict(modulator=settings.modulator, trust_override=m["trust_override"],
                fastpath_threshold=m["fastpath_threshold"], supervised=m["supervised"], loss=settings.loss)
    opts.update(kw)
    return Model(projector, decoder, **opts)


def _sequence(settings: Settings, seed: int | None = None):
    """(frames, model) from run.input or from a generated world."""
    if settings.run["input"] is not None and seed is None:
        stored = load_sequence(settings.run["input"])
        frames = stored.frames[: settings.run["frames"]]
        return frames, _model(settings, stored.projector, stored.decoder)
    scene = settings.scene if seed is None else replace(settings.scene, seed=seed)
    world = SyntheticWorld(scene)
    return world.sequence(settings.run["frames"]), _model(settings, world.projector_params(), world.decoder)


def _profile(results, n: int | None = None) -> LagProfile:
    n = n or max(r.lag for r in results) + 1
    prof = LagProfile(n)
    for r in results:
        accumulate(prof, r)
    return prof


def _write(path: Path, text: str) -> None:
    with open(path, "w", newline="") as fh:
        fh.write(text)


def _kv(pairs) -> str:
    return "".join(f"{k} = {v:.6g}\n" if isinstance(v, float) else f"{k} = {v}\n" for k, v in pairs)


def _rank_violations(values: Sequence[float]) -> int:
    return int(sum(b < a for a, b in zip(values, values[1:])))


# ---- subcommands -------------------------------------------------------------------

def cmd_generate(settings: Settings, out: Path) -> None:
    world = SyntheticWorld(settings.scene)
    frames = world.sequence(settings.run["frames"])
    save_sequence(out, world, frames)
    print(f"wrote {len(frames)} frames to {out}")


def _run_report(results, out: Path, n: int | None, timing: bool, extra) -> None:
    out.mkdir(parents=True, exist_ok=True)
    _write(out / "frames.csv", write_frame_log(results, timing=timing))
    summary = cycle_average(_profile(results, n))
    _write(out / "lag.csv", write_lag_csv(summary))
    avg = summary["cycle_avg"]
    lines = [("frames", len(results))] + list(extra) + [
        (f"cycle_avg_{k}", avg[k]) for k in ("absrel", "rmse", "delta1", "mean_t", "fastpath_pct")]
    _write(out / "summary.txt", REPORT_HEADER + "\n" + _kv(lines))
    print(_kv(lines), end="")


def cmd_run_sync(settings: Settings, out: Path) -> None:
    frames, model = _sequence(settings)
    n = settings.run["n"]
    results = run_sync(frames, model, n, check=settings.run["check"])
    _run_report(results, out, n, False, [("mode", "sync"), ("n", n)])


def cmd_run_async(settings: Settings, out: Path) -> None:
    frames, model = _sequence(settings)
    cfg = settings.async_cfg
    results = run_async(frames, model, cfg, check=settings.run["check"])
    lags = adoption_lags(results)
    extra = [
        ("mode", "async-virtual" if cfg.virtual_clock else "async-wall"),
        ("n_eff", effective_interval(1000.0 / cfg.fast_ms, 1000.0 / cfg.slow_ms)),
        ("adoptions", len(lags)),
        ("mean_adoption_lag", float(np.mean(lags)) if lags else float("nan")),
    ]
    _run_report(results, out, None, True, extra)


def _sweep(settings: Settings, seeds, **model_kw):
    """Per-seed lag profiles plus their pooled (count-weighted) total."""
    n, mode = settings.run["n"], settings.run["sweep_mode"]
    per_seed = {}
    for seed in seeds:
        frames, model = _sequence(settings, seed)
        model = replace(model, **model_kw)
        if mode == "sync":
            per_seed[seed] = run_sync(frames, model, n, check=settings.run["check"])
        else:
            per_seed[seed] = run_async(frames, model, settings.async_cfg, check=settings.run["check"])
    # async lags are whatever the slow path produced; size the table to cover all of them
    width = n if mode == "sync" else max(r.lag for res in per_seed.values() for r in res) + 1
    profiles = {seed: _profile(res, width) for seed, res in per_seed.items()}
    total = LagProfile(width)
    for prof in profiles.values():
        total.merge(prof)
    return profiles, total


def cmd_sweep_lag(settings: Settings, out: Path) -> None:
    seeds = settings.run["seeds"]
    profiles, total = _sweep(settings, seeds)
    _, enc_total = _sweep(settings, seeds, trust_override=0.0)
    out.mkdir(parents=True, exist_ok=True)
    for seed, prof in profiles.items():
        _write(out / f"lag_seed{seed:04d}.csv", write_lag_csv(cycle_average(prof)))
    mean = cycle_average(total)
    enc = cycle_average(enc_total)
    _write(out / "lag_mean.csv", write_lag_csv(mean))
    _write(out / "encoder_only_mean.csv", write_lag_csv(enc))
    curve = [row["absrel"] for row in mean["rows"]]
    floor = enc["cycle_avg"]["absrel"]
    lines = [
        ("seeds", len(seeds)),
        ("n", settings.run["n"]),
        ("frames", settings.run["frames"]),
        ("mode", settings.run["sweep_mode"]),
        ("lag0_absrel", curve[0]),
        ("last_lag_absrel", curve[-1]),
        ("encoder_only_absrel", floor),
        ("last_lag_over_encoder_only", curve[-1] / floor),
        ("max_lag_over_encoder_only", max(curve) / floor),
        ("adjacent_rank_violations", _rank_violations(curve)),
        ("cycle_avg_absrel", mean["cycle_avg"]["absrel"]),
    ]
    _write(out / "summary.txt", REPORT_HEADER + "\n" + _kv(lines))
    print(_kv(lines), end="")


def cmd_bench_cache(settings: Settings, out: Path) -> None:
    b = settings.bench
    report = cache_mod.stress(b["iterations"], publishes=b["publishes"], threaded=b["mode"] == "stress")
    text = _kv((k, v) for k, v in (line.split(" = ", 1) for line in report.lines()))
    out.mkdir(parents=True, exist_ok=True)
    _write(out / "bench.txt", text)
    print(text, end="")
    if report.torn_reads:
        raise InvariantViolation(f"{report.torn_reads} torn reads")


HANDLERS = {
    "generate": cmd_generate,
    "run-sync": cmd_run_sync,
    "run-async": cmd_run_async,
    "sweep-lag": cmd_sweep_lag,
    "bench-cache": cmd_bench_cache,
}


def main(argv: Sequence[str] | None = None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        settings = load_settings(args.config, _overrides(args))
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        HANDLERS[args.command](settings, Path(args.out))
    except InvariantViolation as exc:
        print(f"invariant violation: {exc}", file=sys.stderr)
        return EXIT_INVARIANT
    except (OSError, FormatError) as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (ConfigError, InvalidArgumentError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
