"""INI configuration for the command-line front end.

Every key lives in a section (``scene``, ``model``, ``run``, ``loss``,
``bench``). Files are read with :mod:`configparser`; ``--set
section.key=value`` overrides are applied on top, so the command line wins.
Unknown sections or keys are rejected with the list of valid ones, and the
whole configuration is converted into library objects before anything is
written.
"""

from __future__ import annotations

import configparser
from dataclasses import dataclass
from os import PathLike
from pathlib import Path
from typing import Any, Callable, Iterable

from .errors import AmdeError, ConfigError
from .losses import LossConfig
from .modulator import ConvGate, ModulatorConfig
from .runtime import AsyncConfig
from .synthworld import SceneConfig


def _bool(text: str) -> bool:
    low = text.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _optional(conv: Callable[[str], Any]) -> Callable[[str], Any]:
    def parse(text: str):
        return None if text.strip().lower() in ("", "none") else conv(text)
    return parse


def _seeds(text: str) -> tuple[int, ...]:
    """``"0-19"``, ``"1,4,9"`` or a mix of both."""
    out: list[int] = []
    for part in text.replace(" ", "").split(","):
        if not part:
            continue
        lo, sep, hi = part.partition("-")
        if sep:
            a, b = int(lo), int(hi)
            if b < a:
                raise ValueError(f"empty seed range {part!r}")
            out.extend(range(a, b + 1))
        else:
            out.append(int(part))
    if not out:
        raise ValueError("seed list is empty")
    return tuple(out)


def _choice(*options: str) -> Callable[[str], str]:
    def parse(text: str) -> str:
        text = text.strip()
        if text not in options:
            raise ValueError(f"expected one of {', '.join(options)}")
        return text
    return parse


# section -> key -> (parser, default text, help)
SCHEMA: dict[str, dict[str, tuple[Callable[[str], Any], str, str]]] = {
    "scene": {
        "height": (int, "128", "frame height in pixels (multiple of 32)"),
        "width": (int, "128", "frame width in pixels (multiple of 32)"),
        "seed": (int, "0", "scene seed: terrain, objects and feature noise"),
        "drift_x": (float, "0.22", "camera drift along x, pixels per frame"),
        "drift_y": (float, "0.0", "camera drift along y, pixels per frame"),
        "n_objects": (int, "3", "number of moving foreground rectangles"),
        "object_h": (int, "24", "object height in pixels"),
        "object_w": (int, "24", "object width in pixels"),
        "object_speed": (float, "1.0", "object speed relative to the terrain, pixels per frame"),
        "object_offset": (float, "0.4", "inverse-depth step of objects over the terrain"),
        "terrain_modes": (int, "6", "number of cosine modes in the terrain"),
        "terrain_amplitude": (float, "0.3", "total terrain modulation, in [0, 1)"),
        "sigma_foundation": (float, "0.018", "noise std of slow-path features"),
        "sigma_encoder": (float, "0.09", "noise std of fast-path encoder features"),
        "channels": (int, "8", "memory channels"),
        "subcells": (int, "2", "descriptor grid side per feature cell"),
        "feature_gain": (float, "1.0", "column norm of the encoding matrix"),
        "encoding_seed": (int, "0", "seed of the encoding matrix and encoder basis"),
    },
    "model": {
        "temperature": (float, "4.0", "semantic gate temperature k"),
        "beta": (float, "0.5", "temporal smoothing factor, in (0, 1]"),
        "ref_a": (float, "3.0", "reference trust offset a"),
        "ref_b": (float, "8.0", "reference trust slope b"),
        "gate_l1": (_optional(str), "none", "tensor file with a learned level-1 gate (none = reference)"),
        "gate_l4": (_optional(str), "none", "tensor file with a learned level-4 gate (none = reference)"),
        "trust_override": (_optional(float), "none", "force a constant trust; 0 gives the encoder-only ablation"),
        "fastpath_threshold": (float, "0.5", "trust below this counts towards FastPath%"),
        "supervised": (_bool, "false", "also log the training loss against slow-path pseudo-labels"),
    },
    "run": {
        "n": (int, "10", "refresh interval N in frames (sync runs and sweeps)"),
        "frames": (int, "60", "frames per sequence"),
        "seeds": (_seeds, "0-19", "seed list for sweep-lag, e.g. 0-19 or 1,3,5"),
        "input": (_optional(str), "none", "run on a sequence directory written by generate"),
        "fast_ms": (float, "4.2", "fast-path frame period in ms"),
        "slow_ms": (float, "16.6", "slow-path latency in ms"),
        "virtual_clock": (_bool, "true", "simulate async timing deterministically"),
        "max_publishes": (_optional(int), "none", "stop the slow path after this many publishes"),
        "stall_after": (_optional(int), "none", "stall the slow path at this publish count"),
        "stall_frames": (int, "0", "length of that stall in frame periods"),
        "sweep_mode": (_choice("sync", "async"), "sync", "runtime used by sweep-lag"),
        "check": (_bool, "true", "enable runtime invariant checks"),
    },
    "loss": {
        "ssi_weight": (float, "1.0", "weight of the scale-shift invariant term"),
        "grad_weight": (float, "0.5", "weight of the multi-scale gradient term"),
        "mem_weight": (float, "0.1", "weight of the memory hinge"),
        "tau": (float, "0.4", "memory hinge threshold"),
    },
    "bench": {
        "iterations": (int, "100000", "total cache operations"),
        "mode": (_choice("stress", "single"), "stress", "stress = writer thread + reader, single = in-line"),
        "publishes": (_bool, "true", "false measures reads of an empty cache"),
    },
}


def valid_keys() -> list[str]:
    return [f"{s}.{k}" for s, keys in SCHEMA.items() for k in keys]


def describe() -> str:
    """One line per key, for ``--help``."""
    lines = []
    for sec, keys in SCHEMA.items():
        for key, (_, default, text) in keys.items():
            lines.append(f"  {sec}.{key} (default {default}): {text}")
    return "\n".join(lines)


def _unknown(name: str) -> ConfigError:
    return ConfigError(f"unknown config key {name!r}; valid keys: {', '.join(valid_keys())}")


def parse_override(text: str) -> tuple[str, str, str]:
    name, sep, value = text.partition("=")
    if not sep:
        raise ConfigError(f"override {text!r} is not key=value")
    sec, dot, key = name.strip().partition(".")
    if not dot or sec not in SCHEMA or key not in SCHEMA[sec]:
        raise _unknown(name.strip())
    return sec, key, value.strip()


@dataclass(frozen=True)
class Settings:
    """Fully parsed configuration."""

    scene: SceneConfig
    modulator: ModulatorConfig
    loss: LossConfig
    async_cfg: AsyncConfig
    raw: dict[str, dict[str, Any]]

    @property
    def run(self) -> dict[str, Any]:
        return self.raw["run"]

    @property
    def model(self) -> dict[str, Any]:
        return self.raw["model"]

    @property
    def bench(self) -> dict[str, Any]:
        return self.raw["bench"]


def load_settings(path: str | PathLike | None = None, overrides: Iterable[str] = ()) -> Settings:
    text: dict[str, dict[str, str]] = {s: {k: d for k, (_, d, _) in keys.items()} for s, keys in SCHEMA.items()}
    if path is not None:
        parser = configparser.ConfigParser(interpolation=None)
        try:
            with open(path) as fh:
                parser.read_file(fh)
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        except configparser.Error as exc:
            raise ConfigError(f"malformed config {path}: {exc}") from exc
        for sec in parser.sections():
            if sec not in SCHEMA:
                raise ConfigError(f"unknown config section [{sec}]; valid sections: {', '.join(SCHEMA)}")
            for key, value in parser[sec].items():
                if key not in SCHEMA[sec]:
                    raise _unknown(f"{sec}.{key}")
                text[sec][key] = value
    for item in overrides:
        sec, key, value = parse_override(item)
        text[sec][key] = value

    raw: dict[str, dict[str, Any]] = {}
    for sec, keys in SCHEMA.items():
        raw[sec] = {}
        for key, (conv, _, _) in keys.items():
            try:
                raw[sec][key] = conv(text[sec][key])
            except ValueError as exc:
                raise ConfigError(f"{sec}.{key} = {text[sec][key]!r}: {exc}") from exc
    return _build(raw)


def _build(raw: dict[str, dict[str, Any]]) -> Settings:
    s, m, r, lo, b = (raw[k] for k in ("scene", "model", "run", "loss", "bench"))
    try:
        scene = SceneConfig(
            height=s["height"], width=s["width"], seed=s["seed"], drift=(s["drift_x"], s["drift_y"]),
            n_objects=s["n_objects"], object_size=(s["object_h"], s["object_w"]),
            object_speed=s["object_speed"], object_offset=s["object_offset"],
            terrain_modes=s["terrain_modes"], terrain_amplitude=s["terrain_amplitude"],
            sigma_foundation=s["sigma_foundation"], sigma_encoder=s["sigma_encoder"],
            channels=s["channels"], subcells=s["subcells"], feature_gain=s["feature_gain"],
            encoding_seed=s["encoding_seed"],
        )
        gates = {}
        for lvl in ("l1", "l4"):
            p = m[f"gate_{lvl}"]
            if p is not None:
                if not Path(p).is_file():
                    raise ConfigError(f"model.gate_{lvl}: no such file {p}")
                gates[lvl] = ConvGate.load(p)
                if gates[lvl].kernel.shape[1] != 2 * scene.channels:
                    raise ConfigError(f"model.gate_{lvl}: expects {gates[lvl].kernel.shape[1]} input channels, "
                                      f"memory has {scene.channels} (need {2 * scene.channels})")
        modulator = ModulatorConfig(temperature=m["temperature"], beta=m["beta"], ref_a=m["ref_a"],
                                    ref_b=m["ref_b"], h1=gates.get("l1"), h4=gates.get("l4"))
        t = m["trust_override"]
        if t is not None and not 0 <= t <= 1:
            raise ConfigError("model.trust_override must be in [0, 1]")
        if not 0 < m["fastpath_threshold"] < 1:
            raise ConfigError("model.fastpath_threshold must be in (0, 1)")
        loss = LossConfig(ssi_weight=lo["ssi_weight"], grad_weight=lo["grad_weight"],
                          mem_weight=lo["mem_weight"], tau=lo["tau"])
        if r["n"] < 1:
            raise ConfigError("run.n must be >= 1")
        if r["frames"] < 1:
            raise ConfigError("run.frames must be >= 1")
        if r["input"] is not None and not (Path(r["input"]) / "manifest.ini").is_file():
            raise ConfigError(f"run.input: {r['input']} is not a sequence directory")
        stall = None
        if r["stall_after"] is not None:
            stall = (r["stall_after"], r["stall_frames"])
        async_cfg = AsyncConfig(fast_ms=r["fast_ms"], slow_ms=r["slow_ms"], virtual_clock=r["virtual_clock"],
                                max_publishes=r["max_publishes"], stall=stall)
        if b["iterations"] < 1:
            raise ConfigError("bench.iterations must be >= 1")
    except ConfigError:
        raise
    except AmdeError as exc:
        raise ConfigError(str(exc)) from exc
    return Settings(scene, modulator, loss, async_cfg, raw)
