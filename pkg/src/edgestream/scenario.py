"""Scenario files.

A scenario is a flat list of ``dotted.key = value`` lines. Values are JSON
literals (numbers, ``true``/``false``, quoted strings, lists). Blank lines
and lines starting with ``#`` are ignored. Unknown or repeated keys are
errors, reported with their line number. Keys not given take the defaults
in :data:`KEYS`.

The built-in scenario ``paper-default`` ships with the package; any other
name is treated as a file path.
"""

from __future__ import annotations

import dataclasses
import json
import math
import os
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Any, Callable, Optional

from .controller import Limits, PredictorConfig, ResolutionLadder
from .edge import ServiceKind, ServiceTime
from .errors import ConfigError, ScenarioError
from .media import PRIMARY, SECONDARY, R1080, Resolution, StreamConfig
from .netem import CapacitySchedule, LinkParams
from .transport import DEFAULT_MTU, EXPIRY_TIMEOUT

BUILTIN = ("paper-default",)


def _number(v):
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ValueError(f"expected a number, got {v!r}")
    if not math.isfinite(v):
        raise ValueError(f"expected a finite number, got {v!r}")
    return float(v)


def _integer(v):
    if isinstance(v, bool) or not isinstance(v, (int, float)) or int(v) != v:
        raise ValueError(f"expected an integer, got {v!r}")
    return int(v)


def _boolean(v):
    if not isinstance(v, bool):
        raise ValueError(f"expected true or false, got {v!r}")
    return v


def _string(v):
    if not isinstance(v, str):
        raise ValueError(f"expected a string, got {v!r}")
    return v


def _resolution(v):
    try:
        return Resolution.parse(_string(v))
    except ConfigError as exc:
        raise ValueError(str(exc)) from None


def _schedule(v):
    if not isinstance(v, list) or not all(isinstance(p, list) and len(p) == 2 for p in v):
        raise ValueError("expected a list of [seconds, bits_per_second] pairs")
    try:
        return CapacitySchedule([(_number(t), _number(c)) for t, c in v])
    except ConfigError as exc:
        raise ValueError(str(exc)) from None


def _tiers(v):
    if not isinstance(v, list) or not all(isinstance(p, list) and len(p) == 2 for p in v):
        raise ValueError('expected a list of [min_predicted_bps, "WxH"] pairs')
    return tuple((_number(t), _resolution(r)) for t, r in v)


def _distribution(v):
    if v not in ("deterministic", "lognormal"):
        raise ValueError(f"expected \"deterministic\" or \"lognormal\", got {v!r}")
    return v


# key -> (parser, default)
KEYS: dict[str, tuple[Callable[[Any], Any], Any]] = {
    "name": (_string, "custom"),
    "run_length": (_number, 60.0),
    "seed": (_integer, 1),
    "adaptation_enabled": (_boolean, True),
    "epoch_length": (_number, 1.0),
    "mtu": (_integer, DEFAULT_MTU),
    "expiry_timeout": (_number, EXPIRY_TIMEOUT),
    "primary.fps": (_number, 30.0),
    "primary.resolution": (_resolution, R1080),
    "primary.bitrate": (_number, 20e6),
    "primary.gop_length": (_integer, 30),
    "primary.i_frame_ratio": (_number, 4.0),
    "primary.size_jitter": (_number, 0.0),
    "secondary.fps": (_number, 1.0),
    "secondary.resolution": (_resolution, R1080),
    "secondary.gop_length": (_integer, 1),
    "secondary.i_frame_ratio": (_number, 4.0),
    "secondary.size_jitter": (_number, 0.0),
    "secondary.paced": (_boolean, True),
    "link.schedule": (_schedule, CapacitySchedule.constant(30e6)),
    "link.prop_delay_up": (_number, 0.010),
    "link.prop_delay_down": (_number, 0.010),
    "link.queue_limit": (_integer, 2_000_000),
    "link.downlink_capacity": (_number, 50e6),
    "predictor.order": (_integer, 4),
    "predictor.window": (_integer, 10),
    "predictor.gamma": (_number, 0.9),
    "predictor.step_size": (_number, 0.5),
    "predictor.floor_bps": (_number, 100e3),
    "predictor.initial_rate": (_number, 20e6),
    "predictor.probe_step": (_number, 0.025),
    "predictor.probe_max_gain": (_number, 1.25),
    "predictor.saturation_tolerance": (_number, 0.01),
    "predictor.silence_epochs": (_integer, 2),
    "predictor.silence_decay": (_number, 0.8),
    "predictor.drain_slack": (_number, 0.05),
    "ladder.tiers": (_tiers, ResolutionLadder().tiers),
    "ladder.hysteresis_margin": (_number, 0.1),
    "limits.max_bitrate": (_number, 20e6),
    "limits.secondary_threshold": (_number, 5e6),
    "limits.secondary_bitrate": (_number, 1.5e6),
    "edge.workers": (_integer, 3),
    "edge.drop_stale": (_boolean, True),
    "edge.detection.distribution": (_distribution, "lognormal"),
    "edge.detection.mean": (_number, 0.020),
    "edge.detection.sigma": (_number, 0.185),
    "edge.navigation.distribution": (_distribution, "deterministic"),
    "edge.navigation.mean": (_number, 0.300),
    "edge.navigation.sigma": (_number, 0.0),
    "edge.vlm.distribution": (_distribution, "deterministic"),
    "edge.vlm.mean": (_number, 0.800),
    "edge.vlm.sigma": (_number, 0.0),
    "fixed.bitrate": (_number, 20e6),
    "fixed.fps": (_number, 30.0),
    "fixed.resolution": (_resolution, R1080),
    "live.emulate_link": (_boolean, True),
    "live.connect_timeout": (_number, 3.0),
}


@dataclass(frozen=True)
class Scenario:
    name: str
    run_length: float
    seed: int
    adaptation_enabled: bool
    epoch_length: float
    mtu: int
    expiry_timeout: float
    primary: StreamConfig
    secondary: StreamConfig
    secondary_paced: bool
    schedule: CapacitySchedule
    link: LinkParams
    predictor: PredictorConfig
    ladder: ResolutionLadder
    limits: Limits
    worker_count: int
    drop_stale: bool
    service_times: dict
    fixed: StreamConfig
    emulate_link: bool = True
    connect_timeout: float = 3.0
    values: dict = field(default_factory=dict, compare=False, repr=False)

    @property
    def n_epochs(self) -> int:
        return math.ceil(self.run_length / self.epoch_length - 1e-9)

    def with_values(self, **overrides) -> "Scenario":
        """Rebuild with some keys replaced (dots written as ``__``)."""
        values = dict(self.values)
        for k, v in overrides.items():
            key = k.replace("__", ".")
            if key not in KEYS:
                raise ScenarioError("unknown key", key=key)
            if not isinstance(v, (CapacitySchedule, Resolution, tuple)):
                try:
                    v = KEYS[key][0](v)
                except ValueError as exc:
                    raise ScenarioError(str(exc), key=key) from None
            values[key] = v
        return build(values)

    def without_adaptation(self) -> "Scenario":
        return self.with_values(adaptation_enabled=False)


def parse_text(text: str, source: str = "<string>") -> dict[str, Any]:
    """Parse scenario text into ``{key: parsed value}``; defaults not applied."""
    values: dict[str, Any] = {}
    lines: dict[str, int] = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        key, sep, rhs = line.partition("=")
        key = key.strip()
        if not sep or not key:
            raise ScenarioError(f"{source}: expected 'key = value'", line=lineno)
        if key not in KEYS:
            raise ScenarioError(f"{source}: unknown key", key=key, line=lineno)
        if key in values:
            raise ScenarioError(f"{source}: duplicate key (first on line {lines[key]})", key=key, line=lineno)
        try:
            literal = json.loads(rhs.strip())
        except json.JSONDecodeError as exc:
            raise ScenarioError(f"{source}: bad value: {exc.msg}", key=key, line=lineno) from None
        try:
            values[key] = KEYS[key][0](literal)
        except ValueError as exc:
            raise ScenarioError(f"{source}: {exc}", key=key, line=lineno) from None
        lines[key] = lineno
    values["__lines__"] = lines
    return values


def build(values: dict[str, Any]) -> Scenario:
    """Apply defaults and cross-module validation."""
    lines = values.get("__lines__", {})
    v = {k: values.get(k, default) for k, (_, default) in KEYS.items()}

    def fail(key, msg):
        raise ScenarioError(msg, key=key, line=lines.get(key))

    def check(key, ok, msg):
        if not ok:
            fail(key, msg)

    check("run_length", v["run_length"] > 0, "must be positive")
    check("epoch_length", v["epoch_length"] > 0, "must be positive")
    check("seed", 0 <= v["seed"] < 2 ** 64, "must fit in 64 unsigned bits")
    check("expiry_timeout", v["expiry_timeout"] > 0, "must be positive")

    ladder = ResolutionLadder(v["ladder.tiers"], v["ladder.hysteresis_margin"])
    stages = [
        ("ladder.tiers", ladder.validate),
        ("primary.bitrate", lambda: StreamConfig(
            PRIMARY, v["primary.fps"], v["primary.resolution"], v["primary.bitrate"],
            v["primary.gop_length"], v["primary.i_frame_ratio"], v["primary.size_jitter"]).validate()),
        ("secondary.fps", lambda: StreamConfig(
            SECONDARY, v["secondary.fps"], v["secondary.resolution"], v["limits.secondary_bitrate"],
            v["secondary.gop_length"], v["secondary.i_frame_ratio"], v["secondary.size_jitter"]).validate()),
        ("fixed.bitrate", lambda: StreamConfig(
            PRIMARY, v["fixed.fps"], v["fixed.resolution"], v["fixed.bitrate"],
            v["primary.gop_length"], v["primary.i_frame_ratio"], v["primary.size_jitter"]).validate()),
        ("link.queue_limit", lambda: LinkParams(
            v["link.prop_delay_up"], v["link.prop_delay_down"], v["link.queue_limit"],
            v["link.downlink_capacity"]).validate(v["mtu"])),
        ("predictor.gamma", lambda: PredictorConfig(
            v["predictor.order"], v["predictor.window"], v["predictor.gamma"], v["predictor.step_size"],
            v["predictor.floor_bps"], v["predictor.initial_rate"], v["predictor.probe_step"],
            v["predictor.probe_max_gain"],
            v["predictor.saturation_tolerance"], v["predictor.silence_epochs"],
            v["predictor.silence_decay"], v["predictor.drain_slack"]).validate()),
        ("limits.max_bitrate", lambda: Limits(
            v["limits.max_bitrate"], v["limits.secondary_threshold"], v["limits.secondary_bitrate"],
            v["predictor.floor_bps"]).validate()),
    ]
    built = []
    for key, make in stages:
        try:
            built.append(make())
        except ConfigError as exc:
            fail(key, str(exc))
    _, primary, secondary, fixed, link, predictor, limits = built

    for key in ("primary.resolution", "fixed.resolution"):
        check(key, v[key] in ladder.resolutions, f"{v[key]} is not on the resolution ladder")
    check("mtu", v["mtu"] > 20, "must exceed the 20-byte header")
    check("edge.workers", v["edge.workers"] >= 2, "need at least 2 workers")

    services = {}
    for kind in ServiceKind:
        base = f"edge.{kind.value}"
        try:
            services[kind] = ServiceTime(v[f"{base}.mean"], v[f"{base}.sigma"], v[f"{base}.distribution"]).validate()
        except ConfigError as exc:
            fail(f"{base}.mean", str(exc))

    stored = {k: val for k, val in values.items() if k in KEYS}
    return Scenario(
        name=v["name"],
        run_length=v["run_length"],
        seed=v["seed"],
        adaptation_enabled=v["adaptation_enabled"],
        epoch_length=v["epoch_length"],
        mtu=v["mtu"],
        expiry_timeout=v["expiry_timeout"],
        primary=primary,
        secondary=secondary,
        secondary_paced=v["secondary.paced"],
        schedule=v["link.schedule"],
        link=link,
        predictor=predictor,
        ladder=ladder,
        limits=limits,
        worker_count=v["edge.workers"],
        drop_stale=v["edge.drop_stale"],
        service_times=services,
        fixed=fixed,
        emulate_link=v["live.emulate_link"],
        connect_timeout=v["live.connect_timeout"],
        values=stored,
    )


def loads(text: str, source: str = "<string>") -> Scenario:
    return build(parse_text(text, source))


def builtin_text(name: str) -> str:
    return resources.files("edgestream.scenarios").joinpath(f"{name}.scn").read_text(encoding="utf-8")


def load_scenario(path_or_name: str | os.PathLike) -> Scenario:
    name = str(path_or_name)
    if name in BUILTIN:
        return loads(builtin_text(name), name)
    path = Path(name)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ScenarioError(f"cannot read scenario {path}: {exc.strerror or exc}") from None
    return loads(text, str(path))


def override(scenario: Scenario, seed: Optional[int] = None, adaptation: Optional[bool] = None) -> Scenario:
    changes = {}
    if seed is not None:
        changes["seed"] = seed
    if adaptation is not None:
        changes["adaptation_enabled"] = adaptation
    return scenario.with_values(**changes) if changes else scenario
