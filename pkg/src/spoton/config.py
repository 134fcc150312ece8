"""Config file handling: INI-style ``[section]`` / ``key = value`` text.

Sections: ``[workload]``, ``[checkpoint]``, ``[eviction]``, ``[pricing]``.
Unknown sections or keys are rejected.  CLI ``--set section.key=value``
overrides win over file values.
"""

from __future__ import annotations

import configparser
import dataclasses
from pathlib import Path

from .spotsim import PricingModel
from .workload import WorkloadSpec, format_stages, parse_stages


class ConfigError(ValueError):
    pass


@dataclasses.dataclass
class CoordinatorConfig:
    workload: WorkloadSpec = dataclasses.field(default_factory=WorkloadSpec)
    store_root: Path = Path("./spoton-store")
    checkpointer: str = "toy"  # toy | application | transparent | none
    checkpoint_interval: float = 900.0
    snapshot_time_estimate: float = 5.0
    snapshot_cmd: str = ""
    restore_cmd: str = ""
    metadata_endpoint: str = ""
    polling: bool = True
    poll_interval: float = 1.0
    min_notice_floor: float = 30.0
    safety_factor: float = 1.5
    register_child: bool = False
    progress_every: int = 1
    pricing: PricingModel = dataclasses.field(default_factory=PricingModel)

    def __post_init__(self):
        if self.checkpoint_interval <= 0:
            raise ConfigError("checkpoint.interval must be > 0")
        if self.poll_interval <= 0:
            raise ConfigError("eviction.poll_interval must be > 0")
        if self.checkpointer not in ("toy", "application", "transparent", "none"):
            raise ConfigError(f"unknown checkpointer {self.checkpointer!r}")
        if self.checkpointer == "transparent" and not (self.snapshot_cmd and self.restore_cmd):
            raise ConfigError("transparent checkpointer needs snapshot_cmd and restore_cmd")

    @property
    def polling_enabled(self) -> bool:
        return self.polling and bool(self.metadata_endpoint)


_BOOL = {"true": True, "yes": True, "on": True, "1": True,
         "false": False, "no": False, "off": False, "0": False}


def _parse_bool(value: str, where: str) -> bool:
    try:
        return _BOOL[value.strip().lower()]
    except KeyError:
        raise ConfigError(f"{where}: expected a boolean, got {value!r}") from None


_KNOWN_KEYS = {
    "workload": {"stages", "seed", "step_cost"},
    "checkpoint": {"checkpointer", "interval", "store_root", "snapshot_time_estimate",
                   "snapshot_cmd", "restore_cmd"},
    "eviction": {"endpoint", "polling", "poll_interval", "min_notice_floor",
                 "safety_factor", "register_child"},
    "pricing": {"spot_rate", "on_demand_rate", "storage_rate", "provisioned_storage"},
}


def load_config(path: str | Path | None = None, overrides: list[str] | None = None) -> CoordinatorConfig:
    parser = configparser.ConfigParser(interpolation=None)
    if path is not None:
        try:
            with open(path) as fh:
                parser.read_file(fh, source=str(path))
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        except configparser.Error as exc:
            raise ConfigError(f"config parse error: {exc}") from exc
    for item in overrides or []:
        key, sep, value = item.partition("=")
        if not sep:
            raise ConfigError(f"override {item!r} is not key=value")
        section, dot, name = key.strip().partition(".")
        if not dot:
            raise ConfigError(f"override key {key!r} must be section.key")
        if not parser.has_section(section):
            parser.add_section(section)
        parser.set(section, name.strip(), value.strip())
    return _build(parser)


def _build(parser: configparser.ConfigParser) -> CoordinatorConfig:
    for section in parser.sections():
        if section not in _KNOWN_KEYS:
            raise ConfigError(f"unknown config section [{section}]")
        for key in parser[section]:
            if key not in _KNOWN_KEYS[section]:
                raise ConfigError(f"unknown config key {section}.{key}")

    def get(section, key, default):
        return parser.get(section, key, fallback=default)

    def get_float(section, key, default):
        raw = get(section, key, None)
        if raw is None:
            return default
        try:
            return float(raw)
        except ValueError:
            raise ConfigError(f"{section}.{key}: expected a number, got {raw!r}") from None

    def get_int(section, key, default):
        raw = get(section, key, None)
        if raw is None:
            return default
        try:
            return int(raw)
        except ValueError:
            raise ConfigError(f"{section}.{key}: expected an integer, got {raw!r}") from None

    try:
        stages = parse_stages(get("workload", "stages", format_stages(WorkloadSpec().stages)))
    except ValueError as exc:
        raise ConfigError(f"workload.stages: {exc}") from exc
    try:
        spec = WorkloadSpec(
            stages=stages,
            seed=get_int("workload", "seed", 0),
            step_cost=get_int("workload", "step_cost", 0),
        )
    except ValueError as exc:
        raise ConfigError(f"workload: {exc}") from exc

    pricing = PricingModel(
        spot_rate=get_float("pricing", "spot_rate", PricingModel().spot_rate),
        on_demand_rate=get_float("pricing", "on_demand_rate", PricingModel().on_demand_rate),
        storage_rate=get_float("pricing", "storage_rate", PricingModel().storage_rate),
        provisioned_storage_gib=get_float("pricing", "provisioned_storage", 100.0),
    )

    polling_raw = get("eviction", "polling", "true")
    register_raw = get("eviction", "register_child", "false")
    return CoordinatorConfig(
        workload=spec,
        store_root=Path(get("checkpoint", "store_root", "./spoton-store")),
        checkpointer=get("checkpoint", "checkpointer", "toy"),
        checkpoint_interval=get_float("checkpoint", "interval", 900.0),
        snapshot_time_estimate=get_float("checkpoint", "snapshot_time_estimate", 5.0),
        snapshot_cmd=get("checkpoint", "snapshot_cmd", ""),
        restore_cmd=get("checkpoint", "restore_cmd", ""),
        metadata_endpoint=get("eviction", "endpoint", ""),
        polling=_parse_bool(polling_raw, "eviction.polling"),
        poll_interval=get_float("eviction", "poll_interval", 1.0),
        min_notice_floor=get_float("eviction", "min_notice_floor", 30.0),
        safety_factor=get_float("eviction", "safety_factor", 1.5),
        register_child=_parse_bool(register_raw, "eviction.register_child"),
    )


def dump_config(config: CoordinatorConfig) -> str:
    """Render a config back to the INI format load_config accepts."""
    lines = [
        "[workload]",
        f"stages = {format_stages(config.workload.stages)}",
        f"seed = {config.workload.seed}",
        f"step_cost = {config.workload.step_cost}",
        "",
        "[checkpoint]",
        f"checkpointer = {config.checkpointer}",
        f"interval = {config.checkpoint_interval:g}",
        f"store_root = {config.store_root}",
        f"snapshot_time_estimate = {config.snapshot_time_estimate:g}",
    ]
    if config.snapshot_cmd:
        lines.append(f"snapshot_cmd = {config.snapshot_cmd}")
    if config.restore_cmd:
        lines.append(f"restore_cmd = {config.restore_cmd}")
    lines += [
        "",
        "[eviction]",
        f"endpoint = {config.metadata_endpoint}",
        f"polling = {'true' if config.polling else 'false'}",
        f"poll_interval = {config.poll_interval:g}",
        f"min_notice_floor = {config.min_notice_floor:g}",
        f"safety_factor = {config.safety_factor:g}",
        f"register_child = {'true' if config.register_child else 'false'}",
        "",
        "[pricing]",
        f"spot_rate = {config.pricing.spot_rate:g}",
        f"on_demand_rate = {config.pricing.on_demand_rate:g}",
        f"storage_rate = {config.pricing.storage_rate:g}",
        f"provisioned_storage = {config.pricing.provisioned_storage_gib:g}",
    ]
    return "\n".join(lines) + "\n"
