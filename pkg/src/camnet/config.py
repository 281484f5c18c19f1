"""CLI configuration with flags > environment > config file > defaults."""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, fields
from typing import Optional

from . import CamnetError

ENV_PREFIX = "CAMNET_"

_ENV_NAMES = {
    "db_path": "CAMNET_DB",
    "listen": "CAMNET_LISTEN",
    "snapshot_ttl_s": "CAMNET_SNAPSHOT_TTL",
    "request_timeout_s": "CAMNET_TIMEOUT",
    "rate_limit": "CAMNET_RATE",
    "concurrency": "CAMNET_CONCURRENCY",
    "liveness_delay_s": "CAMNET_LIVENESS_DELAY",
    "ui_dir": "CAMNET_UI_DIR",
    "state_file": "CAMNET_STATE",
    "max_streams": "CAMNET_MAX_STREAMS",
}


class ConfigError(CamnetError):
    pass


@dataclass
class CliConfig:
    db_path: str = "camnet.db"
    listen: str = "127.0.0.1:8000"
    snapshot_ttl_s: float = 10.0
    request_timeout_s: float = 4.0
    rate_limit: float = 10.0
    concurrency: int = 8
    liveness_delay_s: float = 5.0
    ui_dir: Optional[str] = None
    state_file: str = ".camnet-testbed.json"
    max_streams: int = 64

    def to_json(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}

    def host_port(self) -> tuple[str, int]:
        host, _, port = self.listen.rpartition(":")
        if not host or not port.isdigit():
            raise ConfigError(f"listen must be host:port, got {self.listen!r}")
        return host, int(port)


def resolve_config(
    flag_values: Optional[dict] = None,
    *,
    config_path: Optional[str] = None,
    env: Optional[dict] = None,
) -> CliConfig:
    """Merge config sources. flag_values holds only flags the user passed."""
    env = os.environ if env is None else env
    merged: dict = {}

    path = config_path or env.get("CAMNET_CONFIG")
    if path:
        try:
            with open(path, "r", encoding="utf-8") as fh:
                file_values = json.load(fh)
        except FileNotFoundError as exc:
            raise ConfigError(f"config file not found: {path}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config file is not valid JSON: {exc}") from exc
        if not isinstance(file_values, dict):
            raise ConfigError("config file must hold a JSON object")
        unknown = set(file_values) - {f.name for f in fields(CliConfig)}
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        merged.update(file_values)

    for field_name, env_name in _ENV_NAMES.items():
        if env_name in env:
            merged[field_name] = env[env_name]

    for key, value in (flag_values or {}).items():
        if value is not None:
            merged[key] = value

    cfg = CliConfig()
    for f in fields(CliConfig):
        if f.name not in merged:
            continue
        raw = merged[f.name]
        try:
            if f.type in ("float", float):
                raw = float(raw)
            elif f.type in ("int", int):
                raw = int(raw)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"config value {f.name}={raw!r} is not a number") from exc
        setattr(cfg, f.name, raw)
    return cfg
