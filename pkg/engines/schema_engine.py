import hashlib
import json
import os
from pathlib import Path
from typing import Any, Dict, Mapping, Optional

from models.errors import DataMissing
from models.schemas import RunConfig

ENV_PREFIX = "N3DT_"
ENV_SEPARATOR = "__"


def _parse_env_value(raw: str) -> Any:
    try:
        return json.loads(raw)
    except ValueError:
        return raw


def env_overrides(environ: Mapping[str, str], prefix: str = ENV_PREFIX) -> Dict[str, Any]:
    """N3DT_TRAIN__TEMPERATURE=0.1 -> {"train": {"temperature": 0.1}}"""
    overrides: Dict[str, Any] = {}
    for key, raw in sorted(environ.items()):
        if not key.startswith(prefix):
            continue
        path = [p.lower() for p in key[len(prefix):].split(ENV_SEPARATOR) if p]
        if not path:
            continue
        node = overrides
        for part in path[:-1]:
            node = node.setdefault(part, {})
        node[path[-1]] = _parse_env_value(raw)
    return overrides


def deep_merge(base: Dict[str, Any], update: Mapping[str, Any]) -> Dict[str, Any]:
    merged = dict(base)
    for key, value in update.items():
        if isinstance(value, Mapping) and isinstance(merged.get(key), dict):
            merged[key] = deep_merge(merged[key], value)
        else:
            merged[key] = value
    return merged


class SchemaEngine:
    """Loads a RunConfig from JSON, layers environment overrides on top, validates it"""

    def __init__(self, config_path: Optional[str] = "config/desk_config.json", environ: Optional[Mapping[str, str]] = None):
        raw: Dict[str, Any] = {}
        if config_path:
            path = Path(config_path)
            if not path.exists():
                raise DataMissing("config file not found", str(path))
            try:
                raw = json.loads(path.read_text())
            except ValueError as e:
                raise DataMissing(f"config file is not valid JSON: {e}", str(path))
        self.config_path = config_path
        self.raw = deep_merge(raw, env_overrides(os.environ if environ is None else environ))
        self.config = RunConfig.model_validate(self.raw)

    def override(self, **updates: Any) -> RunConfig:
        """Re-validate with command-line values applied last"""
        self.raw = deep_merge(self.raw, {k: v for k, v in updates.items() if v is not None})
        self.config = RunConfig.model_validate(self.raw)
        return self.config

    @property
    def config_hash(self) -> str:
        return config_hash(self.config)


def config_hash(config: RunConfig) -> str:
    """First 16 hex digits of the sha256 of the canonical JSON dump"""
    canonical = json.dumps(config.model_dump(mode="json"), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()[:16]
