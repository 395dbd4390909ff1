"""CLI subcommands. Each module exposes ``register(subparsers)`` and a ``run(config, args)`` handler."""
import json
from pathlib import Path
from typing import Any, Dict, Optional, Sequence

from src.config import RunConfig
from src.errors import ConfigurationError
from src.logging_config import get_logger

logger = get_logger(__name__)


def parse_set_options(pairs: Optional[Sequence[str]]) -> Dict[str, str]:
    """``KEY=VALUE`` strings from repeated ``--set`` flags."""
    values = {}
    for pair in pairs or []:
        key, sep, value = pair.partition("=")
        if not sep or not key.strip():
            raise ConfigurationError(f"expected KEY=VALUE, got '{pair}'", field="set")
        values[key.strip()] = value.strip()
    return values


def write_manifest(config: RunConfig, command: str, extra: Optional[Dict[str, Any]] = None) -> Path:
    output_dir = Path(config.output_dir)
    output_dir.mkdir(parents=True, exist_ok=True)
    manifest = config.manifest()
    manifest["command"] = command
    if extra:
        manifest.update(extra)
    path = output_dir / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2, default=str))
    logger.debug(f"Wrote run manifest to {path}")
    return path
