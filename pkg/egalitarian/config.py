import json
import logging
import os
from dataclasses import dataclass
from pathlib import Path

import jsonschema
from dotenv import load_dotenv

load_dotenv()

logger = logging.getLogger(__name__)

CONFIG_DIR = Path(__file__).parent / "configs"
PRESET_FILE = CONFIG_DIR / "presets.json"
TRADEOFF_FILE = CONFIG_DIR / "tradeoff_table.json"


def _load_json(path: Path, what: str) -> dict:
    """
    Read a JSON document.

    Raises:
        FileNotFoundError: When the file is not found
        ValueError: When the file is not valid JSON
    """
    try:
        with open(path, "r") as f:
            return json.load(f)
    except FileNotFoundError:
        raise FileNotFoundError(f"{what} file {path} not found")
    except json.JSONDecodeError as e:
        raise ValueError(f"Invalid JSON in {what} file {path}: {e}")


def _validate(document: dict, schema_name: str, label: str) -> dict:
    """
    Validate a document against one of the bundled schemas.

    Raises:
        ValueError: When the document doesn't match the schema
    """
    schema = _load_json(CONFIG_DIR / schema_name, "schema")
    try:
        jsonschema.validate(document, schema)
        return document
    except jsonschema.ValidationError as e:
        raise ValueError(f"Configuration validation failed for {label}: {e.message}")
    except jsonschema.SchemaError as e:
        raise ValueError(f"Schema error while validating {label}: {e.message}")


def load_presets(path: str | Path | None = None) -> dict[str, dict]:
    """
    Load every parameter preset.

    The file is `path`, else EGALITARIAN_PRESET_FILE, else the bundled presets.json.
    """
    path = Path(path or runtime_settings().preset_file or PRESET_FILE)
    document = _validate(_load_json(path, "preset"), "preset_schema.json", f"preset file '{path}'")
    return document["presets"]


def load_preset(name: str, path: str | Path | None = None) -> dict:
    """
    Look up one preset by name.

    Raises:
        FileNotFoundError: When the preset file is not found
        ValueError: When the file is invalid or has no preset called `name`
    """
    try:
        presets = load_presets(path)
        if name not in presets:
            raise ValueError(f"unknown preset, available: {', '.join(sorted(presets))}")
        return dict(presets[name])
    except (FileNotFoundError, ValueError) as e:
        logger.error(f"Error loading preset '{name}': {e}")
        raise type(e)(f"Failed to load preset '{name}': {e}")


def load_tradeoff_table(path: str | Path | None = None) -> dict:
    path = Path(path or TRADEOFF_FILE)
    try:
        return _validate(_load_json(path, "tradeoff table"), "tradeoff_table_schema.json", "tradeoff table")
    except (FileNotFoundError, ValueError) as e:
        logger.error(f"Error loading tradeoff table: {e}")
        raise type(e)(f"Failed to load tradeoff table '{path}': {e}")


@dataclass(frozen=True)
class RuntimeSettings:
    threads: int
    log_level: str
    preset_file: str | None


def runtime_settings() -> RuntimeSettings:
    """Defaults taken from the environment; none of the variables is required."""
    threads = os.getenv("EGALITARIAN_THREADS")
    try:
        threads = int(threads) if threads else (os.cpu_count() or 1)
    except ValueError:
        logger.warning(f"Ignoring EGALITARIAN_THREADS={threads!r}, not an integer")
        threads = os.cpu_count() or 1
    return RuntimeSettings(
        threads=max(1, threads),
        log_level=os.getenv("EGALITARIAN_LOG_LEVEL", "INFO").upper(),
        preset_file=os.getenv("EGALITARIAN_PRESET_FILE"),
    )
