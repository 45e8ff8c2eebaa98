from __future__ import annotations

import logging
import os

import yaml
from pydantic import ValidationError

from app.errors import ConfigLoadError
from app.models import RunConfig, format_validation_errors

log = logging.getLogger(__name__)


def load_run_config(config_source: str) -> RunConfig:
    """
    Accepts either a filesystem path OR raw config text (JSON or YAML; JSON parses as YAML).
    Logs how the input is resolved and raises ConfigLoadError with rich details on failure.
    """
    try:
        if os.path.exists(config_source):
            log.info("config: loading run config from FILE: %s", config_source)
            with open(config_source, "r", encoding="utf-8") as f:
                raw = f.read()
            log.debug("config: file bytes=%d", len(raw.encode("utf-8")))
        else:
            log.info("config: treating input as RAW text (path not found)")
            raw = config_source
            if ("\n" not in raw) and (":" not in raw):
                log.warning("config: RAW text looks like a bare string (likely a wrong path): %s", raw)

        data = yaml.safe_load(raw)
        if data is None:
            data = {}
        if not isinstance(data, dict):
            raise ConfigLoadError(
                where="config.safe_load",
                message=f"Top-level config is {type(data).__name__}, expected mapping/dict",
            )

        log.info("config: parsed top-level keys: %s", sorted(data.keys()))

        try:
            cfg = RunConfig(**data)
        except ValidationError as ve:
            errs = format_validation_errors(ve)
            for e in errs:
                log.error("config: validation error loc=%s msg=%s type=%s", e.get("loc"), e.get("msg"), e.get("type"))
            raise ConfigLoadError(
                where="models.RunConfig",
                message="Run config validation failed",
                validation_errors=errs,
            )
        log.info("config: RunConfig parsed OK: workdir=%s agent=%s", cfg.paths.workdir, cfg.search.agent)
        return cfg

    except ConfigLoadError:
        raise
    except yaml.YAMLError as e:
        raise ConfigLoadError(where="config.safe_load", message=str(e))
    except OSError as e:
        log.exception("config: unexpected error while reading config")
        raise ConfigLoadError(where="config.load_run_config", message=str(e))
