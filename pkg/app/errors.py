from __future__ import annotations

from typing import Any, Dict, List


class PipelineError(Exception):
    """Base error carrying the stage/module that raised it."""

    def __init__(self, where: str, message: str):
        super().__init__(message)
        self.where = where
        self.message = message

    def to_dict(self) -> Dict[str, Any]:
        return {
            "status": "error",
            "where": self.where,
            "message": self.message,
            "validation_errors": getattr(self, "validation_errors", []),
        }


class DatasetError(PipelineError):
    pass


class ModelError(PipelineError):
    pass


class FeatureError(PipelineError):
    pass


class SamplerError(PipelineError):
    pass


class DegenerateSamplerError(SamplerError):
    """tau sums to ~0: the sampler discards every instance."""


class GPError(PipelineError):
    pass


class SearchError(PipelineError):
    pass


class MetricsError(PipelineError):
    pass


class ArtifactError(PipelineError):
    pass


class ConfigLoadError(PipelineError):
    def __init__(self, where: str, message: str, validation_errors: List[Dict[str, Any]] | None = None):
        super().__init__(where, message)
        self.validation_errors = validation_errors or []
