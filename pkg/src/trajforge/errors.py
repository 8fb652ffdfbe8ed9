"""Exception hierarchy. Every error raised on bad input data derives from :class:`TrajforgeError`."""


class TrajforgeError(Exception):
    """Base class for data errors; the CLI maps these to exit code 1."""

    module = "trajforge"
    hint = None

    def __init__(self, message, *, episode_id=None, hint=None):
        super().__init__(message)
        self.episode_id = episode_id
        if hint is not None:
            self.hint = hint

    def describe(self):
        parts = [f"[{self.module}]"]
        if self.episode_id is not None:
            parts.append(f"episode {self.episode_id}:")
        parts.append(str(self))
        if self.hint:
            parts.append(f"(hint: {self.hint})")
        return " ".join(parts)


class ParseError(TrajforgeError):
    module = "model"
    hint = "check that the file is valid UTF-8 JSON"


class SchemaError(TrajforgeError):
    module = "model"


class DanglingReferenceError(TrajforgeError):
    module = "model"
    hint = "paths in the manifest are resolved relative to the manifest file"


class ConversionError(TrajforgeError):
    module = "canon"


class DTWError(TrajforgeError):
    module = "dtw"


class FilterError(TrajforgeError):
    module = "filtergate"


class ClusterError(TrajforgeError):
    module = "cluster"


class MixtureError(TrajforgeError):
    module = "mixsample"


class ScoringError(TrajforgeError):
    module = "benchscore"


class ConfigError(TrajforgeError):
    module = "cli"
