"""Exception types raised across the package."""


class WavError(OSError):
    """Base class for WAV ingestion failures."""


class WavNotFoundError(WavError, FileNotFoundError):
    pass


class WavHeaderError(WavError):
    """RIFF/WAVE header is missing or malformed."""


class UnsupportedEncodingError(WavError):
    """Sample format other than PCM16, PCM24 or float32."""


class DegenerateInputError(ValueError):
    """Input carries no usable power (e.g. all-zero excitation)."""


class EmptyTrackError(ValueError):
    """Pitch track has no voiced frames."""


class ConfigError(ValueError):
    pass
