"""Event-based SDOH extraction, scoring and structured-data comparison."""

__version__ = "0.1.0"
CHECKPOINT_FORMAT_VERSION = 1
STANDOFF_FORMAT_VERSION = 1
