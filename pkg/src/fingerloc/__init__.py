"""fingerloc: RSSI fingerprint localization experimentation toolkit."""

__version__ = "0.1.0"
