"""Site-specific mmWave beam alignment: channel synthesis, learned probing, evaluation."""

__version__ = "0.1.0"
