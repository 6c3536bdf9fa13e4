"""EffQR test suite."""
