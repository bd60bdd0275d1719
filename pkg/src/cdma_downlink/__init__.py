"""CDMA downlink power - per-link transmit power statistics under hard and soft handoff."""

__version__ = "1.0.0"
