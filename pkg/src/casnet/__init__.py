"""Compress-and-send distributed-microphone speech enhancement."""

__version__ = "0.1.0"
