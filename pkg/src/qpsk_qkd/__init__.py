"""Simulator and protocol stack for a QPSK-encoded BB84 fiber link."""

__version__ = "0.1.0"
