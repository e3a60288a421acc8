"""Numerical laboratory for many-interacting-worlds (MIW) sequences of
higher-energy harmonic-oscillator states."""

__version__ = "0.1.0"
