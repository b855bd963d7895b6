"""Simulation and analysis toolkit for waveguide-coupled G-center emitters in silicon."""

__version__ = "0.1.0"
