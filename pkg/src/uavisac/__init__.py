"""Multi-UAV corridor data-collection simulator with ISAC QoS feasibility checks."""

__version__ = "0.1.0"
