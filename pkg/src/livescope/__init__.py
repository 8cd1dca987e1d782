"""Live vs on-demand video detection and live-stream QoE inference from
flow telemetry."""

__version__ = "0.1.0"
