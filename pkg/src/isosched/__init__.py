"""Preemptive tile-pipeline scheduling and timeslot simulation for multi-engine DNN accelerators."""

__version__ = "0.1.0"
