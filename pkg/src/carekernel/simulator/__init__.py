"""Scripted participant/device simulator.

Stands in for the mobile app and real devices: sets a study up through the
management API, enrolls participants, emits generated and scripted data in
simulated-time order, answers interactions, and records every request and
response in a transcript that `sim verify` checks against declarative
assertions. Edge-profile values never leave the simulator's local state file.
"""

from .runner import run_scenario
from .verify import verify_transcript

__all__ = ["run_scenario", "verify_transcript"]
