"""Simulated LPG/CO gas monitoring network: stations, lossy link, ingest service."""

from gasnet.classification import HazardLevel, ThresholdTable, above_threshold, classify
from gasnet.gas_model import (
    GasSpecies,
    Scenario,
    ScenarioEvent,
    SensorCurve,
    adc_to_ppm,
    ppm_to_adc,
    scenario_ppm,
)

__version__ = "0.1.0"

__all__ = [
    "GasSpecies",
    "HazardLevel",
    "Scenario",
    "ScenarioEvent",
    "SensorCurve",
    "ThresholdTable",
    "above_threshold",
    "adc_to_ppm",
    "classify",
    "ppm_to_adc",
    "scenario_ppm",
]
