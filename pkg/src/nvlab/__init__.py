"""Virtual single-NV-center teaching lab.

Simulates the full bench of an instructional diamond-defect experiment:
the spin-1 ground state under microwave drive, spin-dependent optical
cycling, pulse-pattern compilation with hardware constraints, a confocal
scanner with drift, magnet alignment, photon statistics with detector
dead time, and the analysis stack used to fit every standard lab
(ODMR, Rabi, Ramsey, Hahn echo, g2, nuclear precession).
"""

from . import apparatus, config, datasets, experiments, fitting
from . import photophysics, pulses, spin
from .apparatus import Apparatus
from .datasets import Dataset
from .experiments import ExperimentRunner, ExperimentSpec

__version__ = "0.1.0"

__all__ = [
    "Apparatus", "Dataset", "ExperimentRunner", "ExperimentSpec",
    "apparatus", "config", "datasets", "experiments", "fitting",
    "photophysics", "pulses", "spin",
]
