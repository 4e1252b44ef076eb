__version__ = "1.0.0"

from .purify import NoiseModel, markov_cost, run_level, werner
from .qcore import DensityMatrix, Superoperator, bell_fidelity, extract_superoperator
from .repeater import PipelineConfig, pipeline, rate_budget
from .stabtool import ParityErrorTable, build_table
from .toric import ToricDecoder, ToricLattice, threshold_scan
