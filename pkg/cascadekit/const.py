"""Constants for cascadekit."""

# pragma: no cover

from math import log, sqrt

BETA_C = sqrt(2 * log(2))
DEFAULT_ATOM_CAP = 0.05
DEFAULT_ATOM_WINDOW = 0.02
DEFAULT_EDGE_FLOOR = 0.01
DEFAULT_GAP_FLOOR = 0.01
DEFAULT_OUTPUT_DIR = "cascadekit-output"
EXACT_ATOM_LIMIT = 4096
MASS_TOLERANCE = 1e-12
MAX_PSI_POWER = 6
M_CAP = 10_000
N_MAX = 14
OUTPUT_DIR_ENV = "CASCADEKIT_OUTPUT_DIR"
OVERFLOW_GUARD = 2**62
PSD_TOLERANCE = 1e-9
THRESHOLD_SLACK = 1e-12
