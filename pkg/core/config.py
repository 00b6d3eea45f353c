import os
from dotenv import load_dotenv

load_dotenv()

TOOL_VERSION = "0.4.0"

OUTPUT_DIR = os.getenv("QSEP_OUTPUT_DIR", "runs")
LOG_LEVEL = os.getenv("QSEP_LOG_LEVEL", "INFO")
DEFAULT_JOBS = int(os.getenv("QSEP_JOBS", "1"))
CHUNK_SIZE = int(os.getenv("QSEP_CHUNK_SIZE", "500"))

# Numerical tolerances
TOL_HERMITIAN = 1e-10
TOL_UNITARY = 1e-10
TOL_TRACE = 1e-10
TOL_POSITIVE = 1e-9
TOL_COMPLETENESS = 1e-9
TOL_EIG_INPUT = 1e-8
EXPM_TOL = 1e-14

UPSILON_MIN = 1e-6
XI_MIN = 1e-6
EPS_GRID = 1e-9

# normalization check: fitted order and per-halving discrepancy ratio
KS_MIN_ORDER = 1.0
KS_RATIO_BAND = (1.5, 2.5)

# counting-mode Bernoulli precondition on λ·dt
MAX_JUMP_PROBABILITY = 0.1

# builtin defaults
DEFAULT_EPSILON0 = 1e-3
VALIDATION_SAMPLES = 32
