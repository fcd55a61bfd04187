"""Constants for the simulation harness."""

# Sample sizes
MEASUREMENT_ERROR_N = 101
MEASUREMENT_ERROR_EXACT = 5
FRANKE_N = 300

# Replicates and rules
DEFAULT_REPLICATES = 20
MAX_REPLICATES = 100
DEFAULT_SIM_NODES = 5

# Smoothing-parameter grid used by simulations (log10 units)
SIM_LAMBDA_LO = -8.0
SIM_LAMBDA_HI = 0.0
SIM_LAMBDA_COUNT = 17

# Covariate X ~ U[0, 1] has variance 1/12
UNIFORM_VARIANCE = 1.0 / 12.0
DEFAULT_NOISE_RATIO = 0.25

# Missingness: responses above these thresholds lose covariates
MISSING_THRESHOLDS = {"binomial": 3, "poisson": 10}

# Trial counts for binomial cases
CASE_TRIALS = {"i": 2, "franke_binomial": 5}

METHODS = ("full", "qple", "naive")
TUNINGS = ("tkl", "rangacv")
