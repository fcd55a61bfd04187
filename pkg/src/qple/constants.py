"""Constants and numeric defaults for QPLE fitting."""

# Newton solver (M-step)
NEWTON_TOL = 1e-8
NEWTON_MAX_ITER = 50
ARMIJO_SHRINK = 0.5
ARMIJO_MAX_HALVINGS = 30
ARMIJO_C = 1e-4
GRAM_JITTER = 1e-10

# EM
EM_TOL = 1e-6
EM_F_TOL = 1e-6
EM_THETA_TOL = 1e-6
EM_MAX_ITER = 100
EM_MONOTONE_SLACK = 1e-9

# Null-space identifiability diagnostic
NULLSPACE_IRLS_MAX_ITER = 100
NULLSPACE_IRLS_TOL = 1e-10
NULLSPACE_COEF_NORM_CAP = 1e3

# Quadrature
GAUSS_MAX_NODES = 20
GRID_TRUNCATION_SDS = 3.0
CUSTOM_TRUNCATION_SDS = 10.0
DISCRETIZATION_POINTS = 400
WEIGHT_SUM_TOLERANCE = 1e-12
DEFAULT_NODES_PER_DIM = 7

# Kernels and covariate scaling
DOMAIN_TOLERANCE = 1e-9
SCALER_MARGIN = 0.05
ENVELOPE_INFLATION = 2.0

# Covariate model
LOGISTIC_IRLS_MAX_ITER = 100
LOGISTIC_COEF_CAP = 30.0
DEGENERATE_SCALE = 1e-12

# Tuning
LAMBDA_GRID_LOG10_LO = -8.0
LAMBDA_GRID_LOG10_HI = 1.0
LAMBDA_GRID_COUNT = 40
RANGACV_REPLICATES = 5
SIGMA_PERTURB_FRACTION = 0.01
REFIT_EM_TOL = 1e-11
REFIT_F_TOL = 1e-9
REFIT_MAX_ITER = 1000

# Criterion names
CRITERIA = ("gacv", "rangacv", "loocv", "tkl")
