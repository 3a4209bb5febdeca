"""
Configuration file for the bucket oblivious sort toolkit
"""

# Bucket capacity in element slots (must be even)
# 512 keeps the overflow bound below 2^-80 up to n = 2^20
DEFAULT_BUCKET_SIZE = 512

# Master seed used when neither --seed nor the environment variable is given
DEFAULT_SEED = 0
SEED_ENV_VAR = "OBLISORT_SEED"

# Client storage budgets (elements held at once)
BUCKET_CLIENT_BUDGET_FACTOR = 2  # BucketClient holds 2Z elements
CONST_CLIENT_BUDGET = 8

# Record layout
DEFAULT_PAYLOAD_WIDTH = 0  # bytes
KEY_BYTES = 8

# Random labels for the constant-storage bucket permutation
DEFAULT_LABEL_WIDTH = 64
MAX_LABEL_WIDTH = 64

# Disk model
DEFAULT_DISKS = 1
STRIPED_MIN_DISKS = 3

# Monte Carlo settings
DEFAULT_TRIALS = 10000
MONTE_CARLO_BATCH = 1 << 20  # labels drawn per batch
DEFAULT_RETRY_ATTEMPTS = 8

# Statistical thresholds
CHI_SQUARE_P_VALUE = 0.001
LOADS_TV_TOLERANCE = 0.02

# Published sorting-network constants (runtime = c * n log n), reported only
AKS_CONSTANT = 5.4e7
ZIGZAG_CONSTANT = 8e4
RANDOMIZED_SHELLSORT_CONSTANT = 24
REFERENCE_CONSTANTS = {
    "aks": AKS_CONSTANT,
    "zigzag": ZIGZAG_CONSTANT,
    "randomized_shellsort": RANDOMIZED_SHELLSORT_CONSTANT,
}

# Size at which the headline ratio is extrapolated
HEADLINE_LOG2_N = 30

# CSV schemas
BENCH_COLUMNS = [
    "algo", "n", "Z", "mode", "measured_accesses", "predicted_accesses",
    "comparisons", "moves", "disks", "seed",
]
OVERFLOW_COLUMNS = [
    "n", "Z", "B", "trials", "any_overflow_rate", "max_bucket_rate",
    "final_bucket_rate", "bucket_bound", "epsilon_bound", "seed",
]
LOCALITY_COLUMNS = ["algo", "n", "Z", "disks", "moves", "levels", "seed"]
FLOAT_FORMAT = "%.6g"

# Exit codes
EXIT_OK = 0
EXIT_USAGE = 1
EXIT_OVERFLOW = 2
EXIT_IO = 3
