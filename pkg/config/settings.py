"""
Configuration settings for the structural break monitor
"""
import os
from dotenv import load_dotenv

# Load environment variables
load_dotenv()


def _env_int(name: str, default):
    value = os.getenv(name)
    return int(value) if value not in (None, "") else default


# Report documents
SCHEMA_VERSION = 1

# Logging
LOG_LEVEL = os.getenv("CUSUM_LOG_LEVEL", "WARNING").upper()
LOG_FORMAT = "%(asctime)s %(levelname)s %(name)s: %(message)s"
LOGS_DIR = "logs"
LOG_FILE = os.getenv("CUSUM_LOG_FILE")

# Monte Carlo settings
SIMULATION_SETTINGS = {
    "n_grid": _env_int("CUSUM_N_GRID", 2000),
    "n_reps": _env_int("CUSUM_N_REPS", 20000),
    "full_n_grid": 10000,
    "full_n_reps": 100000,
    "min_reps": 1000,
    "block_size": _env_int("CUSUM_BLOCK_SIZE", 250),
    "workers": _env_int("CUSUM_WORKERS", 1),
}

# Finite-sample experiment settings
REPLICATION_SETTINGS = {
    "n_reps": _env_int("CUSUM_N_REPS", 20000),
    "full_n_reps": 100000,
    "null_reps": 20000,
    "shift": 0.8,
    "break_table_shift": 1.0,
    "intercept": 2.0,
    "slope": 1.0,
    "significance": 0.05,
}

# Recursive least squares settings
REGRESSION_SETTINGS = {
    "refactor_every": 64,
    "eigen_tol": 1e-12,
    "symmetry_tol": 1e-10,
    "degenerate_variance_tol": 1e-20,
    "orthonormal_tol": 1e-8,
}

# Online monitoring settings
MONITOR_SETTINGS = {
    "max_retained": _env_int("CUSUM_MONITOR_MAX_RETAINED", None),
}

# Grid on which boundary shapes are checked against Assumption 2
BOUNDARY_SETTINGS = {
    "check_grid_max": 1000.0,
    "check_grid_points": 4001,
}

DETECTOR_KINDS = ("q", "bq", "sbq")
BOUNDARY_KINDS = ("linear", "radical_chu")

# Asymptotic critical values for the linear boundary d(r) = 1 + 2r,
# simulated on 10,000 grid points with 100,000 repetitions.
RETROSPECTIVE_ALPHAS = (0.20, 0.10, 0.05, 0.025, 0.01)
RETROSPECTIVE_CRITICAL_VALUES = {
    # forward and backward share the same limit
    "q": {
        1: (0.734, 0.847, 0.945, 1.034, 1.143),
        2: (0.839, 0.941, 1.032, 1.115, 1.219),
        3: (0.895, 0.993, 1.081, 1.163, 1.260),
        4: (0.933, 1.029, 1.114, 1.192, 1.287),
        5: (0.962, 1.056, 1.139, 1.216, 1.307),
        6: (0.985, 1.077, 1.160, 1.235, 1.323),
        7: (1.005, 1.095, 1.176, 1.249, 1.338),
        8: (1.021, 1.110, 1.189, 1.261, 1.349),
    },
    "sbq": {
        1: (1.018, 1.113, 1.198, 1.278, 1.374),
        2: (1.107, 1.196, 1.277, 1.352, 1.442),
        3: (1.156, 1.244, 1.321, 1.392, 1.481),
        4: (1.190, 1.275, 1.350, 1.419, 1.506),
        5: (1.216, 1.299, 1.372, 1.441, 1.526),
        6: (1.237, 1.317, 1.388, 1.457, 1.541),
        7: (1.253, 1.333, 1.404, 1.471, 1.556),
        8: (1.268, 1.347, 1.418, 1.483, 1.566),
    },
}

# Stacked backward monitoring, keyed by horizon m then nu: (10%, 5%, 1%)
MONITORING_ALPHAS = (0.10, 0.05, 0.01)
SBQ_MONITORING_CRITICAL_VALUES = {
    1.2: ((0.782, 0.859, 1.024), (0.859, 0.935, 1.092), (0.902, 0.975, 1.129), (0.932, 1.003, 1.152),
          (0.954, 1.023, 1.170), (0.972, 1.041, 1.186), (0.987, 1.054, 1.198), (1.000, 1.065, 1.206)),
    1.4: ((0.941, 1.030, 1.208), (1.028, 1.111, 1.277), (1.076, 1.156, 1.320), (1.108, 1.185, 1.345),
          (1.133, 1.208, 1.366), (1.152, 1.225, 1.381), (1.167, 1.241, 1.396), (1.181, 1.253, 1.409)),
    1.6: ((1.026, 1.113, 1.292), (1.111, 1.192, 1.365), (1.158, 1.238, 1.406), (1.189, 1.269, 1.432),
          (1.214, 1.293, 1.452), (1.235, 1.311, 1.466), (1.251, 1.325, 1.477), (1.265, 1.339, 1.488)),
    1.8: ((1.077, 1.162, 1.344), (1.161, 1.244, 1.411), (1.208, 1.286, 1.452), (1.240, 1.317, 1.476),
          (1.265, 1.340, 1.496), (1.283, 1.357, 1.511), (1.300, 1.372, 1.525), (1.315, 1.385, 1.537)),
    2.0: ((1.113, 1.198, 1.374), (1.196, 1.277, 1.442), (1.244, 1.321, 1.481), (1.275, 1.350, 1.506),
          (1.299, 1.372, 1.526), (1.317, 1.388, 1.541), (1.333, 1.404, 1.556), (1.347, 1.418, 1.566)),
    3.0: ((1.211, 1.293, 1.462), (1.291, 1.366, 1.524), (1.334, 1.407, 1.558), (1.363, 1.436, 1.582),
          (1.386, 1.457, 1.601), (1.404, 1.472, 1.615), (1.420, 1.487, 1.629), (1.433, 1.500, 1.640)),
    4.0: ((1.262, 1.339, 1.500), (1.336, 1.410, 1.564), (1.378, 1.450, 1.599), (1.407, 1.478, 1.621),
          (1.429, 1.497, 1.638), (1.446, 1.513, 1.651), (1.461, 1.527, 1.665), (1.473, 1.539, 1.679)),
    6.0: ((1.316, 1.390, 1.544), (1.387, 1.460, 1.606), (1.428, 1.496, 1.638), (1.456, 1.522, 1.660),
          (1.476, 1.541, 1.680), (1.492, 1.557, 1.696), (1.507, 1.571, 1.709), (1.519, 1.583, 1.718)),
    8.0: ((1.346, 1.419, 1.569), (1.417, 1.486, 1.629), (1.456, 1.522, 1.661), (1.483, 1.548, 1.686),
          (1.503, 1.567, 1.706), (1.519, 1.582, 1.718), (1.533, 1.596, 1.728), (1.545, 1.607, 1.739)),
    10.0: ((1.367, 1.440, 1.588), (1.437, 1.503, 1.644), (1.475, 1.540, 1.677), (1.500, 1.565, 1.703),
           (1.520, 1.584, 1.718), (1.536, 1.599, 1.732), (1.551, 1.612, 1.744), (1.562, 1.623, 1.752)),
    float("inf"): ((1.450, 1.514, 1.648), (1.512, 1.573, 1.703), (1.547, 1.606, 1.736), (1.570, 1.629, 1.760),
                   (1.589, 1.647, 1.775), (1.604, 1.661, 1.788), (1.617, 1.673, 1.799), (1.627, 1.683, 1.807)),
}

# Forward monitoring, infinite horizon, 5% level
Q_INFINITE_CRITICAL_VALUES = {
    1: {0.05: 0.957},
    2: {0.05: 1.044},
}

# Andrews sup-Wald asymptotic critical values for trimming r0 = 0.15,
# keyed by the number of coefficients allowed to break.
# Source: Andrews (1993), Econometrica 61(4), Table 1, as corrected in
# Andrews (2003), Econometrica 71(1).
SUP_WALD_R0 = 0.15
SUP_WALD_CRITICAL_VALUES = {
    1: {0.10: 7.12, 0.05: 8.68, 0.01: 12.16},
    2: {0.10: 10.00, 0.05: 11.72, 0.01: 15.56},
    3: {0.10: 12.37, 0.05: 14.13, 0.01: 18.07},
    4: {0.10: 14.50, 0.05: 16.45, 0.01: 20.47},
}

# CSV interchange
CSV_SETTINGS = {
    "response_column": "y",
    "regressor_prefix": "x",
    "encoding": "utf-8",
}
