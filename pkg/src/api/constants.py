"""
constants.py
Central place for CLI defaults, environment names and exit codes.
"""

from __future__ import annotations

import os

# ============================================================
# Environment
# ============================================================

ENV_PREFIX = "ROI10D_"
LOG_LEVEL: str = os.getenv(f"{ENV_PREFIX}LOG_LEVEL", "INFO")
LOG_FORMAT = "%(asctime)s %(name)s %(levelname)s %(message)s"

# ============================================================
# Evaluation
# ============================================================

DEFAULT_CLASS = "Car"
DEFAULT_NMS_2D = 0.65
DEFAULT_NMS_BEV = 0.05
DEFAULT_IOU = 0.7
SECONDARY_IOU = 0.5
DEFAULT_AP_POINTS = 11

# ============================================================
# Binned recall
# ============================================================

DEFAULT_DEPTH_BIN_M = 5.0
DEFAULT_AZIMUTH_BIN_DEG = 20.0
DEFAULT_MAX_DEPTH_M = 80.0
RECALL_ACCEPT_IOU = 0.5

# ============================================================
# Optimisation demo
# ============================================================

DEFAULT_DEMO_SEEDS = 10
DEFAULT_ITERATIONS = 2000
DEFAULT_WARMUP_STEPS = 500
DEFAULT_CONVERGENCE_TOL = 1e-3

# mean / std of (w, h, l) in meters for cars when no stats file is given
DEFAULT_CAR_MEAN = (1.62, 1.53, 3.89)
DEFAULT_CAR_STD = (0.10, 0.14, 0.43)

# ============================================================
# Shape space
# ============================================================

DEFAULT_STRIP_STEPS = 5

# ============================================================
# Augmentation
# ============================================================

DEFAULT_K_MAX = 3
DEFAULT_Z_MIN = 5.0
DEFAULT_Z_MAX = 60.0
DEFAULT_MAX_PERTURBATION_DEG = 10.0
DEFAULT_PLACEMENT_RETRIES = 50

# ============================================================
# Output file names
# ============================================================

REPORT_JSON = "report.json"
REPORT_CSV = "report.csv"
TRACE_CSV = "trace.csv"
TRACE_SVG = "trace.svg"
RECALL_CSV = "recall_bins.csv"
MANIFEST_JSON = "manifest.json"
MEDIANS_JSON = "medians.json"
STATS_JSON = "extent_stats.json"
RUN_CONFIG_JSON = "run_config.json"

# ============================================================
# Exit codes
# ============================================================

EXIT_OK = 0
EXIT_CONFIG_ERROR = 2
EXIT_DATA_ERROR = 3
EXIT_NUMERICAL_ERROR = 4
