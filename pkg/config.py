"""
Nuclei Segmentation Toolkit - Configuration
"""
import os

# Paths
APP_DIR = os.path.dirname(os.path.abspath(__file__))
DATA_DIR = os.environ.get("NUCSEG_HOME", os.path.join(APP_DIR, "data"))

# Ensure directories exist
os.makedirs(DATA_DIR, exist_ok=True)

# App settings
APP_NAME = "Nuclei Segmentation Toolkit"
APP_VERSION = "1.0.0"

# Every pipeline key can be overridden with NUCSEG_<KEY>, e.g. NUCSEG_BLOCK_SIZE=40
ENV_PREFIX = "NUCSEG_"

# CLI exit codes (stable)
EXIT_OK = 0
EXIT_PARTIAL = 1
EXIT_USAGE = 2

# Manifests and reports
MANIFEST_HEADER = ("image", "annotation")
EVAL_HEADER = ("image", "aji", "dice")
ABLATION_HEADER = (
    "Stages",
    "Stage-1 (Modules 1&2)",
    "Stage-1 (Modules 1&2&3)",
    "Stages 1&2",
)
STAGE_SUFFIXES = ("_s1m12", "_s1m123", "_final")

# Overlay color for instance boundaries
OVERLAY_COLOR = (0, 255, 0)
