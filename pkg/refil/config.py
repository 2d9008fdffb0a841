# refil/config.py
import os

from dotenv import load_dotenv

load_dotenv()


def _env_bool(name: str, default: bool) -> bool:
    value = os.getenv(name)
    if value is None:
        return default
    return value.strip().lower() in ("1", "true", "yes", "on")


# Paths and logging
DATA_DIR = os.getenv("REFIL_DATA_DIR", "./data")
LOG_FILE = os.getenv("REFIL_LOG_FILE", "refil.log")
LOG_LEVEL = os.getenv("REFIL_LOG_LEVEL", "INFO")

# Differentiation core
JACOBIAN_CAP = int(os.getenv("REFIL_JACOBIAN_CAP", str(2 ** 22)))
SWEEP_CHUNK = int(os.getenv("REFIL_SWEEP_CHUNK", "256"))

# Trace estimation / noise calibration
EXACT_TRACE_MAX_DIM = int(os.getenv("REFIL_EXACT_TRACE_MAX_DIM", "4096"))
HUTCHINSON_K = int(os.getenv("REFIL_HUTCHINSON_K", "64"))

# SNR loss
SNR_EPS_Z = 1e-8
SNR_FD_STEP = 1e-3
SNR_PROBES = 4

# Attacker defaults
ATTACK_LR = 0.1
ATTACK_BETA1 = 0.9
ATTACK_BETA2 = 0.999
ATTACK_EPS = 1e-8
ATTACK_ITERATIONS = 5000
ATTACK_RESTARTS = 3
ATTACK_INIT_STD = 0.5
TV_LAMBDA = 0.05

# SSIM
SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03

# Datasets
CIFAR10_MEAN = (0.4914, 0.4822, 0.4465)
CIFAR10_STD = (0.2470, 0.2435, 0.2616)
MOVIELENS_LIKE_THRESHOLD = 5.0
MNIST_DESK_TEST_SIZE = 1000
CIFAR_DESK_TRAIN_SIZE = 10000
CIFAR_DESK_TEST_SIZE = 2000
MOVIELENS_DESK_RATINGS = 100000

# Experiment grid (values are 1/dFIL)
DEFAULT_INV_DFIL_GRID = (0.01, 0.1, 1.0, 10.0, 100.0)

# Split service
SERVER_BIND = os.getenv("REFIL_SERVER_BIND", "127.0.0.1:8600")
SEND_TELEMETRY = _env_bool("REFIL_SEND_TELEMETRY", True)
CLIENT_TIMEOUT = 30.0
FRAMES_PATH = "/split/v1/frames"
