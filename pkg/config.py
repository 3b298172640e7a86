"""
Configuration file for the redirected-walking trajectory prediction simulator
"""

import logging
import os
from typing import Optional

from dotenv import load_dotenv

from errors import ConfigurationError

load_dotenv()

# Runtime settings
OUTPUT_DIR = os.getenv("RDW_OUTPUT_DIR", "results")
LOG_LEVEL = os.getenv("RDW_LOG_LEVEL", "INFO")
LOG_FILE = os.getenv("RDW_LOG_FILE")
# coerced and validated by the harness
JOBS = os.getenv("RDW_JOBS", "1")

# Simulation timing and deployment room
SIMULATION_CONFIG = {
    "room_side": 7.5,        # meters, square room
    "tick_rate": 10.0,       # points per second
    "duration": 3600.0,      # seconds
    "users": 2,              # training scenario
    "seed": 7,
}

# Virtual-world movement model
VIRTUAL_MOTION_CONFIG = {
    "mean_speed": 1.0,         # m/s, must stay above the velocity threshold
    "turn_rate_std": 0.3,      # rad/s
    "pause_probability": 0.02, # per tick
    "min_pause": 1.0,          # seconds
    "max_pause": 3.0,          # seconds
}

# APF redirected walking with resets
RDW_CONFIG = {
    "user_falloff": 1.4,
    "arc_radius": 7.5,          # meters
    "max_rotation_rate": 15.0,  # degrees per second
    "velocity_threshold": 0.1,  # m/s
    "wall_gain": 1.0,
    "user_gain": 1.0,
    "reset_wall_margin": 0.5,   # meters
    "reset_user_margin": 0.5,   # meters
}

# Training windows: 2 s history at 10 Hz, 100 ms lookahead
WINDOW_CONFIG = {
    "history_len": 20,
    "horizon": 1,
    "stride": 1,
    "frame": "relative",
}

TRAINING_CONFIG = {
    "train_fraction": 0.8,
    "normalizer_mode": "room",
    "seed": 11,
    "approaches": ["LSTM-B", "LSTM-I1", "LSTM-I2", "LSTM-V",
                   "GRU-B", "GRU-I1", "GRU-I2", "GRU-V"],
    "influence_threshold": 0.10,  # relative change of mean SE
    "tune_cell": "GRU",
    "tune_variant": "Virtual",
}

OPTIMIZER_DEFAULTS = {
    "sgd": {"learning_rate": 0.01},
    "adam": {"learning_rate": 0.001},
    "nadam": {"learning_rate": 0.001},
    "beta1": 0.9,
    "beta2": 0.999,
    "epsilon": 1e-8,
}

# Tuned columns: activation, optimizer, neurons, batch size, epochs
HYPERPARAMETERS = {
    "Initial": {"activation": "softplus", "optimizer": "sgd", "neurons": 20, "batch": 20, "epochs": 10},
    "LSTM-B": {"activation": "relu", "optimizer": "nadam", "neurons": 80, "batch": 20, "epochs": 40},
    "LSTM-V": {"activation": "relu", "optimizer": "adam", "neurons": 80, "batch": 60, "epochs": 50},
    "GRU-B": {"activation": "softsign", "optimizer": "nadam", "neurons": 40, "batch": 80, "epochs": 30},
    "GRU-V": {"activation": "softmax", "optimizer": "nadam", "neurons": 80, "batch": 80, "epochs": 30},
}

# Values tried per axis by the one-at-a-time tuner
SWEEP_VALUES = {
    "activation": ["softplus", "relu", "softsign", "softmax"],
    "optimizer": ["sgd", "adam", "nadam"],
    "neurons": [20, 40, 60, 80],
    "batch": [20, 40, 60, 80],
    "epochs": [10, 20, 30, 40, 50],
}
SWEEP_ORDER = ["activation", "optimizer", "neurons", "batch", "epochs"]

SCALE_STUDY_CONFIG = {
    "user_counts": [2, 3, 4, 5, 6],
    "approaches": ["LSTM-V", "GRU-V"],
}

LOG_FORMAT = '%(asctime)s - %(name)s - %(levelname)s - %(message)s'


def setup_logging(level: str = LOG_LEVEL, log_file: Optional[str] = LOG_FILE):
    """Setup logging for CLI runs"""
    if not isinstance(logging.getLevelName(str(level).upper()), int):
        raise ConfigurationError(f"unknown log level {level!r}")
    handlers = [logging.StreamHandler()]
    if log_file:
        handlers.append(logging.FileHandler(log_file))
    logging.basicConfig(level=level.upper(), format=LOG_FORMAT, handlers=handlers, force=True)
