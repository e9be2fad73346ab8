"""OFDM link simulation with classical and hybrid neural receivers."""

from ._core import (
    CheckpointError,
    Config,
    ConfigError,
    FingerprintError,
    TrainingDiverged,
    bp_decode,
    constellation_points,
    demap,
    distortion,
    ebn0_to_esn0_db,
    frame_layout,
    inspect_checkpoint,
    parameter_count,
    psnr_db,
    regular_ldpc_alist,
    run_payload,
    run_sweep,
    snr_db_to_noise_var,
    sweep_csv,
    synthetic_image,
    train,
)

__all__ = [
    "CheckpointError",
    "Config",
    "ConfigError",
    "FingerprintError",
    "TrainingDiverged",
    "bp_decode",
    "configure",
    "constellation_points",
    "demap",
    "distortion",
    "ebn0_to_esn0_db",
    "frame_layout",
    "inspect_checkpoint",
    "parameter_count",
    "psnr_db",
    "regular_ldpc_alist",
    "run_payload",
    "run_sweep",
    "snr_db_to_noise_var",
    "sweep_csv",
    "synthetic_image",
    "train",
]


def configure(path=None, **overrides):
    """Loads a config file (or the defaults) and applies key=value overrides.

    Dotted keys are written with double underscores: ``channel__model="ideal"``.
    """
    cfg = Config.load(path) if path is not None else Config()
    if not overrides:
        return cfg
    lines = []
    for key, value in overrides.items():
        if isinstance(value, bool):
            value = "true" if value else "false"
        elif isinstance(value, (list, tuple)):
            value = ", ".join(str(v) for v in value)
        lines.append(f"{key.replace('__', '.')} = {value}")
    return cfg.with_lines(lines)
