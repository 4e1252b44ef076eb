import os


class Config:
    # Numerical tolerances
    atol = 1e-12  # Hermiticity, trace and unitarity checks
    psd_tol = 1e-10  # minimum eigenvalue slack
    process_tol = 1e-10  # Choi trace preservation, Kraus completeness
    table_tol = 1e-9  # parity table mass
    residual_tol = 1e-6  # Pauli decomposition residual

    # Register size
    max_qubits = 12
    working_copies = 4  # dense copies alive during a tensordot

    # Device noise (single-qubit gate, two-qubit gate, measurement)
    p1 = 1e-6
    p2 = 1e-3
    pm = 5e-4
    epsilon = 0.1

    # Fibre links
    loss_db_per_km = 0.17
    light_speed_m_s = 2.998e8
    attempt_rate_hz = 470e3
    spacing_km = 17.0
    fuse_sizes = (12, 12)

    # Memory dephasing
    t2_seconds = 50.0
    fidelity_floor = 0.99
    dephasing_model = "exponential"

    # Monte Carlo
    block_size = 1024
    purify_trials = 100000
    workers = os.cpu_count() or 1
    seed = 20140101
    seed_env = "IONLINK_SEED"

    # Toric scans
    desk_sizes = (4, 6, 8)
    desk_trials = 4000
    full_sizes = (8, 12, 16)
    full_trials = 16000
    rounds_per_size = 4  # t = 4L
    bootstrap_samples = 200
    decoder_backend = "pymatching"

    debug = os.environ.get("IONLINK_DEBUG", "") not in ("", "0")


class NumericalInvariantError(ArithmeticError):
    """A state, channel or table broke a numerical invariant"""


class DecompositionError(NumericalInvariantError):
    """Superoperator is not a Pauli-times-projector mixture"""


class QubitBudgetError(MemoryError):
    """Register too large for the configured or available memory"""


def check_probability(name, value, upper=1.0):
    if not 0.0 <= value <= upper:
        raise ValueError(f"{name} must be in [0, {upper}], got {value}")
    return float(value)


def default_seed():
    """Master seed from the environment, else the configured default"""
    raw = os.environ.get(Config.seed_env)
    if raw is None or raw == "":
        return Config.seed
    try:
        return int(raw)
    except ValueError:
        raise ValueError(f"{Config.seed_env} must be an integer, got {raw!r}")
