"""
Modules package: configuration, run persistence, random streams and errors.
"""
from .errors import (
    SmcError,
    AllParticlesDead,
    BudgetExhausted,
    ConfigError,
    NoMass,
    OracleUnavailable,
)
from .rng import RandomStreams, derive_seed
from .settings import SettingsManager
from .run_store import (
    new_run_dir,
    save_run,
    load_run,
    load_run_history,
)
