"""HDG solver for the Ostrovsky equation."""

from ._core import (
    ConfigError,
    OstrovskyError,
    PetviashviliError,
    StepFailure,
    __version__,
    default_config,
    fft,
    gauss_legendre,
    ifft,
    legendre,
    linear_symbol,
    manufactured_source,
    oh_exact,
    peakon_u0,
    petviashvili,
    resolve_config,
    run_experiment,
    simulate,
    solve_block_tridiagonal,
    tilde_tau,
)

__all__ = [
    "ConfigError",
    "OstrovskyError",
    "PetviashviliError",
    "StepFailure",
    "__version__",
    "default_config",
    "fft",
    "gauss_legendre",
    "ifft",
    "legendre",
    "linear_symbol",
    "manufactured_source",
    "oh_exact",
    "peakon_u0",
    "petviashvili",
    "resolve_config",
    "run_experiment",
    "simulate",
    "solve_block_tridiagonal",
    "tilde_tau",
]
