from pathlib import Path

from pydantic_settings import BaseSettings, SettingsConfigDict


class Settings(BaseSettings):
    model_config = SettingsConfigDict(
        env_prefix="PINTSOLVE_",
        env_file=".env",
        env_file_encoding="utf-8",
        extra="ignore",
    )

    # Parallelism (the --threads flag wins over PINTSOLVE_THREADS)
    threads: int = 1

    # Dense oracles
    oracle_cap: int = 4096

    # Preconditioner defaults
    default_alpha: float = 1e-3
    alpha_delta: float = 0.25
    imag_tol: float = 1e-8

    # GMRES defaults (restart 40, tol 1e-9)
    gmres_restart: int = 40
    gmres_tol: float = 1e-9
    gmres_max_iters: int = 2000

    # File storage
    cache_dir: Path = Path(".pintsolve_cache")
    output_dir: Path = Path("./outputs")
    reference_level: int = 2

    log_level: str = "WARNING"


settings = Settings()


def resolve_threads(threads: int | None) -> int:
    """Explicit thread count if given, the configured default otherwise."""
    return max(1, threads if threads is not None else settings.threads)
