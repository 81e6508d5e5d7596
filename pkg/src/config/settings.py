"""
Runtime settings for the federated segmentation system.

Environment variables (prefixed ``FEDSEG_``) and an optional ``.env`` file
control logging and worker counts. Experiment hyperparameters live in the
YAML experiment config instead.
"""

import os
from dataclasses import dataclass
from typing import Optional

ENV_PREFIX = "FEDSEG_"


def load_env_file(filepath: str = ".env") -> None:
    """Load environment variables from .env file."""
    if os.path.exists(filepath):
        with open(filepath, "r") as file:
            for line in file:
                line = line.strip()
                if line and not line.startswith("#") and "=" in line:
                    key, value = line.split("=", 1)
                    os.environ.setdefault(key.strip(), value.strip())


def _env(name: str, default: str) -> str:
    return os.getenv(f"{ENV_PREFIX}{name}", default)


@dataclass
class LoggingSettings:
    """Logging configuration settings."""

    level: str = "INFO"
    format: str = "%(asctime)s - %(name)s - %(levelname)s - %(message)s"
    file_path: Optional[str] = None
    max_file_size: int = 10 * 1024 * 1024  # 10MB
    backup_count: int = 5
    run_log: bool = True

    @classmethod
    def from_env(cls) -> "LoggingSettings":
        """Create settings from environment variables."""
        return cls(
            level=_env("LOG_LEVEL", cls.level),
            format=_env("LOG_FORMAT", cls.format),
            file_path=os.getenv(f"{ENV_PREFIX}LOG_FILE_PATH"),
            max_file_size=int(_env("LOG_MAX_FILE_SIZE", str(cls.max_file_size))),
            backup_count=int(_env("LOG_BACKUP_COUNT", str(cls.backup_count))),
            run_log=_env("LOG_TO_RUN_DIR", "true").lower() == "true",
        )


@dataclass
class RuntimeSettings:
    """Parallelism and default output location."""

    client_workers: int = 1
    teacher_workers: int = 1
    eval_workers: int = 1
    output_dir: str = "runs/default"

    @classmethod
    def from_env(cls) -> "RuntimeSettings":
        return cls(
            client_workers=int(_env("CLIENT_WORKERS", str(cls.client_workers))),
            teacher_workers=int(_env("TEACHER_WORKERS", str(cls.teacher_workers))),
            eval_workers=int(_env("EVAL_WORKERS", str(cls.eval_workers))),
            output_dir=_env("OUTPUT_DIR", cls.output_dir),
        )


@dataclass
class Settings:
    """Main application settings."""

    logging: LoggingSettings
    runtime: RuntimeSettings
    debug_mode: bool = False

    @classmethod
    def from_env(cls) -> "Settings":
        """Create settings from environment variables."""
        load_env_file()

        return cls(
            logging=LoggingSettings.from_env(),
            runtime=RuntimeSettings.from_env(),
            debug_mode=_env("DEBUG_MODE", "false").lower() == "true",
        )


# Global settings instance
_settings: Optional[Settings] = None


def get_settings() -> Settings:
    """Get the global settings instance."""
    global _settings
    if _settings is None:
        _settings = Settings.from_env()
    return _settings


def reset_settings() -> None:
    """Drop the cached instance so the next ``get_settings`` rereads the environment."""
    global _settings
    _settings = None
