"""Application configuration: environment settings plus config.yaml sections."""

from pathlib import Path
from typing import Dict, Any, Optional
import yaml
from dotenv import load_dotenv
from pydantic import BaseModel, Field, ValidationError
from pydantic_settings import BaseSettings, SettingsConfigDict

from app.core.exceptions import ConfigurationError


# Load environment variables
load_dotenv()


class AppConfig(BaseModel):
    """Application metadata."""
    name: str = "wave-esc"
    version: str = "1.0.0"
    description: str = ""


class LoggingConfig(BaseModel):
    """Configuration for logging."""
    format: str = "json"
    file: Optional[str] = "logs/wave_esc.log"
    max_bytes: int = 10 * 1024 * 1024
    backup_count: int = 5


class OutputConfig(BaseModel):
    """Configuration for run artifacts."""
    base_dir: str = "outputs"
    svg: bool = True
    float_format: str = "%.17g"


class ExecutionConfig(BaseModel):
    """Configuration for parallel map sweeps."""
    workers: int = Field(default=1, ge=1)


class Settings(BaseSettings):
    """Settings read from the environment (prefix ESC_) or a .env file."""

    model_config = SettingsConfigDict(env_prefix="ESC_", env_file=".env", case_sensitive=False, extra="ignore")

    log_level: str = "INFO"
    log_format: Optional[str] = None
    log_file: Optional[str] = None
    output_dir: Optional[str] = None
    workers: Optional[int] = None


class Config:
    """Central application configuration."""

    def __init__(self, config_path: Optional[str] = None):
        """Initialize configuration.

        Args:
            config_path: Path to config.yaml file. Defaults to config.yaml in project root.

        Raises:
            ConfigurationError: If the file cannot be read or a section is invalid.
        """
        self.settings = Settings()

        if config_path is None:
            config_path = self.get_project_root() / "config.yaml"

        try:
            with open(config_path, 'r', encoding="utf-8") as f:
                self.yaml_config: Dict[str, Any] = yaml.safe_load(f) or {}
        except OSError as e:
            raise ConfigurationError(f"Cannot read application config {config_path}: {e}")

        try:
            self.app = AppConfig(**self.yaml_config.get('app', {}))
            self.logging = LoggingConfig(**self.yaml_config.get('logging', {}))
            self.output = OutputConfig(**self.yaml_config.get('output', {}))
            self.execution = ExecutionConfig(**self.yaml_config.get('execution', {}))
        except ValidationError as e:
            raise ConfigurationError(f"Invalid application config: {e}")

        # Environment wins over the YAML file
        if self.settings.log_format:
            self.logging.format = self.settings.log_format
        if self.settings.log_file:
            self.logging.file = self.settings.log_file
        if self.settings.output_dir:
            self.output.base_dir = self.settings.output_dir
        if self.settings.workers:
            self.execution.workers = self.settings.workers

    @staticmethod
    def get_project_root() -> Path:
        """Get the project root directory."""
        return Path(__file__).parent.parent.parent

    def validate(self) -> bool:
        """Validate configuration.

        Raises:
            ConfigurationError: If a value is unusable.
        """
        if self.settings.log_level.upper() not in ("DEBUG", "INFO", "WARNING", "ERROR", "CRITICAL"):
            raise ConfigurationError(f"Unknown log level {self.settings.log_level}", key="ESC_LOG_LEVEL")
        if self.logging.format not in ("json", "text"):
            raise ConfigurationError(f"Unknown log format {self.logging.format}", key="logging.format")
        if self.execution.workers < 1:
            raise ConfigurationError("workers must be >= 1", key="execution.workers")
        return True


# Global configuration instance
_config: Optional[Config] = None


def get_config(config_path: Optional[str] = None) -> Config:
    """Get or create global configuration instance.

    Args:
        config_path: Optional path to config.yaml file.

    Returns:
        Config instance.
    """
    global _config
    if _config is None:
        _config = Config(config_path)
        _config.validate()
    return _config


def reset_config():
    """Reset global configuration instance (mainly for testing)."""
    global _config
    _config = None
