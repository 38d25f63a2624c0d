"""Configuration management for the augmentation pipeline."""
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

from dotenv import load_dotenv

from copy_paste import CopyPasteParams
from errors import ConfigError
from oda import OdaParams
from pda import PdaParams

# Load environment variables from .env file
load_dotenv()

MODES = ("oda", "pda", "mixed", "copy-paste")
LOG_FORMATS = ("json", "text")


def _env_int(name: str) -> Optional[int]:
    raw = os.getenv(name, "").strip()
    if not raw:
        return None
    try:
        return int(raw)
    except ValueError:
        return None


def _env_workers() -> int:
    """AUGMENT_WORKERS, or 1 when unset; 0 and negatives are kept for validate() to report."""
    value = _env_int('AUGMENT_WORKERS')
    return 1 if value is None else value


class Config:
    """Environment-level settings shared by every subcommand."""

    # Reproducibility
    SEED = _env_int('AUGMENT_SEED')  # None falls back to the manifest master seed

    # Worker pool
    WORKERS = _env_workers()

    # Logging
    LOG_LEVEL = os.getenv('AUGMENT_LOG_LEVEL', 'INFO').upper()
    LOG_FORMAT = os.getenv('AUGMENT_LOG_FORMAT', 'json').lower()

    # Outputs
    LEDGER_NAME = os.getenv('AUGMENT_LEDGER', 'ledger.db')
    SAVE_MASKS = os.getenv('AUGMENT_SAVE_MASKS', 'false').lower() == 'true'

    @classmethod
    def validate(cls):
        """Validate the environment-level configuration."""
        errors = []

        if os.getenv('AUGMENT_SEED', '').strip() and cls.SEED is None:
            errors.append(f"AUGMENT_SEED must be an integer, got {os.getenv('AUGMENT_SEED')!r}")
        if cls.SEED is not None and cls.SEED < 0:
            errors.append(f"AUGMENT_SEED must be >= 0, got {cls.SEED}")
        if os.getenv('AUGMENT_WORKERS', '').strip() and _env_int('AUGMENT_WORKERS') is None:
            errors.append(f"AUGMENT_WORKERS must be an integer, got {os.getenv('AUGMENT_WORKERS')!r}")
        if cls.WORKERS < 1:
            errors.append(f"AUGMENT_WORKERS must be >= 1, got {cls.WORKERS}")
        if cls.LOG_LEVEL not in ('DEBUG', 'INFO', 'WARNING', 'ERROR', 'CRITICAL'):
            errors.append(f"AUGMENT_LOG_LEVEL is not a logging level: {cls.LOG_LEVEL}")
        if cls.LOG_FORMAT not in LOG_FORMATS:
            errors.append(f"AUGMENT_LOG_FORMAT must be one of {', '.join(LOG_FORMATS)}, got {cls.LOG_FORMAT}")
        if not cls.LEDGER_NAME:
            errors.append("AUGMENT_LEDGER must not be empty")

        if errors:
            raise ConfigError("Configuration errors:\n" + "\n".join(f"  - {e}" for e in errors))

        return True


@dataclass
class RunConfig:
    """Everything one `gen` run needs.

    seed None means "use the manifest master seed"; the CLI resolves it
    before the run starts.
    """
    manifest_path: Path
    out_dir: Path
    count: int
    seed: Optional[int] = None
    mode: str = "mixed"
    mix_ratio: float = 0.5
    workers: int = 1
    save_masks: bool = False
    progress: bool = True
    oda: OdaParams = field(default_factory=OdaParams)
    pda: PdaParams = field(default_factory=PdaParams)
    copy_paste: CopyPasteParams = field(default_factory=CopyPasteParams)
    ledger_name: str = "ledger.db"

    def validate(self):
        """Collect every problem and raise one ConfigError."""
        errors = []

        if self.count < 1:
            errors.append(f"--count must be >= 1, got {self.count}")
        if self.mode not in MODES:
            errors.append(f"--mode must be one of {', '.join(MODES)}, got {self.mode}")
        if not 0.0 <= self.mix_ratio <= 1.0:
            errors.append(f"--mix-ratio must be in [0, 1], got {self.mix_ratio}")
        if self.workers < 1:
            errors.append(f"--workers must be >= 1, got {self.workers}")
        if self.seed is not None and self.seed < 0:
            errors.append(f"--seed must be >= 0, got {self.seed}")
        if not Path(self.manifest_path).is_file():
            errors.append(f"Manifest not found: {self.manifest_path}")

        out_dir = Path(self.out_dir)
        if out_dir.exists() and not out_dir.is_dir():
            errors.append(f"Output path is not a directory: {out_dir}")
        elif not out_dir.exists():
            parent = next((p for p in out_dir.absolute().parents if p.exists()), None)
            if parent is None or not os.access(parent, os.W_OK):
                errors.append(f"Output directory cannot be created: {out_dir}")
        elif not os.access(out_dir, os.W_OK):
            errors.append(f"Output directory is not writable: {out_dir}")

        if errors:
            raise ConfigError("Run configuration errors:\n" + "\n".join(f"  - {e}" for e in errors))

        return True
