from datetime import datetime
from pathlib import Path
from typing import Optional

import platformdirs


def get_app_data_dir() -> Path:
    """Get the platform-specific application data directory for kdcontrast"""
    return Path(platformdirs.user_data_dir("kdcontrast"))


def get_runs_dir() -> Path:
    """Directory that holds one subdirectory per run without an explicit --out"""
    base_dir = get_app_data_dir() / "runs"
    base_dir.mkdir(parents=True, exist_ok=True)
    return base_dir


def ensure_dir_exists(path: Path) -> Path:
    """Ensure a directory exists, creating it if necessary"""
    path.mkdir(parents=True, exist_ok=True)
    return path


def resolve_out_dir(out: Optional[Path], command: str, seed: int) -> Path:
    """``out`` when given, else a fresh timestamped run directory"""
    if out is not None:
        return ensure_dir_exists(Path(out))
    stamp = datetime.now().strftime("%Y%m%d-%H%M%S")
    return ensure_dir_exists(get_runs_dir() / f"{command}-{stamp}-seed{seed}")
