"""
Resource checks and worker-count policy for long runs.

Memory and CPU figures go to the run log only, never into artifacts.
"""

import os
from typing import Dict, List, Optional, Tuple

import psutil

from ..core.errors import ConfigError

THREADS_ENV = 'BDB_THREADS'

RESOURCE_REQUIREMENTS = {
    'memory_mb': 512,
    'disk_mb': 256,
}


def verify_system_resources(output_dir: str = '.') -> Tuple[bool, List[str]]:
    """Check free memory and disk space against RESOURCE_REQUIREMENTS."""
    memory = psutil.virtual_memory()
    disk = psutil.disk_usage(os.path.abspath(output_dir) if os.path.exists(output_dir) else '/')

    issues = []
    if memory.available < RESOURCE_REQUIREMENTS['memory_mb'] * 1024 * 1024:
        issues.append("Insufficient memory available")
    if disk.free < RESOURCE_REQUIREMENTS['disk_mb'] * 1024 * 1024:
        issues.append("Insufficient disk space")
    return not issues, issues


def process_memory_mb() -> float:
    """Resident set size of the current process."""
    return psutil.Process(os.getpid()).memory_info().rss / (1024 * 1024)


def resource_snapshot() -> Dict[str, float]:
    return {
        'rss_mb': round(process_memory_mb(), 1),
        'available_mb': round(psutil.virtual_memory().available / (1024 * 1024), 1),
        'cpu_count': psutil.cpu_count() or 1,
    }


def worker_count(requested: Optional[int] = None, env: Optional[Dict[str, str]] = None) -> int:
    """
    Number of worker threads for independent runs.

    ``BDB_THREADS`` caps the count; without it the default is CPU count - 1
    (at least 1).

    Raises:
        ConfigError: If BDB_THREADS is not a positive integer
    """
    env = os.environ if env is None else env
    default = max(1, (psutil.cpu_count() or 2) - 1)
    cap = default
    raw = env.get(THREADS_ENV)
    if raw is not None and raw.strip():
        try:
            cap = int(raw)
        except ValueError:
            raise ConfigError(f"expected a positive integer, got {raw!r}", key=THREADS_ENV) from None
        if cap < 1:
            raise ConfigError(f"expected a positive integer, got {raw!r}", key=THREADS_ENV)
    if requested is not None:
        return max(1, min(requested, cap))
    return cap
