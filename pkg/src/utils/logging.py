import logging
import os
import threading
from logging.handlers import RotatingFileHandler
from typing import Any, Dict, Optional

LOG_FORMAT = '%(asctime)s - %(name)s - %(levelname)s - %(message)s'

# serializes the check-then-add of handlers across threads
_HANDLER_LOCK = threading.Lock()


class RunLogger:
    """Logger for training, evaluation and ablation runs with structured extras."""

    def __init__(self, component: str, log_dir: Optional[str] = None, level: int = logging.INFO):
        """
        Create (or reuse) the logger for one component.

        Args:
            component: Short component name; the logger is named ``bdb.<component>``
            log_dir: Optional directory for a rotating log file ``<component>.log``
            level: Console level
        """
        self.logger = logging.getLogger(f'bdb.{component}')
        self.logger.setLevel(logging.DEBUG)
        self.logger.propagate = False

        with _HANDLER_LOCK:
            self._attach_handlers(component, log_dir, level)

    def _attach_handlers(self, component: str, log_dir: Optional[str], level: int) -> None:
        formatter = logging.Formatter(LOG_FORMAT)
        # Handlers are attached once per logger name
        if not any(getattr(h, '_bdb_console', False) for h in self.logger.handlers):
            console_handler = logging.StreamHandler()
            console_handler.setLevel(level)
            console_handler.setFormatter(formatter)
            console_handler._bdb_console = True
            self.logger.addHandler(console_handler)

        if log_dir:
            os.makedirs(log_dir, exist_ok=True)
            log_path = os.path.abspath(os.path.join(log_dir, f'{component}.log'))
            known = {getattr(h, 'baseFilename', None) for h in self.logger.handlers}
            if log_path not in known:
                file_handler = RotatingFileHandler(
                    log_path,
                    maxBytes=10 * 1024 * 1024,  # 10MB
                    backupCount=5
                )
                file_handler.setLevel(logging.DEBUG)
                file_handler.setFormatter(formatter)
                self.logger.addHandler(file_handler)

    def info(self, message: str, extra: Optional[Dict[str, Any]] = None) -> None:
        """Log info message with optional extra data."""
        self._log(logging.INFO, message, extra)

    def debug(self, message: str, extra: Optional[Dict[str, Any]] = None) -> None:
        """Log debug message with optional extra data."""
        self._log(logging.DEBUG, message, extra)

    def warning(self, message: str, extra: Optional[Dict[str, Any]] = None) -> None:
        """Log warning message with optional extra data."""
        self._log(logging.WARNING, message, extra)

    def error(self, message: str, extra: Optional[Dict[str, Any]] = None) -> None:
        """Log error message with optional extra data."""
        self._log(logging.ERROR, message, extra)

    def _log(self, level: int, message: str, extra: Optional[Dict[str, Any]] = None) -> None:
        """Internal method to handle logging with extra data."""
        if extra:
            message = f"{message} - Extra Data: {extra}"
        self.logger.log(level, message)
