# refil/logging_config.py
import logging

from refil.config import LOG_FILE, LOG_LEVEL

_configured = False


def configure_logging(log_file: str = LOG_FILE, level: str = LOG_LEVEL) -> None:
    """Configure root logging once: file plus console, one line per record."""
    global _configured
    if _configured:
        return
    logging.basicConfig(
        level=getattr(logging, level.upper(), logging.INFO),
        format='%(asctime)s - %(name)s - %(levelname)s - %(message)s',
        handlers=[
            logging.FileHandler(log_file),
            logging.StreamHandler()
        ]
    )
    _configured = True
