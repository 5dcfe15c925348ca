import logging
from typing import Optional

from serocontact.core.settings import settings


def configure_logging(level: Optional[str] = None) -> None:
    """Configure the root handler once for command-line runs.

    Library modules only create loggers; handlers are installed here.
    """
    level_name = (level or settings.LOG_LEVEL).upper()
    numeric_level = getattr(logging, level_name, None)
    if not isinstance(numeric_level, int):
        numeric_level = logging.INFO
    logging.basicConfig(level=numeric_level, format=settings.LOG_FORMAT, force=True)
    logging.getLogger("serocontact").debug("Logging configured (env=%s, level=%s)", settings.ENV, level_name)
