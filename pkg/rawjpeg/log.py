import sys
import logging

ERROR    = logging.ERROR
WARNING  = logging.WARNING
DEBUG    = logging.DEBUG
CRITICAL = logging.CRITICAL
INFO     = logging.INFO

logger = logging.getLogger()

def setup_logging(level: int = INFO) -> None:
    """Diagnostics go to stderr; stdout is reserved for command output"""
    print_format = logging.Formatter('%(asctime)s %(levelname)-8s %(name)-12s %(message)s')
    if logger.handlers:
        logger.setLevel(level)
        return
    console = logging.StreamHandler(sys.stderr)
    console.setLevel(logging.DEBUG)
    console.setFormatter(print_format)
    logger.addHandler(console)
    logger.setLevel(level)

def getLogger(name: str) -> logging.Logger:
    return logging.getLogger(name)
