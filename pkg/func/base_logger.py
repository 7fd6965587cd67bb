"""Main logger, plus a per-command log file inside the command's output directory."""

import logging.handlers
from pathlib import Path

RUN_LOG_NAME = 'run.log'


def namer(name: str) -> Path:
    """
    Renames the rotating file to the format date.log.
    :param name: Path (name) of the open log file.
    :return: Path (name) of the out-rotating log file.
    """
    return loc.joinpath(name.split(".")[-1] + ".log")


def attach_run_log(directory: Path) -> logging.FileHandler:
    """
    Copies every INFO and above event of one command into directory/run.log, overwriting an older one.
    :param directory: Output directory of the command, created when missing.
    :return: The handler, to pass to detach_run_log.
    """
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    handler = logging.FileHandler(directory.joinpath(RUN_LOG_NAME), mode='w', encoding='utf-8')
    handler.setLevel(logging.INFO)
    handler.setFormatter(file_formatter)
    logger.addHandler(handler)
    return handler


def detach_run_log(handler: logging.FileHandler):
    logger.removeHandler(handler)
    handler.close()


# Set correct location for log files
loc = Path(__file__).parent.parent.joinpath('logs')
loc.mkdir(exist_ok=True)

# Get logger
logger = logging.getLogger('projb')
logger.setLevel(logging.INFO)

# Handle log files, two weeks of dated files are kept
file_handler = logging.handlers.TimedRotatingFileHandler(
    filename=loc.joinpath("today.log"),
    when='midnight', backupCount=14, encoding='utf-8')
file_handler.namer = namer
file_handler.setLevel(logging.INFO)

# Handle console output
console_handler = logging.StreamHandler()
console_handler.setLevel(logging.WARNING)

# Formatting for log events
file_formatter = logging.Formatter(fmt='%(asctime)s %(levelname)s [%(module)s/%(threadName)s]: %(message)s',
                                   datefmt='%Y-%m-%d %H:%M:%S')
console_formatter = logging.Formatter(fmt='%(levelname)s: %(message)s')

# Set formatters and add handlers
file_handler.setFormatter(file_formatter)
console_handler.setFormatter(console_formatter)
logger.addHandler(console_handler)
logger.addHandler(file_handler)
