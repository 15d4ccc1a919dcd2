from __future__ import annotations

import logging
import os


def set_up_logging(filename: str) -> None:
    """Log INFO messages to a file and to the console."""
    directory = os.path.dirname(filename)
    if directory:
        os.makedirs(directory, exist_ok=True)
    logFormatter = logging.Formatter("%(asctime)s %(message)s")
    rootLogger = logging.getLogger()

    fileHandler = logging.FileHandler(filename, mode="w")
    fileHandler.setFormatter(logFormatter)
    rootLogger.addHandler(fileHandler)

    consoleHandler = logging.StreamHandler()
    consoleHandler.setFormatter(logFormatter)
    rootLogger.addHandler(consoleHandler)

    rootLogger.setLevel(logging.INFO)


def prepare_output_dir(dirname: str) -> str:
    """Create an output directory and check that it can be written to."""
    try:
        os.makedirs(dirname, exist_ok=True)
    except OSError as error:
        raise OSError(f"Cannot create output directory {dirname}: {error}")
    if not os.access(dirname, os.W_OK):
        raise OSError(f"Output directory {dirname} is not writable")
    return dirname
