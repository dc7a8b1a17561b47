"""
CLI middleware: maps exceptions to exit codes and JSON error output
"""
import json
import sys
import traceback
from datetime import datetime
from typing import Callable

from sandbox_types.errors import SandboxValidationError
from utils.helpers import log_debug, log_error

EXIT_OK = 0
EXIT_INTERNAL = 1
EXIT_VALIDATION = 2


def _emit_error(error: BaseException, status: str):
    error_details = {
        "error": str(error),
        "error_type": type(error).__name__,
        "status": status,
        "timestamp": datetime.now().isoformat()
    }
    print(json.dumps(error_details, sort_keys=True), file=sys.stderr)


def run_command(command: Callable, args) -> int:
    """
    Run a command handler and translate failures into exit codes

    Validation failures exit with 2, anything else with 1.
    """
    try:
        command(args)
        return EXIT_OK
    except SandboxValidationError as e:
        log_error(f"{type(e).__name__}: {e}")
        _emit_error(e, "validation_error")
        return EXIT_VALIDATION
    except Exception as e:
        log_error("Unhandled exception", e)
        log_debug(f"Traceback: {traceback.format_exc()}")
        _emit_error(e, "error")
        return EXIT_INTERNAL
