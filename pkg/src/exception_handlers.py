"""Convert exceptions raised during a CLI run into exit codes and JSEND-style envelopes."""
from typing import Any, Dict, Optional, Tuple

from src.errors import EXIT_CONFIG_ERROR, EXIT_INPUT_ERROR, ConfigurationError, InputError, PulseDTWError
from src.logging_config import get_logger

logger = get_logger(__name__)


def success_response(data: Any = None) -> Dict[str, Any]:
    return {"status": "success", "data": data}


def fail_response(data: Dict[str, Any]) -> Dict[str, Any]:
    """
    Envelope for problems the user can fix (bad input, bad configuration).

    Args:
        data: Dictionary explaining what went wrong, keyed by the offending field when known.
    """
    return {"status": "fail", "data": data}


def error_response(message: str, code: Optional[int] = None, data: Optional[Any] = None) -> Dict[str, Any]:
    """
    Envelope for failures inside the pipeline itself.

    Args:
        message: Human-readable description of the failure.
        code: Process exit code the failure maps to.
        data: Optional structured detail.
    """
    response = {"status": "error", "message": message}

    if code is not None:
        response["code"] = code

    if data:
        response["data"] = data

    return response


def handle_exception(exc: BaseException) -> Tuple[int, Dict[str, Any]]:
    """
    Map an exception to ``(exit_code, payload)``.

    - ConfigurationError -> exit 2, fail
    - InputError -> exit 1, fail
    - other PulseDTWError -> its exit code, error
    - anything else -> exit 1, error (logged with traceback)
    """
    if isinstance(exc, ConfigurationError):
        field = exc.field or "config"
        logger.error(f"Configuration error: {exc.message}")
        return EXIT_CONFIG_ERROR, fail_response({field: exc.message})

    if isinstance(exc, InputError):
        logger.error(f"Input error: {exc.message}")
        data = {"message": exc.message}
        data.update({k: v for k, v in exc.detail.items() if v is not None})
        return EXIT_INPUT_ERROR, fail_response(data)

    if isinstance(exc, PulseDTWError):
        logger.error(f"{type(exc).__name__}: {exc.message}", exc_info=True)
        return exc.exit_code, error_response(exc.message, code=exc.exit_code, data=exc.detail)

    logger.error(f"Unhandled exception: {exc}", exc_info=True)
    return EXIT_INPUT_ERROR, error_response("An unexpected error occurred", code=EXIT_INPUT_ERROR)
