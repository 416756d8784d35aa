"""Atomic file operations for registry snapshots and WSDB journals."""

import json
import logging
import os
import tempfile
from pathlib import Path
from typing import Any, Dict, Iterator, Tuple

logger = logging.getLogger(__name__)


def atomic_write_json(path: Path, data: Dict[str, Any]) -> None:
    """Write JSON atomically to prevent corruption on crash.

    Uses a temporary file in the same directory so the final rename stays on
    one filesystem. The target is replaced only after the data is flushed and
    fsynced.

    Args:
        path: Path to target JSON file
        data: JSON-serializable data

    Raises:
        OSError: If file operations fail
        TypeError: If data is not JSON-serializable
    """
    path.parent.mkdir(parents=True, exist_ok=True)

    temp_fd = None
    temp_path = None

    try:
        temp_fd, temp_name = tempfile.mkstemp(
            suffix='.tmp',
            prefix=f'{path.name}.',
            dir=path.parent,
            text=True
        )
        temp_path = Path(temp_name)

        with os.fdopen(temp_fd, 'w', encoding='utf-8') as f:
            temp_fd = None  # File descriptor now owned by file object
            json.dump(data, f, ensure_ascii=False, allow_nan=False, indent=2)
            f.flush()
            os.fsync(f.fileno())

        temp_path.replace(path)
        logger.debug(f"Atomically wrote JSON to {path}")

    except Exception as e:
        logger.error(f"Failed to write JSON atomically to {path}: {e}")
        if temp_fd is not None:
            try:
                os.close(temp_fd)
            except OSError:
                pass
        if temp_path and temp_path.exists():
            try:
                temp_path.unlink()
            except OSError:
                logger.warning(f"Failed to clean up temporary file {temp_path}")
        raise


def read_json(path: Path) -> Any:
    """Read a JSON file written by ``atomic_write_json``.

    Raises:
        OSError: If the file cannot be read
        json.JSONDecodeError: If the file is not valid JSON
    """
    with path.open('r', encoding='utf-8') as f:
        return json.load(f)


def append_json_line(path: Path, record: Dict[str, Any]) -> None:
    """Append one compact JSON record plus newline and fsync it.

    Args:
        path: Journal file, created if missing
        record: JSON-serializable record
    """
    path.parent.mkdir(parents=True, exist_ok=True)
    line = json.dumps(
        record, separators=(",", ":"), ensure_ascii=False, allow_nan=False
    )
    with path.open('a', encoding='utf-8') as f:
        f.write(line + '\n')
        f.flush()
        os.fsync(f.fileno())


def read_json_lines(path: Path) -> Iterator[Tuple[int, Dict[str, Any]]]:
    """Yield ``(line_number, record)`` for each well-formed line of a journal.

    Blank lines are ignored. Malformed lines, such as a torn final write, are
    logged and skipped.
    """
    with path.open('r', encoding='utf-8') as f:
        for lineno, line in enumerate(f, start=1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as e:
                logger.warning(
                    f"Skipping malformed journal line {lineno} in {path}: {e}"
                )
                continue
            if isinstance(record, dict):
                yield lineno, record
            else:
                logger.warning(f"Skipping non-object journal line {lineno} in {path}")
