"""CSV and JSON report writers.

Reports are rendered in memory and written with a single rename, so a
failed command never leaves a partial file behind.
"""

import csv
import io
import json
import logging
from collections.abc import Mapping, Sequence
from pathlib import Path
from typing import Any, Optional

from pydantic import BaseModel

from xattn.tensor import atomic_write_bytes

logger = logging.getLogger("xattn.reporting")


def write_csv(
    path: str | Path,
    model: type[BaseModel],
    rows: Sequence[BaseModel],
    metadata: Optional[Mapping[str, Any]] = None,
) -> Path:
    """Write ``rows`` with columns in the field order of ``model``.

    The header is written even when there are no rows. ``metadata`` entries
    become leading ``# key: value`` comment lines.
    """
    fieldnames = list(model.model_fields)
    buffer = io.StringIO()
    for key, value in (metadata or {}).items():
        buffer.write(f"# {key}: {value}\n")

    writer = csv.DictWriter(buffer, fieldnames=fieldnames, lineterminator="\n")
    writer.writeheader()
    for row in rows:
        # python mode keeps NaN as a float so it is written as "nan"
        writer.writerow(row.model_dump())

    target = Path(path)
    atomic_write_bytes(target, buffer.getvalue().encode("utf-8"))
    logger.info(f"Wrote {len(rows)} {model.__name__} rows to {target}")
    return target


def write_json(path: str | Path, payload: Any) -> Path:
    """Write a JSON document; pydantic models are dumped first."""
    if isinstance(payload, BaseModel):
        payload = payload.model_dump(mode="json")
    target = Path(path)
    atomic_write_bytes(target, (json.dumps(payload, indent=2) + "\n").encode("utf-8"))
    return target

