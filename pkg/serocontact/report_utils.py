import logging
from pathlib import Path
from typing import Any, Union

import numpy as np
import orjson
import pandas as pd
from pydantic import BaseModel

logger = logging.getLogger(__name__)

JSON_OPTIONS = orjson.OPT_INDENT_2 | orjson.OPT_SORT_KEYS | orjson.OPT_SERIALIZE_NUMPY
CSV_FLOAT_FORMAT = "%.10g"


def _default(obj: Any) -> Any:
    if isinstance(obj, BaseModel):
        return obj.model_dump()
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, Path):
        return str(obj)
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def _finite(obj: Any) -> Any:
    # NaN/inf are not JSON; reports carry null instead
    if isinstance(obj, float) and not np.isfinite(obj):
        return None
    if isinstance(obj, dict):
        return {k: _finite(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_finite(v) for v in obj]
    return obj


def dumps(payload: Union[BaseModel, dict, list]) -> bytes:
    if isinstance(payload, BaseModel):
        payload = payload.model_dump()
    return orjson.dumps(_finite(payload), default=_default, option=JSON_OPTIONS)


def ensure_dir(directory: Union[str, Path]) -> Path:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    return directory


def write_json(path: Union[str, Path], payload: Union[BaseModel, dict, list]) -> Path:
    path = Path(path)
    ensure_dir(path.parent)
    path.write_bytes(dumps(payload) + b"\n")
    logger.info("Wrote %s", path)
    return path


def write_frame(path: Union[str, Path], frame: pd.DataFrame) -> Path:
    path = Path(path)
    ensure_dir(path.parent)
    frame.to_csv(path, index=False, float_format=CSV_FLOAT_FORMAT, lineterminator="\n")
    logger.info("Wrote %s", path)
    return path


def write_matrix(path: Union[str, Path], matrix: np.ndarray, row_labels, col_labels) -> Path:
    """Square or rectangular matrix with a leading label column."""
    frame = pd.DataFrame(np.asarray(matrix, dtype=float), columns=list(col_labels))
    frame.insert(0, "age", list(row_labels))
    return write_frame(path, frame)
