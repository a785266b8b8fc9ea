import json
import logging
from pathlib import Path

import pandas as pd

logger = logging.getLogger(__name__)

CSV_FLOAT_FORMAT = "%.12g"


def ensure_out_dir(out_dir):
    path = Path(out_dir)
    path.mkdir(parents=True, exist_ok=True)
    return path


def write_csv(rows, path, columns=None):
    """Rows (DataFrame or list of dicts) to CSV with a fixed float format, so reruns are byte-identical."""
    df = rows if isinstance(rows, pd.DataFrame) else pd.DataFrame(rows, columns=columns)
    if columns is not None:
        df = df[columns]
    df.to_csv(path, index=False, float_format=CSV_FLOAT_FORMAT)
    logger.info("wrote %s (%d rows)", path, len(df))
    return Path(path)


def write_json(data, path):
    with open(path, "w") as f:
        json.dump(data, f, indent=4, sort_keys=True)
    logger.info("wrote %s", path)
    return Path(path)


def read_json(path):
    with open(path) as f:
        return json.load(f)
