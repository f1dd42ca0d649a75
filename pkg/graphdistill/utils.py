import csv
import json
import math
import os
import pathlib
from typing import Any, Dict, Iterable, List, Sequence, Tuple, Union

THREADS_ENV = "GD_THREADS"


def worker_count() -> int:
    """Worker cap from GD_THREADS, defaulting to the CPU count"""
    value = os.environ.get(THREADS_ENV, "")
    if value.strip():
        try:
            return max(1, int(value))
        except ValueError:
            pass
    return max(1, os.cpu_count() or 1)


def mean_and_stderr(values: Sequence[float]) -> Tuple[float, float]:
    """Mean and standard error of the mean; NaN values are ignored"""
    finite = [v for v in values if not math.isnan(v)]
    if not finite:
        return math.nan, math.nan
    mean = math.fsum(finite) / len(finite)
    if len(finite) < 2:
        return mean, 0.0
    variance = math.fsum((v - mean) ** 2 for v in finite) / (len(finite) - 1)
    return mean, math.sqrt(variance / len(finite))


def format_value(value: Any) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return repr(value)
    return str(value)


def write_csv(
    path: Union[str, pathlib.Path], header: Sequence[str], rows: Iterable[Sequence[Any]]
) -> None:
    with open(path, "w", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([format_value(v) for v in row])


def read_csv(path: Union[str, pathlib.Path]) -> List[Dict[str, str]]:
    with open(path, newline="") as f:
        return list(csv.DictReader(f))


def write_json(path: Union[str, pathlib.Path], document: Any) -> None:
    with open(path, "w") as f:
        json.dump(document, f, indent=2, sort_keys=True, allow_nan=True)
        f.write("\n")


def parse_list(text: str, convert: Any = int) -> List[Any]:
    return [convert(part) for part in text.split(",") if part.strip()]
