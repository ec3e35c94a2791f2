"""Binary array dumps and CSV writers for results."""

import csv
import struct

import numpy as np

MAGIC = b"OTLP"
VERSION = 1
KINDS = {"states": 0, "observations": 1, "ensembles": 2, "moments": 3}
_HEADER = struct.Struct("<4sIIIIII")
_F64 = np.dtype("<f8")

SCHEMA_VERSION = 1
RESULT_COLUMNS = (
    "schema_version", "model", "filter", "B", "w", "r", "P", "seed", "repeat",
    "rmse_mean", "rmse_std", "rmse_smooth", "median_n_eff", "assim_seconds", "error",
)
SUMMARY_COLUMNS = (
    "schema_version", "model", "filter", "B", "w", "r", "P", "runs", "errors", "metric",
    "minimum", "median", "maximum",
)


def write_array(path, array, kind, M, T, L, P=1):
    """Write a row-major little-endian f64 payload after a fixed header.

    The header holds the magic ``OTLP``, format version, array kind and the
    ``M, T, L, P`` dimensions as little-endian ``uint32``.
    """
    array = np.ascontiguousarray(array, dtype=_F64)
    with open(path, "wb") as handle:
        handle.write(_HEADER.pack(MAGIC, VERSION, KINDS[kind], M, T, L, P))
        handle.write(array.tobytes())


def read_array(path):
    """Read a file written by :func:`write_array`.

    Returns:
        ``(array, header)`` where ``header`` maps field names to values.
    """
    with open(path, "rb") as handle:
        raw = handle.read()
    magic, version, kind, M, T, L, P = _HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise ValueError(f"{path}: not an array dump")
    if version != VERSION:
        raise ValueError(f"{path}: unsupported version {version}")
    names = {code: name for name, code in KINDS.items()}
    kind = names[kind]
    shape = {
        "states": (T, M),
        "observations": (T, L),
        "ensembles": (T, P, M),
        "moments": (T, 2, M),
    }[kind]
    data = np.frombuffer(raw, dtype=_F64, offset=_HEADER.size)
    if data.size != int(np.prod(shape)):
        raise ValueError(f"{path}: payload has {data.size} values, expected {shape}")
    header = {"kind": kind, "version": version, "M": M, "T": T, "L": L, "P": P}
    return data.reshape(shape).astype(float), header


def write_observations_csv(path, observations, locations):
    """One row per observation time, one column per observation location."""
    with open(path, "w", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(["t", *[f"s={s!r}" for s in locations]])
        for t, row in enumerate(observations):
            writer.writerow([t, *[repr(float(v)) for v in row]])


def write_rank_histogram(path, counts):
    """Two-column ``bin,count`` CSV."""
    with open(path, "w", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(["bin", "count"])
        for b, count in enumerate(counts):
            writer.writerow([b, int(count)])


def write_pou_csv(path, bumps):
    """Partition of unity with one row per patch and one column per node."""
    with open(path, "w", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(["patch", *[f"n{m}" for m in range(bumps.shape[1])]])
        for b, row in enumerate(bumps):
            writer.writerow([b, *[repr(float(v)) for v in row]])


def read_rank_histogram(path):
    with open(path, newline="") as handle:
        rows = list(csv.DictReader(handle))
    return np.array([int(row["count"]) for row in rows])


def format_value(value):
    """Decimal text for a CSV cell; floats use round-trip ``repr``."""
    if value is None:
        return ""
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    return str(value)


class CsvWriter:
    """Serialised writer of result rows with a fixed header."""

    def __init__(self, path, columns=RESULT_COLUMNS):
        self.columns = columns
        self._handle = open(path, "w", newline="")
        self._writer = csv.writer(self._handle)
        self._writer.writerow(columns)

    def write(self, row):
        self._writer.writerow([format_value(row.get(c)) for c in self.columns])
        self._handle.flush()

    def close(self):
        self._handle.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def read_results(path):
    """Result rows as dictionaries of strings."""
    with open(path, newline="") as handle:
        return list(csv.DictReader(handle))
