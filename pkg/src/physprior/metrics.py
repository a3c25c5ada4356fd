"""Long-format CSV metric logs with columns ``step,split,metric,value``."""

import csv
import math

COLUMNS = ("step", "split", "metric", "value")


class MetricsLog:
    """Collects metric rows in memory and optionally streams them to a CSV file."""

    def __init__(self, path=None):
        self.path = None if path is None else str(path)
        self.rows = []
        self._fh = None
        self._writer = None
        if self.path is not None:
            self._fh = open(self.path, "w", newline="")
            self._writer = csv.writer(self._fh)
            self._writer.writerow(COLUMNS)

    def log(self, step, split, metric, value):
        value = float(value)
        row = (int(step), str(split), str(metric), value)
        self.rows.append(row)
        if self._writer is not None:
            self._writer.writerow((row[0], row[1], row[2], repr(value) if math.isfinite(value) else str(value)))
            self._fh.flush()

    def series(self, metric, split=None):
        return [(s, v) for s, sp, m, v in self.rows if m == metric and (split is None or sp == split)]

    def values(self, metric, split=None):
        return [v for _, v in self.series(metric, split)]

    def close(self):
        if self._fh is not None:
            self._fh.close()
            self._fh = None
            self._writer = None

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()
        return False


def read_metrics(path):
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if tuple(header) != COLUMNS:
            raise ValueError(f"{path}: unexpected metric columns {header}")
        return [(int(s), sp, m, float(v)) for s, sp, m, v in reader]
