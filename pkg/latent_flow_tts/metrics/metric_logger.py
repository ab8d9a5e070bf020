import os
import time
from typing import Sequence

import pandas as pd
import pytorch_lightning as pl


class MetricsCsvCallback(pl.Callback):
    """
    Appends one row per training iteration to a CSV file with a fixed column set.
    The LightningModule exposes the values of the current step in `last_metrics`;
    `step` and `wall_ms` are filled in here.
    """

    def __init__(self, path: str, columns: Sequence[str]):
        super().__init__()
        self.path = path
        self.columns = list(columns)
        self.step = 0
        self._start = None

        os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
        if not os.path.exists(path):
            pd.DataFrame(columns=self.columns).to_csv(path, index=False)

    def on_train_batch_start(self, trainer, pl_module, batch, batch_idx):
        self._start = time.perf_counter()

    def on_train_batch_end(self, trainer, pl_module, outputs, batch, batch_idx):
        self.step += 1
        row = dict(getattr(pl_module, "last_metrics", {}))
        row["step"] = self.step
        row["wall_ms"] = 1e3 * (time.perf_counter() - self._start)
        # metrics that should not count towards the iteration time
        if hasattr(pl_module, "untimed_metrics"):
            row.update(pl_module.untimed_metrics(batch))

        missing = set(self.columns) - set(row)
        if missing:
            raise KeyError(f"metrics row lacks columns {sorted(missing)}")

        pd.DataFrame([{c: row[c] for c in self.columns}]).to_csv(
            self.path, mode="a", header=False, index=False
        )


def read_metrics(path: str) -> pd.DataFrame:
    return pd.read_csv(path)
