"""Persistent store for kernel predictions and barrier-cost fits.

A single SQLite file keyed by (kernel id, machine fingerprint, method, IVP,
tau, n, frequency).  Kernels without IVP evaluations store the IVP field as
NONE so their predictions survive IVP switches; writes are transactional, so
readers never observe a partial record.
"""

from __future__ import annotations

import csv
import sqlite3
from pathlib import Path

from .documents import IVP, KernelTemplate
from .errors import StoreError
from .predict import CommModel, KernelPrediction

SCHEMA_VERSION = 1
NO_IVP = "NONE"


class PredictionStore:
    def __init__(self, path: str | Path):
        self.path = str(path)
        try:
            self._db = sqlite3.connect(self.path)
        except sqlite3.Error as exc:
            raise StoreError(f"cannot open store {self.path}: {exc}") from None
        self._init_schema()

    def _init_schema(self) -> None:
        version = self._db.execute("PRAGMA user_version").fetchone()[0]
        if version not in (0, SCHEMA_VERSION):
            raise StoreError(
                f"store {self.path} has schema version {version}, "
                f"this build expects {SCHEMA_VERSION}"
            )
        with self._db:
            self._db.execute(
                """CREATE TABLE IF NOT EXISTS kernel_predictions (
                       kernel_id TEXT NOT NULL,
                       machine_fp TEXT NOT NULL,
                       method TEXT NOT NULL,
                       ivp TEXT NOT NULL,
                       tau INTEGER NOT NULL,
                       n INTEGER NOT NULL,
                       frequency REAL NOT NULL,
                       alpha REAL NOT NULL,
                       beta REAL NOT NULL,
                       delta INTEGER NOT NULL,
                       phi REAL NOT NULL,
                       PRIMARY KEY (kernel_id, machine_fp, method, ivp,
                                    tau, n, frequency)
                   )"""
            )
            self._db.execute(
                """CREATE TABLE IF NOT EXISTS comm_models (
                       machine_fp TEXT PRIMARY KEY,
                       intercept REAL NOT NULL,
                       slope REAL NOT NULL,
                       samples INTEGER NOT NULL,
                       residual_norm REAL NOT NULL,
                       tau_min INTEGER NOT NULL,
                       tau_max INTEGER NOT NULL
                   )"""
            )
            self._db.execute(f"PRAGMA user_version = {SCHEMA_VERSION}")

    def close(self) -> None:
        self._db.close()

    def __enter__(self) -> "PredictionStore":
        return self

    def __exit__(self, *exc) -> None:
        self.close()

    # -- kernel predictions --------------------------------------------

    @staticmethod
    def key(
        kernel_id: str, machine_fp: str, method: str, ivp: str | None,
        tau: int, n: int, frequency: float,
    ) -> tuple:
        return (kernel_id, machine_fp, method, ivp or NO_IVP, tau, n, frequency)

    def put_prediction(self, key: tuple, pred: KernelPrediction) -> None:
        try:
            with self._db:
                self._db.execute(
                    """INSERT OR REPLACE INTO kernel_predictions
                       VALUES (?, ?, ?, ?, ?, ?, ?, ?, ?, ?, ?)""",
                    (*key, pred.alpha, pred.beta, pred.delta, pred.phi),
                )
        except sqlite3.Error as exc:
            raise StoreError(f"store write failed: {exc}") from None

    def get_prediction(self, key: tuple) -> KernelPrediction | None:
        row = self._db.execute(
            """SELECT alpha, beta, delta, phi FROM kernel_predictions
               WHERE kernel_id=? AND machine_fp=? AND method=? AND ivp=?
                 AND tau=? AND n=? AND frequency=?""",
            key,
        ).fetchone()
        if row is None:
            return None
        alpha, beta, delta, phi = row
        return KernelPrediction(
            kernel_id=key[0], tau=key[4], n=key[5],
            alpha=alpha, beta=beta, delta=int(delta), frequency=key[6], phi=phi,
        )

    def prediction_count(self) -> int:
        return self._db.execute("SELECT COUNT(*) FROM kernel_predictions").fetchone()[0]

    # -- barrier fits ----------------------------------------------------

    def put_comm_model(self, machine_fp: str, model: CommModel) -> None:
        with self._db:
            self._db.execute(
                "INSERT OR REPLACE INTO comm_models VALUES (?, ?, ?, ?, ?, ?, ?)",
                (machine_fp, model.intercept, model.slope, model.samples,
                 model.residual_norm, model.tau_min, model.tau_max),
            )

    def get_comm_model(self, machine_fp: str) -> CommModel | None:
        row = self._db.execute(
            """SELECT intercept, slope, samples, residual_norm, tau_min, tau_max
               FROM comm_models WHERE machine_fp=?""",
            (machine_fp,),
        ).fetchone()
        if row is None:
            return None
        return CommModel(*row)

    # -- export ----------------------------------------------------------

    def export_csv(self, out_path: str | Path) -> int:
        """Dump all kernel predictions as CSV; returns the row count."""
        rows = self._db.execute(
            """SELECT kernel_id, machine_fp, method, ivp, tau, n, frequency,
                      alpha, beta, delta, phi
               FROM kernel_predictions
               ORDER BY kernel_id, machine_fp, method, ivp, tau, n"""
        ).fetchall()
        with open(out_path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(
                ["kernel_id", "machine_fp", "method", "ivp", "tau", "n",
                 "frequency", "alpha", "beta", "delta", "phi"]
            )
            writer.writerows(rows)
        return len(rows)


def stale_kernels_on_ivp_change(
    templates: list[KernelTemplate] | tuple[KernelTemplate, ...],
    old_ivp: IVP,
    new_ivp: IVP,
) -> set[str]:
    """Kernels whose predictions an IVP switch invalidates: exactly those of
    templates that evaluate the IVP.  Identical IVPs invalidate nothing."""
    if old_ivp == new_ivp:
        return set()
    stale: set[str] = set()
    for template in templates:
        if template.contains_rhs:
            stale.update(template.kernel_names())
    return stale
