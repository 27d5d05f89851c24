"""Versioned artifact store with content-addressed, idempotent runs.

Layout under the store root::

    datasets/<dataset_id>/demand.csv      canonicalized bytes as ingested
    datasets/<dataset_id>/exogenous.csv
    datasets/<dataset_id>/meta.json
    runs/<run_id>.json                    RunRecord metadata
    payloads/<run_id>                     artifact payload bytes
    exports/                              CSV exports for spreadsheet users

Writes go through a temp file + rename so readers never observe a partial
artifact. run_id is derived from (dataset_id, config_hash, kind), which
makes persistence idempotent and run ids reproducible across processes.
"""

from __future__ import annotations

import hashlib
import json
import os
import tempfile
from dataclasses import dataclass
from datetime import datetime, timezone
from pathlib import Path
from typing import Optional

ARTIFACT_KINDS = (
    "forecasts",
    "residuals",
    "weights",
    "scorecard_report",
    "trend_report",
    "monthly_trend_report",
)


class StoreError(RuntimeError):
    pass


class NotFound(StoreError):
    pass


@dataclass(frozen=True)
class RunRecord:
    run_id: str
    dataset_id: str
    config_hash: str
    kind: str
    payload_path: str

    def __post_init__(self):
        if self.kind not in ARTIFACT_KINDS:
            raise ValueError(f"unknown artifact kind {self.kind!r}")


def derive_run_id(dataset_id: str, config_hash: str, kind: str) -> str:
    digest = hashlib.sha256(
        f"{dataset_id}\x1f{config_hash}\x1f{kind}".encode("utf-8")
    ).hexdigest()
    return digest[:16]


def _atomic_write(path: Path, data: bytes) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=".tmp-")
    try:
        with os.fdopen(fd, "wb") as handle:
            handle.write(data)
            handle.flush()
            os.fsync(handle.fileno())
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


class ArtifactStore:
    """Single-writer, multi-reader store rooted at a directory."""

    def __init__(self, root: str | Path):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)

    # -- paths ---------------------------------------------------------

    def _run_path(self, run_id: str) -> Path:
        return self.root / "runs" / f"{run_id}.json"

    def _payload_path(self, run_id: str) -> Path:
        return self.root / "payloads" / run_id

    def dataset_dir(self, dataset_id: str) -> Path:
        return self.root / "datasets" / dataset_id

    @property
    def exports_dir(self) -> Path:
        path = self.root / "exports"
        path.mkdir(parents=True, exist_ok=True)
        return path

    # -- datasets ------------------------------------------------------

    def register_dataset(
        self,
        dataset_id: str,
        demand_bytes: bytes,
        exog_bytes: bytes,
        demand_hash: str,
        exog_hash: str,
    ) -> None:
        ddir = self.dataset_dir(dataset_id)
        _atomic_write(ddir / "demand.csv", demand_bytes)
        _atomic_write(ddir / "exogenous.csv", exog_bytes)
        meta = {
            "dataset_id": dataset_id,
            "demand_hash": demand_hash,
            "exog_hash": exog_hash,
            "registered_at": datetime.now(timezone.utc).isoformat(
                timespec="seconds"
            ),
        }
        _atomic_write(ddir / "meta.json", json.dumps(meta, indent=1).encode())

    def has_dataset(self, dataset_id: str) -> bool:
        return (self.dataset_dir(dataset_id) / "meta.json").exists()

    def dataset_meta(self, dataset_id: str) -> dict:
        path = self.dataset_dir(dataset_id) / "meta.json"
        if not path.exists():
            raise NotFound(f"dataset {dataset_id!r} not registered")
        return json.loads(path.read_text())

    def dataset_paths(self, dataset_id: str) -> tuple[Path, Path]:
        if not self.has_dataset(dataset_id):
            raise NotFound(f"dataset {dataset_id!r} not registered")
        ddir = self.dataset_dir(dataset_id)
        return ddir / "demand.csv", ddir / "exogenous.csv"

    def list_datasets(self) -> list[str]:
        base = self.root / "datasets"
        if not base.exists():
            return []
        return sorted(p.name for p in base.iterdir() if (p / "meta.json").exists())

    # -- run artifacts ---------------------------------------------------

    def persist_artifact(
        self, dataset_id: str, config_hash: str, kind: str, payload: bytes
    ) -> str:
        """Store one artifact; returns its run_id.

        Re-persisting the same (dataset_id, config_hash, kind) returns the
        existing run_id without rewriting.
        """
        if not payload:
            raise StoreError("payload must be non-empty")
        if kind not in ARTIFACT_KINDS:
            raise StoreError(f"unknown artifact kind {kind!r}")
        run_id = derive_run_id(dataset_id, config_hash, kind)
        run_path = self._run_path(run_id)
        if run_path.exists():
            return run_id
        payload_path = self._payload_path(run_id)
        _atomic_write(payload_path, payload)
        record = RunRecord(
            run_id=run_id,
            dataset_id=dataset_id,
            config_hash=config_hash,
            kind=kind,
            payload_path=str(payload_path.relative_to(self.root)),
        )
        _atomic_write(
            run_path,
            json.dumps(record.__dict__, indent=1, sort_keys=True).encode(),
        )
        return run_id

    def fetch_artifact(self, run_id: str) -> tuple[RunRecord, bytes]:
        run_path = self._run_path(run_id)
        if not run_path.exists():
            raise NotFound(f"run {run_id!r} not found")
        record = RunRecord(**json.loads(run_path.read_text()))
        payload = (self.root / record.payload_path).read_bytes()
        return record, payload

    def find_run(
        self, dataset_id: str, config_hash: str, kind: str
    ) -> Optional[str]:
        run_id = derive_run_id(dataset_id, config_hash, kind)
        return run_id if self._run_path(run_id).exists() else None

    def fetch_by_key(
        self, dataset_id: str, config_hash: str, kind: str
    ) -> tuple[RunRecord, bytes]:
        run_id = self.find_run(dataset_id, config_hash, kind)
        if run_id is None:
            raise NotFound(
                f"no {kind} artifact for dataset {dataset_id!r} "
                f"(config {config_hash[:12]})"
            )
        return self.fetch_artifact(run_id)
