"""HTTP annotation service: sessions, query delivery, label submission,
metrics.

The service is the transport between the query loop and a human annotator.
Each session owns one ActiveLearningRun driven by a single worker thread;
sessions persist their loop state after every stable transition, so an
annotation session survives service restarts with its pending batch intact.

Endpoints (JSON over HTTP/1.1, versioned under /v1):
    POST /v1/datasets                    generate or ingest a dataset
    POST /v1/sessions                    create a session, start initial training
    GET  /v1/sessions/{sid}              session snapshot
    GET  /v1/sessions/{sid}/query        pending query batch
    POST /v1/sessions/{sid}/labels       submit labels (partial ok)
    GET  /v1/sessions/{sid}/metrics      incremental metrics rows (?since=N)
    GET  /v1/samples/{sample_id}/image   PNG bytes (?dataset_id=...)

Errors are JSON problem documents {code, message, details}.
"""

from __future__ import annotations

import io
import json
import logging
import threading
import uuid
from dataclasses import asdict
from pathlib import Path

from fastapi import FastAPI, Query, Request
from fastapi.exceptions import RequestValidationError
from fastapi.responses import JSONResponse, Response
from PIL import Image

from . import datasets
from .classifier import load_checkpoint, save_checkpoint
from .engine import ActiveLearningRun, ExperimentConfig
from .errors import (ConfigurationError, DataError, DefectLoopError,
                     RunCompleteError, SampleNotFoundError, ValidationError)
from .metrics import last_query_summary

logger = logging.getLogger(__name__)

STATES = ("initializing", "training", "awaiting_labels", "complete", "failed")


class ServiceError(DefectLoopError):
    def __init__(self, status: int, code: str, message: str, details: dict | None = None):
        self.status = status
        self.code = code
        self.message = message
        self.details = details or {}
        super().__init__(message)


def _problem(status: int, code: str, message: str, details: dict | None = None) -> JSONResponse:
    return JSONResponse(status_code=status,
                        content={"code": code, "message": message, "details": details or {}})


class DatasetRegistry:
    """Datasets on disk under <data_dir>/datasets/<id>/, cached in memory."""

    def __init__(self, root: Path):
        self.root = root
        self.root.mkdir(parents=True, exist_ok=True)
        self._cache: dict[str, datasets.Dataset] = {}
        self._lock = threading.Lock()

    def ids(self) -> list[str]:
        with self._lock:
            on_disk = {p.name for p in self.root.iterdir()
                       if (p / "manifest.json").exists()}
            return sorted(on_disk | set(self._cache))

    def get(self, dataset_id: str) -> datasets.Dataset:
        with self._lock:
            if dataset_id in self._cache:
                return self._cache[dataset_id]
            path = self.root / dataset_id
            if not (path / "manifest.json").exists():
                raise ServiceError(404, "not-found", f"unknown dataset {dataset_id!r}")
            ds = datasets.Dataset.load(path)
            self._cache[dataset_id] = ds
            return ds

    def add(self, ds: datasets.Dataset) -> datasets.Dataset:
        with self._lock:
            if ds.dataset_id in self._cache or (self.root / ds.dataset_id / "manifest.json").exists():
                raise ServiceError(409, "dataset-exists",
                                   f"dataset {ds.dataset_id!r} already exists")
            ds.save(self.root / ds.dataset_id)
            self._cache[ds.dataset_id] = ds
            return ds

    def find_sample(self, sample_id: str) -> tuple[datasets.Dataset, datasets.Sample]:
        for dataset_id in self.ids():
            ds = self.get(dataset_id)
            if sample_id in ds.samples:
                return ds, ds.samples[sample_id]
        raise ServiceError(404, "not-found", f"unknown sample {sample_id!r}")


class Session:
    """One annotation session: a run, its worker, and persisted state."""

    def __init__(self, session_id: str, dataset_id: str, run: ActiveLearningRun,
                 directory: Path):
        self.id = session_id
        self.dataset_id = dataset_id
        self.run = run
        self.directory = directory
        self.state = "initializing"
        self.error: str | None = None
        self.rows: list[tuple] = []
        self.pending_labels: dict[str, str] = {}
        self.lock = threading.RLock()
        self.worker: threading.Thread | None = None

    # -- persistence ----------------------------------------------------------

    def persist(self) -> None:
        doc = {
            "session_id": self.id,
            "dataset_id": self.dataset_id,
            "config": self.run.cfg.to_dict(),
            "state": self.state,
            "error": self.error,
            "pending_labels": dict(self.pending_labels),
            "loop": self.run.snapshot(),
        }
        self.directory.mkdir(parents=True, exist_ok=True)
        tmp = self.directory / "session.json.tmp"
        tmp.write_text(json.dumps(doc))
        tmp.replace(self.directory / "session.json")
        if hasattr(self.run.clf, "w1_"):
            head_tmp = self.directory / "head.json.tmp"
            save_checkpoint(self.run.clf, head_tmp)
            head_tmp.replace(self.directory / "head.json")

    @classmethod
    def load(cls, directory: Path, registry: DatasetRegistry) -> "Session":
        doc = json.loads((directory / "session.json").read_text())
        cfg = ExperimentConfig.from_dict(doc["config"])
        ds = registry.get(doc["dataset_id"])
        run = ActiveLearningRun(cfg, ds)
        run.restore(doc["loop"])
        head_path = directory / "head.json"
        if head_path.exists():
            run.clf = load_checkpoint(head_path)
        session = cls(doc["session_id"], doc["dataset_id"], run, directory)
        session.state = doc["state"]
        session.error = doc.get("error")
        session.pending_labels = dict(doc.get("pending_labels", {}))
        session.rows = [tuple(r) for r in doc["loop"]["rows"]]
        return session

    # -- state machine ---------------------------------------------------------

    def snapshot_view(self) -> dict:
        with self.lock:
            cfg = self.run.cfg
            completed = sum(1 for b in self.run.state.query_history if b.status == "labeled")
            return {
                "session_id": self.id,
                "dataset_id": self.dataset_id,
                "state": self.state,
                "error": self.error,
                "config": cfg.to_dict(),
                "progress": {
                    "completed_queries": completed,
                    "total_queries": cfg.queries,
                    "teach_size": len(self.run.state.teach),
                    "pool_size": len(self.run.state.pool),
                    "metric_rows": len(self.rows),
                },
            }

    def _sync_rows(self) -> None:
        self.rows = [(r.query_index, r.epoch, r.train_accuracy, r.train_loss,
                      r.test_accuracy, r.test_loss) for r in self.run.log.rows]

    def _advance(self) -> None:
        """Worker body: train, then either park for labels or finish."""
        try:
            if not self.run._initialized:
                self.run.init_run()
            else:
                batch = self.run.pending_batch()
                if batch is not None:
                    labels = {i: self.pending_labels[i] for i in batch.sample_ids}
                    self.run.complete_query(labels)
                    with self.lock:
                        self.pending_labels = {}
            with self.lock:
                self._sync_rows()
            self._next_step()
        except Exception as exc:  # worker thread: surface via session state
            logger.exception("session %s failed", self.id)
            with self.lock:
                self.state = "failed"
                self.error = str(exc)
                self.persist()

    def _next_step(self) -> None:
        cfg = self.run.cfg
        completed = sum(1 for b in self.run.state.query_history if b.status == "labeled")
        if completed >= cfg.queries:
            with self.lock:
                self.state = "complete"
                self.persist()
            return
        if cfg.oracle == "simulated":
            batch = self.run.propose_query()
            labels = self.run.oracle.label(batch.sample_ids)
            self.run.complete_query(labels)
            with self.lock:
                self._sync_rows()
            self._next_step()
        else:
            try:
                self.run.propose_query()
            except RunCompleteError:
                with self.lock:
                    self.state = "complete"
                    self.persist()
                return
            with self.lock:
                self.state = "awaiting_labels"
                self.persist()

    def start_worker(self) -> None:
        self.worker = threading.Thread(target=self._advance, daemon=True,
                                       name=f"session-{self.id}")
        self.worker.start()

    def resume_after_load(self) -> None:
        """Restart work interrupted by a shutdown; pending batches stay as
        persisted."""
        if self.state in ("complete", "failed"):
            return
        if self.state == "awaiting_labels":
            batch = self.run.pending_batch()
            if batch is not None and all(i in self.pending_labels for i in batch.sample_ids):
                self.state = "training"
                self.start_worker()
            return
        # initializing or training checkpoints restart their step
        self.state = "training" if self.run._initialized else "initializing"
        self.start_worker()


class SessionManager:
    def __init__(self, root: Path, registry: DatasetRegistry):
        self.root = root
        self.root.mkdir(parents=True, exist_ok=True)
        self.registry = registry
        self.sessions: dict[str, Session] = {}
        self._lock = threading.Lock()
        self.load_all()

    def load_all(self) -> None:
        for path in sorted(self.root.iterdir()) if self.root.exists() else []:
            if not (path / "session.json").exists():
                continue
            try:
                session = Session.load(path, self.registry)
            except Exception:
                logger.exception("could not load session from %s", path)
                continue
            self.sessions[session.id] = session
            session.resume_after_load()

    def create(self, dataset_id: str, cfg: ExperimentConfig) -> Session:
        ds = self.registry.get(dataset_id)
        session_id = uuid.uuid4().hex[:12]
        run = ActiveLearningRun(cfg, ds)
        session = Session(session_id, dataset_id, run, self.root / session_id)
        with self._lock:
            self.sessions[session_id] = session
        session.persist()
        session.start_worker()
        return session

    def get(self, session_id: str) -> Session:
        try:
            return self.sessions[session_id]
        except KeyError:
            raise ServiceError(404, "not-found", f"unknown session {session_id!r}") from None


def create_app(data_dir, ui_dir=None) -> FastAPI:
    data_dir = Path(data_dir)
    registry = DatasetRegistry(data_dir / "datasets")
    manager = SessionManager(data_dir / "sessions", registry)

    app = FastAPI(title="defectloop annotation service", version="1")
    app.state.registry = registry
    app.state.manager = manager

    @app.exception_handler(ServiceError)
    async def service_error_handler(request: Request, exc: ServiceError):
        return _problem(exc.status, exc.code, exc.message, exc.details)

    @app.exception_handler(RequestValidationError)
    async def validation_handler(request: Request, exc: RequestValidationError):
        return _problem(400, "invalid-request", "request body failed validation",
                        {"errors": exc.errors()})

    @app.exception_handler(DefectLoopError)
    async def domain_error_handler(request: Request, exc: DefectLoopError):
        return _problem(400, "invalid-request", str(exc))

    # -- datasets ---------------------------------------------------------------

    @app.post("/v1/datasets", status_code=201)
    def create_dataset(body: dict):
        kind = body.get("kind")
        try:
            if kind == "generate":
                params = datasets.SynthParams(**{
                    k: tuple(v) if isinstance(v, list) else v
                    for k, v in body.get("params", {}).items()})
                n = int(body.get("n", 0))
                ds = datasets.generate_synthetic(params, n,
                                                 dataset_id=body.get("dataset_id"))
            elif kind == "ingest":
                ds, errors = datasets.ingest_directory(
                    body["path"], labeling=body.get("labeling", "from-subdirectories"),
                    dataset_id=body.get("dataset_id"))
                if errors:
                    logger.warning("ingest skipped %d files", len(errors))
            else:
                raise ServiceError(400, "invalid-request",
                                   "kind must be 'generate' or 'ingest'")
        except (ValidationError, TypeError) as exc:
            raise ServiceError(400, "invalid-request", str(exc)) from None
        except DataError as exc:
            raise ServiceError(404, "not-found", str(exc)) from None
        registry.add(ds)
        return {"dataset_id": ds.dataset_id, "manifest": ds.manifest()}

    # -- sessions ---------------------------------------------------------------

    @app.post("/v1/sessions", status_code=201)
    def create_session(body: dict):
        dataset_id = body.get("dataset_id")
        if not dataset_id:
            raise ServiceError(400, "invalid-request", "dataset_id is required")
        config_doc = {k: v for k, v in body.items() if k != "dataset_id"}
        try:
            cfg = ExperimentConfig.from_dict(config_doc)
        except ValidationError as exc:
            raise ServiceError(400, "invalid-request", str(exc)) from None
        try:
            session = manager.create(dataset_id, cfg)
        except (ConfigurationError, ValidationError) as exc:
            raise ServiceError(400, "invalid-request", str(exc)) from None
        return {"session_id": session.id, "state": session.state}

    @app.get("/v1/sessions/{session_id}")
    def get_session(session_id: str):
        return manager.get(session_id).snapshot_view()

    @app.get("/v1/sessions/{session_id}/query")
    def get_pending_query(session_id: str, request: Request):
        session = manager.get(session_id)
        with session.lock:
            if session.state != "awaiting_labels":
                raise ServiceError(409, "invalid-state",
                                   f"session is {session.state}, not awaiting labels",
                                   {"state": session.state})
            batch = session.run.pending_batch()
            remaining = [i for i in batch.sample_ids if i not in session.pending_labels]
            return {
                "query_index": batch.query_index,
                "strategy": batch.strategy.value,
                "entries": [
                    {"sample_id": sid, "score": score,
                     "image_url": f"/v1/samples/{sid}/image?dataset_id={session.dataset_id}",
                     "labeled": sid in session.pending_labels}
                    for sid, score in zip(batch.sample_ids, batch.scores)
                ],
                "remaining": remaining,
            }

    @app.post("/v1/sessions/{session_id}/labels")
    def submit_labels(session_id: str, body: dict):
        session = manager.get(session_id)
        labels = body.get("labels")
        annotator = body.get("annotator", "anonymous")
        if not isinstance(labels, dict) or not labels:
            raise ServiceError(400, "invalid-request",
                               "body must carry a nonempty labels map")
        for value in labels.values():
            if value not in datasets.LABELS:
                raise ServiceError(422, "unknown-label",
                                   f"labels must be one of {list(datasets.LABELS)}, got {value!r}")
        ds = registry.get(session.dataset_id)
        with session.lock:
            if session.state != "awaiting_labels":
                raise ServiceError(409, "invalid-state",
                                   f"session is {session.state}, not awaiting labels",
                                   {"state": session.state})
            batch = session.run.pending_batch()
            outside = sorted(set(labels) - set(batch.sample_ids))
            if outside:
                raise ServiceError(409, "not-in-batch",
                                   "labels for samples outside the pending batch",
                                   {"sample_ids": outside})
            accepted, already = [], []
            for sid, value in labels.items():
                prior = session.pending_labels.get(sid)
                committed = ds.samples[sid].committed_label
                existing = prior or committed
                if existing is not None:
                    if existing != value:
                        raise ServiceError(409, "label-conflict",
                                           f"sample {sid!r} already labeled {existing!r}",
                                           {"sample_id": sid})
                    already.append(sid)
                    session.pending_labels[sid] = value
                    continue
                if committed is None:
                    ds.commit_label(sid, value, annotator,
                                    query_index=batch.query_index)
                session.pending_labels[sid] = value
                accepted.append(sid)
            remaining = [i for i in batch.sample_ids if i not in session.pending_labels]
            if not remaining:
                session.state = "training"
                session.persist()
                session.start_worker()
            else:
                session.persist()
            return {"accepted": sorted(accepted), "already_committed": sorted(already),
                    "remaining": remaining, "state": session.state}

    @app.get("/v1/sessions/{session_id}/metrics")
    def get_metrics(session_id: str, since: int = Query(0, ge=0)):
        session = manager.get(session_id)
        with session.lock:
            rows = [
                {"query_index": r[0], "epoch": r[1], "train_accuracy": r[2],
                 "train_loss": r[3], "test_accuracy": r[4], "test_loss": r[5]}
                for r in session.rows[since:]
            ]
            payload = {"rows": rows, "next_since": len(session.rows),
                       "state": session.state}
            if session.state == "complete" and session.run.log.rows:
                payload["summary"] = asdict(last_query_summary(session.run.log))
            return payload

    # -- samples ----------------------------------------------------------------

    @app.get("/v1/samples/{sample_id:path}/image")
    def get_sample_image(sample_id: str, dataset_id: str | None = None):
        if dataset_id is not None:
            ds = registry.get(dataset_id)
            try:
                sample = ds.get_sample(sample_id)
            except SampleNotFoundError:
                raise ServiceError(404, "not-found", f"unknown sample {sample_id!r}") from None
        else:
            ds, sample = registry.find_sample(sample_id)
        if sample.image is None:
            raise ServiceError(409, "no-pixel-data",
                               f"sample {sample_id!r} is feature-only")
        buf = io.BytesIO()
        Image.fromarray(sample.image, mode="L").save(buf, format="PNG")
        return Response(content=buf.getvalue(), media_type="image/png")

    if ui_dir:
        from fastapi.staticfiles import StaticFiles
        app.mount("/ui", StaticFiles(directory=str(ui_dir), html=True), name="ui")

    return app
