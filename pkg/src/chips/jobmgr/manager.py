"""Job queue, worker pool, and per-job state machine.

States: SCHEDULED -> STARTED -> {FINISHED_OK, FINISHED_ERR, CANCELLED,
TIMED_OUT}; terminal states are absorbing. A fixed pool of worker threads
(max-parallel) drives execution, so the parallelism bound holds by
construction. Stdout/stderr are captured with a size cap; the exit code is
present exactly for FINISHED_OK/FINISHED_ERR.
"""

from __future__ import annotations

import base64
import enum
import logging
import os
import signal
import subprocess
import threading
import time
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path

from ..common import valid_job_key
from .backend import ExecutionBackend, LocalBackend
from .errors import DuplicateJobKey, InvalidJobSpec, MissingInput, QueueFull, UnknownJob

logger = logging.getLogger(__name__)

CAPTURE_LIMIT = 1024 * 1024  # per stream
SPAWN_FAILURE_EXIT = 127


class JobState(str, enum.Enum):
    SCHEDULED = "SCHEDULED"
    STARTED = "STARTED"
    FINISHED_OK = "FINISHED_OK"
    FINISHED_ERR = "FINISHED_ERR"
    CANCELLED = "CANCELLED"
    TIMED_OUT = "TIMED_OUT"


TERMINAL_STATES = frozenset(
    {JobState.FINISHED_OK, JobState.FINISHED_ERR, JobState.CANCELLED, JobState.TIMED_OUT}
)


@dataclass
class JobSpec:
    job_key: str
    command: list[str]
    environment: dict[str, str] = field(default_factory=dict)
    working_dir: str | None = None  # relative to job root; defaults to the job key
    input_subdir: str = "input"
    output_subdir: str = "output"
    timeout_s: float = 300.0
    image: str | None = None

    def validate(self) -> None:
        if not valid_job_key(self.job_key):
            raise InvalidJobSpec(f"bad job key {self.job_key!r}")
        if not self.command:
            raise InvalidJobSpec("command must be non-empty")
        if self.timeout_s <= 0:
            raise InvalidJobSpec("timeout must be > 0")
        for rel in (self.working_dir, self.input_subdir, self.output_subdir):
            if rel is None:
                continue
            parts = rel.split("/")
            if rel.startswith("/") or ".." in parts or "" in parts:
                raise InvalidJobSpec(f"path escapes the job root: {rel!r}")

    def to_json(self) -> dict:
        return {
            "job_key": self.job_key,
            "command": list(self.command),
            "environment": dict(self.environment),
            "working_dir": self.working_dir,
            "input_subdir": self.input_subdir,
            "output_subdir": self.output_subdir,
            "timeout_s": self.timeout_s,
            "image": self.image,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "JobSpec":
        return cls(
            job_key=obj["job_key"],
            command=list(obj["command"]),
            environment=dict(obj.get("environment", {})),
            working_dir=obj.get("working_dir"),
            input_subdir=obj.get("input_subdir", "input"),
            output_subdir=obj.get("output_subdir", "output"),
            timeout_s=float(obj.get("timeout_s", 300.0)),
            image=obj.get("image"),
        )


@dataclass
class JobRecord:
    spec: JobSpec
    state: JobState = JobState.SCHEDULED
    exit_code: int | None = None
    stdout: bytes = b""
    stderr: bytes = b""
    stdout_truncated: bool = False
    stderr_truncated: bool = False
    transitions: list[tuple[str, float]] = field(default_factory=list)

    @property
    def submitted_at(self) -> float:
        return self.transitions[0][1] if self.transitions else 0.0

    def to_json(self) -> dict:
        return {
            "spec": self.spec.to_json(),
            "state": self.state.value,
            "exit_code": self.exit_code,
            "stdout_b64": base64.b64encode(self.stdout).decode("ascii"),
            "stderr_b64": base64.b64encode(self.stderr).decode("ascii"),
            "stdout_truncated": self.stdout_truncated,
            "stderr_truncated": self.stderr_truncated,
            "transitions": [[state, ts] for state, ts in self.transitions],
        }

    @classmethod
    def from_json(cls, obj: dict) -> "JobRecord":
        return cls(
            spec=JobSpec.from_json(obj["spec"]),
            state=JobState(obj["state"]),
            exit_code=obj.get("exit_code"),
            stdout=base64.b64decode(obj.get("stdout_b64", "")),
            stderr=base64.b64decode(obj.get("stderr_b64", "")),
            stdout_truncated=bool(obj.get("stdout_truncated", False)),
            stderr_truncated=bool(obj.get("stderr_truncated", False)),
            transitions=[(state, ts) for state, ts in obj.get("transitions", [])],
        )


class _Capture:
    def __init__(self, limit: int):
        self.buf = bytearray()
        self.limit = limit
        self.truncated = False

    def feed(self, chunk: bytes) -> None:
        room = self.limit - len(self.buf)
        if room >= len(chunk):
            self.buf += chunk
        else:
            self.buf += chunk[:max(0, room)]
            self.truncated = True


class _Job:
    def __init__(self, record: JobRecord, seq: int):
        self.record = record
        self.seq = seq
        self.proc: subprocess.Popen | None = None
        self.cancel_requested = False
        self.timed_out = False
        self.done = threading.Event()


class JobManager:
    def __init__(
        self,
        job_root: Path | str,
        max_parallel: int = 2,
        queue_limit: int = 256,
        backend: ExecutionBackend | None = None,
        grace_period_s: float = 5.0,
        capture_limit: int = CAPTURE_LIMIT,
    ):
        self.job_root = Path(job_root)
        self.job_root.mkdir(parents=True, exist_ok=True)
        self.max_parallel = max_parallel
        self.queue_limit = queue_limit
        self.backend = backend or LocalBackend()
        self.grace_period_s = grace_period_s
        self.capture_limit = capture_limit

        self._jobs: dict[str, _Job] = {}
        self._queue: deque[str] = deque()
        self._lock = threading.RLock()
        self._cond = threading.Condition(self._lock)
        self._seq = 0
        self._stop = False
        self._workers = [
            threading.Thread(target=self._worker_loop, name=f"jobmgr-worker-{i}", daemon=True)
            for i in range(max_parallel)
        ]
        for worker in self._workers:
            worker.start()

    # -- public API ----------------------------------------------------------

    def submit_job(self, spec: JobSpec) -> JobRecord:
        spec.validate()
        job_dir = self._job_dir(spec)
        if not (job_dir / spec.input_subdir).is_dir():
            raise MissingInput(f"input subdir missing for job {spec.job_key!r}")
        with self._cond:
            if spec.job_key in self._jobs:
                raise DuplicateJobKey(f"job key {spec.job_key!r} already used")
            if len(self._queue) >= self.queue_limit:
                raise QueueFull(f"queue limit {self.queue_limit} reached")
            record = JobRecord(spec=spec)
            record.transitions.append((JobState.SCHEDULED.value, time.time()))
            self._seq += 1
            job = _Job(record, self._seq)
            self._jobs[spec.job_key] = job
            self._queue.append(spec.job_key)
            self._cond.notify()
            return self._snapshot(job)

    def get_job(self, job_key: str) -> JobRecord:
        with self._lock:
            return self._snapshot(self._require(job_key))

    def cancel_job(self, job_key: str) -> JobRecord:
        with self._cond:
            job = self._require(job_key)
            if job.record.state in TERMINAL_STATES:
                return self._snapshot(job)  # idempotent no-op
            job.cancel_requested = True
            if job.record.state is JobState.SCHEDULED:
                try:
                    self._queue.remove(job_key)
                except ValueError:
                    pass  # a worker claimed it concurrently; flag handles it
                else:
                    self._finalize(job, JobState.CANCELLED)
                    return self._snapshot(job)
            proc = job.proc
        if proc is not None:
            self._terminate_group(proc)
        job.done.wait(timeout=self.grace_period_s + 10)
        with self._lock:
            return self._snapshot(job)

    def list_jobs(self, states: set[JobState] | None = None) -> list[JobRecord]:
        with self._lock:
            jobs = sorted(self._jobs.values(), key=lambda j: j.seq)
            return [self._snapshot(j) for j in jobs if states is None or j.record.state in states]

    def purge(self) -> int:
        with self._lock:
            terminal = [k for k, j in self._jobs.items() if j.record.state in TERMINAL_STATES]
            for key in terminal:
                del self._jobs[key]
            return len(terminal)

    def shutdown(self, kill_running: bool = True) -> None:
        with self._cond:
            self._stop = True
            self._queue.clear()
            self._cond.notify_all()
            procs = [j.proc for j in self._jobs.values() if j.proc and j.record.state is JobState.STARTED]
        if kill_running:
            for proc in procs:
                try:
                    os.killpg(proc.pid, signal.SIGKILL)
                except (ProcessLookupError, PermissionError):
                    pass
        for worker in self._workers:
            worker.join(timeout=5)

    # -- internals -------------------------------------------------------------

    def _job_dir(self, spec: JobSpec) -> Path:
        rel = spec.working_dir if spec.working_dir else spec.job_key
        return self.job_root / rel

    def _require(self, job_key: str) -> _Job:
        job = self._jobs.get(job_key)
        if job is None:
            raise UnknownJob(f"unknown job key {job_key!r}")
        return job

    def _snapshot(self, job: _Job) -> JobRecord:
        record = job.record
        return JobRecord(
            spec=record.spec,
            state=record.state,
            exit_code=record.exit_code,
            stdout=bytes(record.stdout),
            stderr=bytes(record.stderr),
            stdout_truncated=record.stdout_truncated,
            stderr_truncated=record.stderr_truncated,
            transitions=list(record.transitions),
        )

    def _finalize(self, job: _Job, state: JobState, exit_code: int | None = None) -> None:
        # caller holds the lock
        job.record.state = state
        job.record.exit_code = exit_code
        job.record.transitions.append((state.value, time.time()))
        job.done.set()

    def _terminate_group(self, proc: subprocess.Popen) -> None:
        try:
            os.killpg(proc.pid, signal.SIGTERM)
        except (ProcessLookupError, PermissionError):
            return
        try:
            proc.wait(timeout=self.grace_period_s)
        except subprocess.TimeoutExpired:
            try:
                os.killpg(proc.pid, signal.SIGKILL)
            except (ProcessLookupError, PermissionError):
                pass

    def _worker_loop(self) -> None:
        while True:
            with self._cond:
                while not self._stop and not self._queue:
                    self._cond.wait()
                if self._stop:
                    return
                job = self._jobs[self._queue.popleft()]
                if job.record.state is not JobState.SCHEDULED:
                    continue
                if job.cancel_requested:
                    self._finalize(job, JobState.CANCELLED)
                    continue
                job.record.state = JobState.STARTED
                job.record.transitions.append((JobState.STARTED.value, time.time()))
            try:
                self._run_job(job)
            except Exception:
                logger.exception("worker crashed running job %s", job.record.spec.job_key)
                with self._lock:
                    if job.record.state not in TERMINAL_STATES:
                        self._finalize(job, JobState.FINISHED_ERR, exit_code=SPAWN_FAILURE_EXIT)

    def _run_job(self, job: _Job) -> None:
        spec = job.record.spec
        job_dir = self._job_dir(spec)
        (job_dir / spec.output_subdir).mkdir(parents=True, exist_ok=True)  # before start
        argv, env, cwd = self.backend.build_command(spec, job_dir)
        try:
            proc = subprocess.Popen(
                argv,
                cwd=cwd,
                env=env,
                stdout=subprocess.PIPE,
                stderr=subprocess.PIPE,
                start_new_session=True,  # own process group: group-wide kill works
            )
        except OSError as exc:
            with self._lock:
                job.record.stderr = f"spawn failure: {exc}".encode()
                self._finalize(job, JobState.FINISHED_ERR, exit_code=SPAWN_FAILURE_EXIT)
            return

        out_capture = _Capture(self.capture_limit)
        err_capture = _Capture(self.capture_limit)
        readers = [
            threading.Thread(target=self._drain, args=(proc.stdout, out_capture), daemon=True),
            threading.Thread(target=self._drain, args=(proc.stderr, err_capture), daemon=True),
        ]
        for reader in readers:
            reader.start()

        with self._lock:
            job.proc = proc
            cancel_pending = job.cancel_requested
        if cancel_pending:
            self._terminate_group(proc)

        deadline = time.monotonic() + spec.timeout_s
        while True:
            try:
                proc.wait(timeout=max(0.02, min(0.2, deadline - time.monotonic())))
                break
            except subprocess.TimeoutExpired:
                if time.monotonic() >= deadline and not job.timed_out and not job.cancel_requested:
                    job.timed_out = True
                    self._terminate_group(proc)
        for reader in readers:
            reader.join(timeout=5)

        with self._lock:
            job.record.stdout = bytes(out_capture.buf)
            job.record.stderr = bytes(err_capture.buf)
            job.record.stdout_truncated = out_capture.truncated
            job.record.stderr_truncated = err_capture.truncated
            if job.cancel_requested:
                self._finalize(job, JobState.CANCELLED)
            elif job.timed_out:
                self._finalize(job, JobState.TIMED_OUT)
            elif proc.returncode == 0:
                self._finalize(job, JobState.FINISHED_OK, exit_code=0)
            else:
                self._finalize(job, JobState.FINISHED_ERR, exit_code=proc.returncode)

    @staticmethod
    def _drain(pipe, capture: _Capture) -> None:
        try:
            while True:
                chunk = pipe.read(65536)
                if not chunk:
                    return
                capture.feed(chunk)
        finally:
            pipe.close()
