"""Remote step orchestration: push input, submit, poll, pull output.

Each step runs in its own worker thread through the phase machine
SELECTING -> PUSHING -> SUBMITTED -> POLLING -> PULLING -> DONE_OK, with any
phase allowed to fail into DONE_ERR and cancellation jumping to
DONE_CANCELLED. The step id doubles as the remote job key, which makes
every remote operation idempotent and recovery after a dispatcher restart a
matter of re-driving the recorded phase. Transient transport errors retry
with exponential backoff; job-level failures never do.
"""

from __future__ import annotations

import enum
import json
import logging
import os
import threading
import time
import uuid
from dataclasses import dataclass, field
from pathlib import Path

from ..common import valid_job_key
from ..fileio import (
    DestNotEmpty,
    IntegrityMismatch,
    RemoteRejected,
    Timeout,
    TreeManifest,
    fetch_manifest,
    pull_tree,
    push_tree,
)
from ..jobmgr.client import JobmgrClient, JobmgrUnreachable
from ..jobmgr.errors import DuplicateJobKey, QueueFull
from ..jobmgr.manager import JobState
from .errors import DuplicateStep, UnknownStep
from .nodes import ComputeNode, NodeRegistry, select_node
from .errors import NoEligibleNode

logger = logging.getLogger(__name__)


class StepPhase(str, enum.Enum):
    SELECTING = "SELECTING"
    PUSHING = "PUSHING"
    SUBMITTED = "SUBMITTED"
    POLLING = "POLLING"
    PULLING = "PULLING"
    DONE_OK = "DONE_OK"
    DONE_ERR = "DONE_ERR"
    DONE_CANCELLED = "DONE_CANCELLED"


TERMINAL_PHASES = frozenset({StepPhase.DONE_OK, StepPhase.DONE_ERR, StepPhase.DONE_CANCELLED})
PHASE_ORDER = [
    StepPhase.SELECTING, StepPhase.PUSHING, StepPhase.SUBMITTED,
    StepPhase.POLLING, StepPhase.PULLING,
]


@dataclass
class StepPlan:
    step_id: str
    instance_id: int
    input_dir: str
    output_dir: str
    command: list[str]
    environment: dict[str, str] = field(default_factory=dict)
    timeout_s: float = 300.0
    image: str | None = None
    labels: set[str] = field(default_factory=set)
    phase: StepPhase = StepPhase.SELECTING
    node_id: str | None = None
    diagnostic: str | None = None
    exit_code: int | None = None
    job_stderr: bytes = b""
    retries: dict[str, int] = field(default_factory=dict)
    timestamps: dict[str, float] = field(default_factory=dict)
    cancel_requested: bool = False

    def to_json(self) -> dict:
        import base64

        return {
            "step_id": self.step_id,
            "instance_id": self.instance_id,
            "input_dir": self.input_dir,
            "output_dir": self.output_dir,
            "command": list(self.command),
            "environment": dict(self.environment),
            "timeout_s": self.timeout_s,
            "image": self.image,
            "labels": sorted(self.labels),
            "phase": self.phase.value,
            "node_id": self.node_id,
            "diagnostic": self.diagnostic,
            "exit_code": self.exit_code,
            "job_stderr_b64": base64.b64encode(self.job_stderr).decode("ascii"),
            "retries": dict(self.retries),
            "timestamps": dict(self.timestamps),
            "cancel_requested": self.cancel_requested,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "StepPlan":
        import base64

        return cls(
            step_id=obj["step_id"],
            instance_id=obj["instance_id"],
            input_dir=obj["input_dir"],
            output_dir=obj["output_dir"],
            command=list(obj["command"]),
            environment=dict(obj.get("environment", {})),
            timeout_s=float(obj.get("timeout_s", 300.0)),
            image=obj.get("image"),
            labels=set(obj.get("labels", [])),
            phase=StepPhase(obj.get("phase", "SELECTING")),
            node_id=obj.get("node_id"),
            diagnostic=obj.get("diagnostic"),
            exit_code=obj.get("exit_code"),
            job_stderr=base64.b64decode(obj.get("job_stderr_b64", "")),
            retries=dict(obj.get("retries", {})),
            timestamps=dict(obj.get("timestamps", {})),
            cancel_requested=bool(obj.get("cancel_requested", False)),
        )


class _Cancelled(Exception):
    pass


class _StepFailed(Exception):
    def __init__(self, diagnostic: str, exit_code: int | None = None):
        super().__init__(diagnostic)
        self.diagnostic = diagnostic
        self.exit_code = exit_code


class Dispatcher:
    def __init__(
        self,
        registry: NodeRegistry,
        store_path: Path | str,
        backoff_s: tuple[float, ...] = (1.0, 2.0, 4.0),
        poll_interval_s: float = 0.2,
        remote_timeout_s: float = 30.0,
    ):
        self.registry = registry
        self.store_path = Path(store_path)
        self.steps_dir = self.store_path / "steps"
        self.steps_dir.mkdir(parents=True, exist_ok=True)
        self.backoff_s = tuple(backoff_s)
        self.poll_interval_s = poll_interval_s
        self.remote_timeout_s = remote_timeout_s
        self._steps: dict[str, StepPlan] = {}
        self._events: dict[str, threading.Event] = {}  # set on cancel to wake waits
        self._done: dict[str, threading.Event] = {}
        self._lock = threading.RLock()
        self._threads: list[threading.Thread] = []

    # -- persistence -------------------------------------------------------------

    def _save(self, plan: StepPlan) -> None:
        path = self.steps_dir / f"{plan.step_id}.json"
        tmp = path.with_suffix(".json.tmp")
        tmp.write_text(json.dumps(plan.to_json()), encoding="utf-8")
        os.replace(tmp, path)

    def recover(self) -> int:
        """Load persisted plans; re-drive the non-terminal ones."""
        count = 0
        for path in sorted(self.steps_dir.glob("*.json")):
            plan = StepPlan.from_json(json.loads(path.read_text(encoding="utf-8")))
            with self._lock:
                self._steps[plan.step_id] = plan
                self._events.setdefault(plan.step_id, threading.Event())
                self._done.setdefault(plan.step_id, threading.Event())
                if plan.phase in TERMINAL_PHASES:
                    self._done[plan.step_id].set()
            if plan.phase not in TERMINAL_PHASES:
                self._spawn_worker(plan.step_id)
                count += 1
        return count

    # -- public API ----------------------------------------------------------------

    def execute_step(self, plan: StepPlan) -> StepPlan:
        if not valid_job_key(plan.step_id):
            raise DuplicateStep(f"step id {plan.step_id!r} is not a valid job key")
        with self._lock:
            existing = self._steps.get(plan.step_id)
            if existing is not None:
                if existing.instance_id == plan.instance_id:
                    return self._snapshot(existing)  # idempotent re-post
                raise DuplicateStep(f"step {plan.step_id!r} already exists")
            plan.phase = StepPhase.SELECTING
            plan.timestamps[StepPhase.SELECTING.value] = time.time()
            self._steps[plan.step_id] = plan
            self._events[plan.step_id] = threading.Event()
            self._done[plan.step_id] = threading.Event()
            self._save(plan)
        self._spawn_worker(plan.step_id)
        with self._lock:
            return self._snapshot(self._steps[plan.step_id])

    def poll_step(self, step_id: str) -> StepPlan:
        with self._lock:
            return self._snapshot(self._require(step_id))

    def cancel_step(self, step_id: str, wait_s: float = 10.0) -> StepPlan:
        with self._lock:
            plan = self._require(step_id)
            if plan.phase in TERMINAL_PHASES:
                return self._snapshot(plan)
            plan.cancel_requested = True
            self._save(plan)
            self._events[step_id].set()
            node = self.registry.get(plan.node_id) if plan.node_id else None
            submitted = plan.phase in (StepPhase.SUBMITTED, StepPhase.POLLING)
        if node is not None and submitted:
            try:
                JobmgrClient(node.jobmgr_url, timeout=self.remote_timeout_s).cancel(step_id)
            except Exception as exc:  # worker will retry; cancellation still lands
                logger.warning("remote cancel of %s on %s failed: %s", step_id, node.id, exc)
        self._done[step_id].wait(timeout=wait_s)
        with self._lock:
            return self._snapshot(self._require(step_id))

    def list_steps(self) -> list[StepPlan]:
        with self._lock:
            return [self._snapshot(p) for p in self._steps.values()]

    def shutdown(self, timeout: float = 5.0) -> None:
        # hard stop: running threads are daemons; persisted state carries over
        for thread in self._threads:
            thread.join(timeout=0.01)

    # -- internals --------------------------------------------------------------------

    def _require(self, step_id: str) -> StepPlan:
        plan = self._steps.get(step_id)
        if plan is None:
            raise UnknownStep(f"no step {step_id!r}")
        return plan

    def _snapshot(self, plan: StepPlan) -> StepPlan:
        return StepPlan.from_json(plan.to_json())

    def _spawn_worker(self, step_id: str) -> None:
        thread = threading.Thread(
            target=self._drive, args=(step_id,), name=f"step-{step_id}", daemon=True
        )
        self._threads.append(thread)
        thread.start()

    def _set_phase(self, plan: StepPlan, phase: StepPhase) -> None:
        with self._lock:
            plan.phase = phase
            plan.timestamps.setdefault(phase.value, time.time())
            self._save(plan)
            if phase in TERMINAL_PHASES:
                self._done[plan.step_id].set()

    def _check_cancel(self, plan: StepPlan) -> None:
        with self._lock:
            if plan.cancel_requested:
                raise _Cancelled()

    def _wait(self, plan: StepPlan, seconds: float) -> None:
        # interruptible sleep: wakes immediately when the step is cancelled
        if self._events[plan.step_id].wait(timeout=seconds):
            self._check_cancel(plan)

    def _with_retries(self, plan: StepPlan, phase_name: str, call):
        """Run a remote call, retrying transient transport errors with backoff."""
        attempt = 0
        while True:
            self._check_cancel(plan)
            try:
                return call()
            except (Timeout, JobmgrUnreachable, NoEligibleNode, QueueFull, IntegrityMismatch) as exc:
                if attempt >= len(self.backoff_s):
                    raise
                delay = self.backoff_s[attempt]
                attempt += 1
                with self._lock:
                    plan.retries[phase_name] = attempt
                    self._save(plan)
                logger.info("step %s: %s retry %d after %s", plan.step_id, phase_name, attempt, exc)
                self._wait(plan, delay)

    # -- the phase machine ---------------------------------------------------------------

    def _drive(self, step_id: str) -> None:
        with self._lock:
            plan = self._steps[step_id]
            start_phase = plan.phase
        try:
            # Recovery re-drives from the recorded phase; remote idempotency
            # (job key, RemoteRejected/DestNotEmpty manifest checks) makes
            # redoing the in-flight phase safe. A lost node forces a restart
            # from selection.
            node = self._resume_node(plan)
            index = PHASE_ORDER.index(start_phase) if start_phase in PHASE_ORDER else 0
            if node is None:
                index = 0

            if index <= PHASE_ORDER.index(StepPhase.SELECTING) or node is None:
                self._set_phase(plan, StepPhase.SELECTING)
                try:
                    node = self._with_retries(
                        plan, "select", lambda: select_node(plan.labels, self.registry.list())
                    )
                except NoEligibleNode as exc:
                    raise _StepFailed(f"SELECT_FAILED: {exc}") from exc
                with self._lock:
                    plan.node_id = node.id
                    self._save(plan)

            if index <= PHASE_ORDER.index(StepPhase.PUSHING):
                self._set_phase(plan, StepPhase.PUSHING)
                self._push_input(plan, node)

            if index <= PHASE_ORDER.index(StepPhase.SUBMITTED):
                self._set_phase(plan, StepPhase.SUBMITTED)
                self._submit_job(plan, node)

            if index <= PHASE_ORDER.index(StepPhase.POLLING):
                self._set_phase(plan, StepPhase.POLLING)
                self._poll_job(plan, node)

            self._set_phase(plan, StepPhase.PULLING)
            self._pull_output(plan, node)

            self._set_phase(plan, StepPhase.DONE_OK)
        except _Cancelled:
            self._finish_cancel(plan)
        except _StepFailed as failure:
            with self._lock:
                plan.diagnostic = failure.diagnostic
                plan.exit_code = failure.exit_code
            self._set_phase(plan, StepPhase.DONE_ERR)
        except Exception as exc:
            logger.exception("step %s: unexpected failure", step_id)
            with self._lock:
                plan.diagnostic = f"INTERNAL: {exc}"
            self._set_phase(plan, StepPhase.DONE_ERR)

    def _resume_node(self, plan: StepPlan) -> ComputeNode | None:
        if plan.node_id is None:
            return None
        return self.registry.get(plan.node_id)

    def _push_input(self, plan: StepPlan, node: ComputeNode) -> None:
        def attempt():
            try:
                push_tree(plan.input_dir, node.fileio_url, plan.step_id,
                          timeout=self.remote_timeout_s)
            except RemoteRejected:
                # already pushed (recovery or retry after a half-acked push):
                # accept iff the remote tree matches ours
                local = TreeManifest.for_dir(Path(plan.input_dir))
                remote = fetch_manifest(node.fileio_url, plan.step_id, "input",
                                        timeout=self.remote_timeout_s)
                if remote.tree_hash != local.tree_hash:
                    raise _StepFailed("PUSH_FAILED: job key holds a different input tree")

        try:
            self._with_retries(plan, "push", attempt)
        except (_Cancelled, _StepFailed):
            raise
        except Exception as exc:  # exhausted retries or hard transfer failure
            raise _StepFailed(f"PUSH_FAILED: {exc}") from exc

    def _submit_job(self, plan: StepPlan, node: ComputeNode) -> None:
        from ..jobmgr.manager import JobSpec

        spec = JobSpec(
            job_key=plan.step_id,
            command=list(plan.command),
            environment=dict(plan.environment),
            timeout_s=plan.timeout_s,
            image=plan.image,
        )
        client = JobmgrClient(node.jobmgr_url, timeout=self.remote_timeout_s)

        def attempt():
            try:
                client.submit(spec)
            except DuplicateJobKey:
                pass  # recovery: the job is already there; polling takes over

        try:
            self._with_retries(plan, "submit", attempt)
        except (_Cancelled, _StepFailed):
            raise
        except Exception as exc:  # unreachable node, full queue, bad spec
            raise _StepFailed(f"SPAWN_FAILED: {exc}") from exc

    def _poll_job(self, plan: StepPlan, node: ComputeNode):
        client = JobmgrClient(node.jobmgr_url, timeout=self.remote_timeout_s)
        deadline = time.monotonic() + plan.timeout_s + 60.0  # jobmgr owns the job timeout
        while True:
            self._check_cancel(plan)
            try:
                record = self._with_retries(plan, "poll", lambda: client.get(plan.step_id))
            except (_Cancelled, _StepFailed):
                raise
            except Exception as exc:  # node gone for good
                raise _StepFailed(f"TIMEOUT: polling failed: {exc}") from exc
            state = record.state
            if state is JobState.FINISHED_OK:
                return record
            if state is JobState.FINISHED_ERR:
                with self._lock:
                    plan.job_stderr = record.stderr
                raise _StepFailed(f"JOB_FAILED({record.exit_code})", exit_code=record.exit_code)
            if state is JobState.TIMED_OUT:
                raise _StepFailed("TIMEOUT: job exceeded its runtime limit")
            if state is JobState.CANCELLED:
                with self._lock:
                    if plan.cancel_requested:
                        raise _Cancelled()
                raise _StepFailed("JOB_FAILED(cancelled remotely)")
            if time.monotonic() > deadline:
                raise _StepFailed("TIMEOUT: polling deadline exceeded")
            self._wait(plan, self.poll_interval_s)

    def _pull_output(self, plan: StepPlan, node: ComputeNode) -> None:
        def attempt():
            try:
                pull_tree(node.fileio_url, plan.step_id, "output", plan.output_dir,
                          timeout=self.remote_timeout_s)
            except DestNotEmpty:
                # recovery: output landed before the crash; accept iff it matches
                local = TreeManifest.for_dir(Path(plan.output_dir))
                remote = fetch_manifest(node.fileio_url, plan.step_id, "output",
                                        timeout=self.remote_timeout_s)
                if remote.tree_hash != local.tree_hash:
                    raise _StepFailed("PULL_FAILED: local output dir holds different content")

        try:
            self._with_retries(plan, "pull", attempt)
        except (_Cancelled, _StepFailed):
            raise
        except Exception as exc:  # exhausted retries, unknown key, local dir trouble
            raise _StepFailed(f"PULL_FAILED: {exc}") from exc

    def _finish_cancel(self, plan: StepPlan) -> None:
        # no orphans: make sure the remote job is terminal before we finish
        node = self._resume_node(plan)
        if node is not None and plan.phase in (StepPhase.SUBMITTED, StepPhase.POLLING):
            try:
                JobmgrClient(node.jobmgr_url, timeout=self.remote_timeout_s).cancel(plan.step_id)
            except Exception as exc:
                logger.warning("step %s: remote cancel failed: %s", plan.step_id, exc)
        with self._lock:
            plan.diagnostic = plan.diagnostic or "CANCELLED"
        self._set_phase(plan, StepPhase.DONE_CANCELLED)


def new_step_id(instance_id: int) -> str:
    return f"step-{instance_id}-{uuid.uuid4().hex[:8]}"
