"""Compute-node registry, health probing, and the selection policy.

Selection: among UP nodes carrying every required label, pick the one with
the smallest queue-length/capacity ratio; ties break on the
lexicographically smallest node id, so equal inputs always give equal
outputs.
"""

from __future__ import annotations

import json
import logging
import threading
from dataclasses import dataclass, field
from pathlib import Path

from ..jobmgr.client import JobmgrClient, JobmgrUnreachable
from .errors import NoEligibleNode

logger = logging.getLogger(__name__)

HEALTH_UP = "UP"
HEALTH_DOWN = "DOWN"
HEALTH_UNKNOWN = "UNKNOWN"

DOWN_AFTER_FAILURES = 3


@dataclass
class ComputeNode:
    id: str
    jobmgr_url: str
    fileio_url: str
    capacity: int = 1
    labels: set[str] = field(default_factory=set)
    queue_length: int = 0
    health: str = HEALTH_UNKNOWN
    consecutive_failures: int = 0

    def __post_init__(self):
        if self.capacity < 1:
            raise ValueError(f"node {self.id!r}: capacity must be >= 1")
        if self.queue_length < 0:
            raise ValueError(f"node {self.id!r}: queue length must be >= 0")

    @property
    def score(self) -> float:
        return self.queue_length / self.capacity

    def to_json(self) -> dict:
        return {
            "id": self.id,
            "jobmgr_url": self.jobmgr_url,
            "fileio_url": self.fileio_url,
            "capacity": self.capacity,
            "labels": sorted(self.labels),
            "queue_length": self.queue_length,
            "health": self.health,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "ComputeNode":
        return cls(
            id=obj["id"],
            jobmgr_url=obj["jobmgr_url"],
            fileio_url=obj["fileio_url"],
            capacity=int(obj.get("capacity", 1)),
            labels=set(obj.get("labels", [])),
            queue_length=int(obj.get("queue_length", 0)),
            health=obj.get("health", HEALTH_UNKNOWN),
        )


def select_node(required_labels: set[str], nodes: list[ComputeNode]) -> ComputeNode:
    """Deterministic load-aware choice among eligible UP nodes."""
    if not nodes:
        raise NoEligibleNode("empty node list")
    eligible = [
        n for n in nodes
        if n.health == HEALTH_UP and required_labels.issubset(n.labels)
    ]
    if not eligible:
        raise NoEligibleNode(
            f"no UP node satisfies labels {sorted(required_labels)}"
        )
    return min(eligible, key=lambda n: (n.score, n.id))


def load_node_file(path: Path | str) -> list[ComputeNode]:
    with open(path, "r", encoding="utf-8") as fh:
        seeds = json.load(fh)
    return [ComputeNode.from_json(obj) for obj in seeds]


class NodeRegistry:
    """Thread-safe node table with a background health prober.

    A node is marked DOWN after three consecutive probe failures; a probe
    success marks it UP and refreshes its observed queue length (SCHEDULED +
    STARTED jobs on its job manager).
    """

    def __init__(self, nodes: list[ComputeNode] | None = None,
                 probe_interval_s: float = 10.0, probe_timeout_s: float = 5.0):
        self._nodes: dict[str, ComputeNode] = {n.id: n for n in (nodes or [])}
        self._lock = threading.RLock()
        self.probe_interval_s = probe_interval_s
        self.probe_timeout_s = probe_timeout_s
        self._stop = threading.Event()
        self._thread: threading.Thread | None = None

    def register(self, node: ComputeNode) -> None:
        with self._lock:
            self._nodes[node.id] = node

    def list(self) -> list[ComputeNode]:
        with self._lock:
            return [ComputeNode.from_json(n.to_json()) for n in self._nodes.values()]

    def get(self, node_id: str) -> ComputeNode | None:
        with self._lock:
            node = self._nodes.get(node_id)
            return ComputeNode.from_json(node.to_json()) if node else None

    def probe_all(self) -> None:
        with self._lock:
            snapshot = list(self._nodes.values())
        for node in snapshot:
            client = JobmgrClient(node.jobmgr_url, timeout=self.probe_timeout_s)
            try:
                active = client.list(states="SCHEDULED,STARTED")
            except JobmgrUnreachable:
                with self._lock:
                    node.consecutive_failures += 1
                    if node.consecutive_failures >= DOWN_AFTER_FAILURES:
                        node.health = HEALTH_DOWN
            except Exception:
                logger.exception("probe of node %s failed unexpectedly", node.id)
            else:
                with self._lock:
                    node.consecutive_failures = 0
                    node.health = HEALTH_UP
                    node.queue_length = len(active)

    def start_probing(self) -> None:
        def loop():
            while not self._stop.is_set():
                self.probe_all()
                self._stop.wait(self.probe_interval_s)

        self._thread = threading.Thread(target=loop, name="node-prober", daemon=True)
        self._thread.start()

    def stop_probing(self) -> None:
        self._stop.set()
        if self._thread is not None:
            self._thread.join(timeout=5)
            self._thread = None
