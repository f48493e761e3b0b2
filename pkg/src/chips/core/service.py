"""Core backend operations: feeds, sharing, plugins, workflow trees,
structured analysis, metadata queries, and the PACS activity.

Plugin execution is asynchronous: instance creation enqueues a dispatcher
step and returns; progress is observed by polling reads, which refresh
non-terminal instances from the dispatcher and run structured analysis once
an instance lands on SUCCESS.
"""

from __future__ import annotations

import base64
import hashlib
import hmac
import json
import logging
import os
import secrets
import time
from dataclasses import dataclass
from pathlib import Path

from ..dicom import AnonymizationPolicy, default_policy
from ..dicom.metadata import SOURCE_ANALYSIS, MetadataRecord
from ..pacs import QuerySpec, pull_study, query_studies
from ..pacs.client import PullReceipt, authenticate as pacs_authenticate
from ..pacs.errors import DuplicatePull, TokenExpired as PacsTokenExpired
from ..dispatcher.client import DispatcherClient, DispatcherUnreachable
from .errors import (
    AuthRequired,
    CoreError,
    InvalidLogin,
    NotAuthorized,
    ParentNotReady,
    UnknownInstance,
)
from .metadata_index import MetadataIndex, Predicate
from .models import (
    Feed,
    ParamSpec,
    PluginDescriptor,
    PluginInstance,
    STATUS_RANK,
    TERMINAL_STATUSES,
    ROLES,
    User,
)
from .store import Store

logger = logging.getLogger(__name__)

PHASE_TO_STATUS = {
    "SELECTING": "DISPATCHED",
    "PUSHING": "DISPATCHED",
    "SUBMITTED": "DISPATCHED",
    "POLLING": "RUNNING",
    "PULLING": "RUNNING",
    "DONE_OK": "SUCCESS",
    "DONE_ERR": "ERROR",
    "DONE_CANCELLED": "CANCELLED",
}

RESULTS_FILENAME = "results.tsv"


@dataclass
class CoreConfig:
    store_path: Path
    dispatcher_url: str | None = None
    pacs_url: str | None = None
    pacs_account: str = ""
    pacs_secret: str = ""
    anon_policy: AnonymizationPolicy | None = None
    token_secret: bytes = b""
    token_ttl_s: float = 3600.0
    ui_dir: Path | None = None

    def __post_init__(self):
        self.store_path = Path(self.store_path)
        if not self.token_secret:
            env = os.environ.get("CHIPS_SECRET", "")
            self.token_secret = env.encode() if env else secrets.token_bytes(32)
        if self.anon_policy is None:
            self.anon_policy = default_policy(self.token_secret + b"/anon-salt")


class CoreService:
    def __init__(self, config: CoreConfig):
        self.config = config
        config.store_path.mkdir(parents=True, exist_ok=True)
        self.store = Store(config.store_path / "core.db")
        self.index = MetadataIndex(config.store_path / "core.db")
        self.data_dir = config.store_path / "data"
        self.nodes_dir = config.store_path / "feeds"
        self.data_dir.mkdir(exist_ok=True)
        self.nodes_dir.mkdir(exist_ok=True)
        self.dispatcher = (
            DispatcherClient(config.dispatcher_url) if config.dispatcher_url else None
        )
        self._pacs_token: str | None = None

    def close(self) -> None:
        self.store.close()
        self.index.close()

    # -- users and tokens ----------------------------------------------------------

    def create_user(self, login: str, secret: str, role: str) -> User:
        if role not in ROLES:
            raise CoreError(f"unknown role {role!r}")
        try:
            return self.store.create_user(login, secret, role)
        except Exception as exc:
            if "UNIQUE" in str(exc):
                raise CoreError(f"login {login!r} already taken") from None
            raise

    def login(self, login: str, secret: str) -> tuple[str, User]:
        user = self.store.verify_login(login, secret)
        if user is None:
            raise InvalidLogin("bad login or secret")
        return self._sign_token(user), user

    def _sign_token(self, user: User) -> str:
        payload = {"uid": user.id, "exp": time.time() + self.config.token_ttl_s}
        blob = base64.urlsafe_b64encode(json.dumps(payload).encode()).decode()
        sig = hmac.new(self.config.token_secret, blob.encode(), hashlib.sha256).hexdigest()
        return f"{blob}.{sig}"

    def verify_token(self, token: str) -> User:
        blob, _, sig = token.partition(".")
        if not blob or not sig:
            raise AuthRequired("missing bearer token")
        expected = hmac.new(self.config.token_secret, blob.encode(), hashlib.sha256).hexdigest()
        if not hmac.compare_digest(expected, sig):
            raise AuthRequired("bad token signature")
        try:
            payload = json.loads(base64.urlsafe_b64decode(blob.encode()))
        except (ValueError, TypeError) as exc:
            raise AuthRequired("malformed token") from exc
        if time.time() >= float(payload.get("exp", 0)):
            raise AuthRequired("token expired")
        return self.store.get_user(int(payload["uid"]))

    # -- feeds ------------------------------------------------------------------------

    def _feed_for(self, user: User, feed_id: int) -> Feed:
        feed = self.store.get_feed(feed_id)
        if not feed.accessible_by(user.id):
            raise NotAuthorized(f"user {user.login!r} has no access to feed {feed_id}")
        return feed

    def create_feed_from_pull(self, owner: User, title: str, receipt: PullReceipt) -> Feed:
        study_dir = Path(receipt.study_dir)
        if not study_dir.is_dir():
            raise CoreError(f"pulled study directory missing: {study_dir}")
        feed = self.store.create_feed(owner, title, receipt.anon_study_uid, str(study_dir))
        if receipt.metadata_records:
            self.index.add_records(receipt.metadata_records)
        return feed

    def list_feeds(self, user: User) -> list[dict]:
        cards = []
        for feed in self.store.list_feeds_for(user.id):
            instances = [self._refresh_instance(i) for i in self.store.instances_for_feed(feed.id)]
            card = feed.to_json(for_user=user.id)
            card["node_statuses"] = [i.status for i in instances]
            card["node_count"] = len(instances)
            cards.append(card)
        return cards

    def share_feed(self, user: User, feed_id: int, to_login: str) -> Feed:
        feed = self._feed_for(user, feed_id)  # any access holder may re-share
        target = self.store.get_user_by_login(to_login)
        self.store.add_share(feed.id, target.id)
        return self.store.get_feed(feed.id)

    def annotate_feed(self, user: User, feed_id: int, action: str, text: str = "") -> Feed:
        feed = self._feed_for(user, feed_id)
        if action == "ADD_TAG":
            if not text:
                raise CoreError("tag text required")
            self.store.add_tag(feed.id, text)
        elif action == "ADD_COMMENT":
            if not text:
                raise CoreError("comment text required")
            self.store.add_comment(feed.id, user.id, text)
        elif action == "BOOKMARK":
            self.store.toggle_bookmark(feed.id, user.id)
        else:
            raise CoreError(f"unknown annotate action {action!r}")
        return self.store.get_feed(feed.id)

    # -- plugins --------------------------------------------------------------------------

    def register_plugin(self, user: User, descriptor_json: dict) -> PluginDescriptor:
        if user.role != "ADMIN":
            raise NotAuthorized("plugin registration requires an admin")
        descriptor = PluginDescriptor(
            id=0,
            name=str(descriptor_json.get("name", "")),
            version=str(descriptor_json.get("version", "")),
            parameters=[ParamSpec.from_json(p) for p in descriptor_json.get("parameters", [])],
            command=list(descriptor_json.get("command", [])),
            timeout_s=float(descriptor_json.get("timeout_s", 300.0)),
            image=descriptor_json.get("image"),
        )
        descriptor.validate_schema()
        return self.store.add_plugin(descriptor)

    def list_plugins(self) -> list[PluginDescriptor]:
        return self.store.list_plugins()

    # -- plugin instances --------------------------------------------------------------------

    def create_plugin_instance(
        self, user: User, feed_id: int, parent_id: int | None, plugin_id: int, params: dict,
    ) -> PluginInstance:
        feed = self._feed_for(user, feed_id)
        descriptor = self.store.get_plugin(plugin_id)
        resolved = descriptor.resolve_params(params)
        if parent_id is None:
            input_dir = feed.root_dir
        else:
            parent = self.store.get_instance(parent_id)
            if parent.feed_id != feed.id:
                raise UnknownInstance(f"instance {parent_id} is not in feed {feed_id}")
            parent = self._refresh_instance(parent)
            if parent.status != "SUCCESS":
                raise ParentNotReady(f"parent {parent_id} is {parent.status}, not SUCCESS")
            input_dir = parent.output_dir
        instance = self.store.create_instance(
            feed.id, descriptor.id, parent_id, resolved, input_dir, output_dir="",
        )
        output_dir = self.nodes_dir / str(feed.id) / f"node-{instance.id}" / "output"
        output_dir.parent.mkdir(parents=True, exist_ok=True)
        self.store.update_instance(instance.id, output_dir=str(output_dir))
        self._dispatch(self.store.get_instance(instance.id), descriptor, resolved)
        result = self.store.get_instance(instance.id)
        result.status = "CREATED"  # creation snapshot; reads observe later states
        return result

    def _dispatch(self, instance: PluginInstance, descriptor: PluginDescriptor,
                  params: dict) -> None:
        if self.dispatcher is None:
            self.store.update_instance(
                instance.id, status="ERROR", error="no dispatcher configured"
            )
            return
        step_key = f"feed{instance.feed_id}-node{instance.id}"
        payload = {
            "step_id": step_key,
            "instance_id": instance.id,
            "input_dir": instance.input_dir,
            "output_dir": instance.output_dir,
            "command": descriptor.render_command(params),
            "environment": {},
            "timeout_s": descriptor.timeout_s,
            "image": descriptor.image,
            "labels": [],
        }
        try:
            self.dispatcher.create_step(payload)
        except Exception as exc:
            logger.warning("dispatch of instance %d failed: %s", instance.id, exc)
            self.store.update_instance(instance.id, status="ERROR",
                                       error=f"dispatch failed: {exc}")
            return
        self.store.update_instance(instance.id, status="DISPATCHED", step_id=step_key)

    def _refresh_instance(self, instance: PluginInstance) -> PluginInstance:
        """Poll the dispatcher for a non-terminal instance; monotonic update."""
        if instance.status in TERMINAL_STATUSES or not instance.step_id or self.dispatcher is None:
            return instance
        try:
            plan = self.dispatcher.get_step(instance.step_id)
        except DispatcherUnreachable:
            return instance
        except Exception as exc:
            logger.warning("refresh of instance %d failed: %s", instance.id, exc)
            return instance
        new_status = PHASE_TO_STATUS.get(plan.get("phase", ""), instance.status)
        if STATUS_RANK[new_status] <= STATUS_RANK[instance.status] and new_status != instance.status:
            return instance  # never move backwards
        if new_status != instance.status:
            error = None
            if new_status == "ERROR":
                stderr = base64.b64decode(plan.get("job_stderr_b64", ""))
                error = plan.get("diagnostic") or "step failed"
                if stderr:
                    error += " | stderr: " + stderr[-2048:].decode("utf-8", errors="replace")
            self.store.update_instance(instance.id, status=new_status, error=error)
            instance = self.store.get_instance(instance.id)
        if instance.status == "SUCCESS" and not instance.analyzed:
            try:
                self.structured_analysis(instance.id)
            except Exception:
                logger.exception("structured analysis of instance %d failed", instance.id)
        return instance

    def get_instance(self, user: User, instance_id: int) -> PluginInstance:
        instance = self.store.get_instance(instance_id)
        self._feed_for(user, instance.feed_id)
        return self._refresh_instance(instance)

    def cancel_instance(self, user: User, instance_id: int) -> PluginInstance:
        instance = self.store.get_instance(instance_id)
        self._feed_for(user, instance.feed_id)
        all_instances = self.store.instances_for_feed(instance.feed_id)
        children: dict[int | None, list[PluginInstance]] = {}
        for node in all_instances:
            children.setdefault(node.parent_id, []).append(node)
        # cancelling a node cancels its not-yet-terminal descendants
        targets, queue = [], [instance]
        while queue:
            node = queue.pop()
            targets.append(node)
            queue.extend(children.get(node.id, []))
        for node in targets:
            node = self._refresh_instance(node)
            if node.status in TERMINAL_STATUSES:
                continue
            if node.step_id and self.dispatcher is not None:
                try:
                    self.dispatcher.cancel_step(node.step_id)
                except Exception as exc:
                    logger.warning("cancel of step %s failed: %s", node.step_id, exc)
            self.store.update_instance(node.id, status="CANCELLED")
        return self.store.get_instance(instance_id)

    # -- feed tree ------------------------------------------------------------------------------

    @staticmethod
    def _dir_listing(root: str) -> list[str]:
        base = Path(root)
        if not base.is_dir():
            return []
        return sorted(
            p.relative_to(base).as_posix() for p in base.rglob("*") if p.is_file()
        )

    def get_feed_tree(self, user: User, feed_id: int) -> dict:
        feed = self._feed_for(user, feed_id)
        instances = [self._refresh_instance(i) for i in self.store.instances_for_feed(feed.id)]
        plugins = {p.id: p for p in self.store.list_plugins()}
        children: dict[int | None, list[PluginInstance]] = {}
        for instance in instances:
            children.setdefault(instance.parent_id, []).append(instance)

        nodes = [{
            "node_id": "root",
            "kind": "data",
            "parent_id": None,
            "status": "SUCCESS",
            "depth": 0,
            "title": feed.title,
            "output_files": self._dir_listing(feed.root_dir),
        }]

        def visit(parent_key: int | None, depth: int):
            for instance in sorted(children.get(parent_key, []), key=lambda i: i.id):
                plugin = plugins.get(instance.plugin_id)
                nodes.append({
                    "node_id": instance.id,
                    "kind": "plugin",
                    "parent_id": "root" if instance.parent_id is None else instance.parent_id,
                    "status": instance.status,
                    "depth": depth,
                    "plugin": f"{plugin.name}@{plugin.version}" if plugin else "?",
                    "params": instance.params,
                    "error": instance.error,
                    "output_files": self._dir_listing(instance.output_dir),
                })
                visit(instance.id, depth + 1)

        visit(None, 1)
        return {"feed": feed.to_json(for_user=user.id), "nodes": nodes}

    # -- structured analysis ------------------------------------------------------------------------

    def structured_analysis(self, instance_id: int) -> tuple[list[MetadataRecord], int]:
        instance = self.store.get_instance(instance_id)
        if instance.status != "SUCCESS":
            raise CoreError(f"instance {instance_id} is {instance.status}, not SUCCESS")
        feed = self.store.get_feed(instance.feed_id)
        results_path = Path(instance.output_dir) / RESULTS_FILENAME
        records: list[MetadataRecord] = []
        warnings = 0
        if results_path.is_file():
            entries: dict[str, object] = {}
            with open(results_path, "r", encoding="utf-8") as fh:
                for line in fh:
                    line = line.rstrip("\n")
                    if not line:
                        continue
                    parts = line.split("\t")
                    if len(parts) != 2 or not parts[0]:
                        warnings += 1  # malformed row: skipped and counted
                        continue
                    key, raw = parts
                    try:
                        value: object = float(raw)
                    except ValueError:
                        value = raw
                    entries[key] = value
            records.append(MetadataRecord(
                image_id=feed.study_uid,
                source=SOURCE_ANALYSIS,
                provenance=str(instance.id),
                entries=entries,
            ))
            self.index.add_records(records)
        self.store.update_instance(instance.id, analyzed=True)
        if warnings:
            logger.warning("instance %d: %d malformed result row(s) skipped", instance_id, warnings)
        return records, warnings

    # -- metadata query --------------------------------------------------------------------------------

    def query_metadata(self, predicates: list[Predicate]) -> list[dict]:
        results = self.index.query(predicates)
        return [{"record_id": rid, **record.to_json()} for rid, record in results]

    # -- PACS activity ------------------------------------------------------------------------------------

    def _pacs_session(self) -> str:
        if self.config.pacs_url is None:
            raise CoreError("no PACS configured")
        if self._pacs_token is None:
            self._pacs_token = pacs_authenticate(
                self.config.pacs_url, self.config.pacs_account, self.config.pacs_secret
            )
        return self._pacs_token

    def pacs_query(self, spec: QuerySpec) -> list[dict]:
        token = self._pacs_session()
        try:
            return query_studies(self.config.pacs_url, token, spec)
        except PacsTokenExpired:
            self._pacs_token = None
            return query_studies(self.config.pacs_url, self._pacs_session(), spec)

    def pacs_pull(self, user: User, study_uid: str, title: str) -> Feed:
        if self.config.pacs_url is None:
            raise CoreError("no PACS configured")
        try:
            receipt = pull_study(
                self.config.pacs_url, self.config.pacs_account, self.config.pacs_secret,
                study_uid, self.config.anon_policy, self.data_dir,
            )
        except DuplicatePull:
            # study already on the data node: attach a feed for this user
            from ..pacs.client import expected_anon_study_uid, receipt_from_study_dir

            anon_uid = expected_anon_study_uid(self.config.anon_policy, study_uid)
            receipt = receipt_from_study_dir(self.data_dir / anon_uid)
        return self.create_feed_from_pull(user, title, receipt)
