"""Embedded persistence for the core backend: SQLite in WAL mode.

One connection guarded by an RLock; every public method is one
transaction. Feeds, users, plugins, and instances live here; metadata
records live in the MetadataIndex (same database file).
"""

from __future__ import annotations

import hashlib
import json
import secrets
import sqlite3
import threading
import time
from pathlib import Path

from .errors import (
    DuplicatePlugin,
    DuplicateStudyFeed,
    UnknownFeed,
    UnknownInstance,
    UnknownPlugin,
    UnknownUser,
)
from .models import (
    Comment,
    Feed,
    ParamSpec,
    PluginDescriptor,
    PluginInstance,
    User,
)

_SCHEMA = """
CREATE TABLE IF NOT EXISTS users (
    id INTEGER PRIMARY KEY AUTOINCREMENT,
    login TEXT NOT NULL UNIQUE,
    secret_digest TEXT NOT NULL,
    role TEXT NOT NULL
);
CREATE TABLE IF NOT EXISTS feeds (
    id INTEGER PRIMARY KEY AUTOINCREMENT,
    owner_id INTEGER NOT NULL REFERENCES users(id),
    title TEXT NOT NULL,
    created REAL NOT NULL,
    study_uid TEXT NOT NULL,
    root_dir TEXT NOT NULL,
    UNIQUE (owner_id, study_uid)
);
CREATE TABLE IF NOT EXISTS feed_tags (
    feed_id INTEGER NOT NULL REFERENCES feeds(id),
    tag TEXT NOT NULL,
    UNIQUE (feed_id, tag)
);
CREATE TABLE IF NOT EXISTS feed_shares (
    feed_id INTEGER NOT NULL REFERENCES feeds(id),
    user_id INTEGER NOT NULL REFERENCES users(id),
    UNIQUE (feed_id, user_id)
);
CREATE TABLE IF NOT EXISTS feed_bookmarks (
    feed_id INTEGER NOT NULL REFERENCES feeds(id),
    user_id INTEGER NOT NULL REFERENCES users(id),
    UNIQUE (feed_id, user_id)
);
CREATE TABLE IF NOT EXISTS feed_comments (
    id INTEGER PRIMARY KEY AUTOINCREMENT,
    feed_id INTEGER NOT NULL REFERENCES feeds(id),
    author_id INTEGER NOT NULL REFERENCES users(id),
    created REAL NOT NULL,
    text TEXT NOT NULL
);
CREATE TABLE IF NOT EXISTS plugins (
    id INTEGER PRIMARY KEY AUTOINCREMENT,
    name TEXT NOT NULL,
    version TEXT NOT NULL,
    parameters_json TEXT NOT NULL,
    command_json TEXT NOT NULL,
    timeout_s REAL NOT NULL,
    image TEXT,
    UNIQUE (name, version)
);
CREATE TABLE IF NOT EXISTS instances (
    id INTEGER PRIMARY KEY AUTOINCREMENT,
    feed_id INTEGER NOT NULL REFERENCES feeds(id),
    plugin_id INTEGER NOT NULL REFERENCES plugins(id),
    parent_id INTEGER REFERENCES instances(id),
    params_json TEXT NOT NULL,
    status TEXT NOT NULL,
    input_dir TEXT NOT NULL,
    output_dir TEXT NOT NULL,
    step_id TEXT,
    created REAL NOT NULL,
    updated REAL NOT NULL,
    error TEXT,
    analyzed INTEGER NOT NULL DEFAULT 0
);
"""


def _hash_secret(secret: str, salt: bytes | None = None) -> str:
    salt = salt if salt is not None else secrets.token_bytes(16)
    digest = hashlib.pbkdf2_hmac("sha256", secret.encode("utf-8"), salt, 60_000)
    return f"{salt.hex()}${digest.hex()}"


def _verify_secret(secret: str, stored: str) -> bool:
    salt_hex, _, digest_hex = stored.partition("$")
    candidate = hashlib.pbkdf2_hmac("sha256", secret.encode("utf-8"), bytes.fromhex(salt_hex), 60_000)
    return secrets.compare_digest(candidate.hex(), digest_hex)


class Store:
    def __init__(self, db_path: Path | str):
        self._conn = sqlite3.connect(str(db_path), check_same_thread=False)
        self._conn.execute("PRAGMA journal_mode=WAL")
        self._conn.execute("PRAGMA foreign_keys=ON")
        self.lock = threading.RLock()
        with self.lock, self._conn:
            self._conn.executescript(_SCHEMA)

    def close(self) -> None:
        with self.lock:
            self._conn.close()

    # -- users -----------------------------------------------------------------

    def create_user(self, login: str, secret: str, role: str) -> User:
        with self.lock, self._conn:
            cursor = self._conn.execute(
                "INSERT INTO users (login, secret_digest, role) VALUES (?,?,?)",
                (login, _hash_secret(secret), role),
            )
            return User(cursor.lastrowid, login, role)

    def verify_login(self, login: str, secret: str) -> User | None:
        with self.lock:
            row = self._conn.execute(
                "SELECT id, login, secret_digest, role FROM users WHERE login=?", (login,)
            ).fetchone()
        if row is None:
            _verify_secret(secret, _hash_secret("timing-burn"))  # uniform timing
            return None
        if not _verify_secret(secret, row[2]):
            return None
        return User(row[0], row[1], row[3])

    def get_user(self, user_id: int) -> User:
        with self.lock:
            row = self._conn.execute(
                "SELECT id, login, role FROM users WHERE id=?", (user_id,)
            ).fetchone()
        if row is None:
            raise UnknownUser(f"no user {user_id}")
        return User(*row)

    def get_user_by_login(self, login: str) -> User:
        with self.lock:
            row = self._conn.execute(
                "SELECT id, login, role FROM users WHERE login=?", (login,)
            ).fetchone()
        if row is None:
            raise UnknownUser(f"no user named {login!r}")
        return User(*row)

    def count_users(self) -> int:
        with self.lock:
            return self._conn.execute("SELECT COUNT(*) FROM users").fetchone()[0]

    # -- feeds -------------------------------------------------------------------

    def create_feed(self, owner: User, title: str, study_uid: str, root_dir: str) -> Feed:
        now = time.time()
        with self.lock, self._conn:
            try:
                cursor = self._conn.execute(
                    "INSERT INTO feeds (owner_id, title, created, study_uid, root_dir)"
                    " VALUES (?,?,?,?,?)",
                    (owner.id, title, now, study_uid, root_dir),
                )
            except sqlite3.IntegrityError:
                raise DuplicateStudyFeed(
                    f"user {owner.login!r} already has a feed for study {study_uid}"
                ) from None
            return self.get_feed(cursor.lastrowid)

    def get_feed(self, feed_id: int) -> Feed:
        with self.lock:
            row = self._conn.execute(
                "SELECT f.id, f.owner_id, u.login, f.title, f.created, f.study_uid, f.root_dir"
                " FROM feeds f JOIN users u ON u.id = f.owner_id WHERE f.id=?",
                (feed_id,),
            ).fetchone()
            if row is None:
                raise UnknownFeed(f"no feed {feed_id}")
            feed = Feed(
                id=row[0], owner_id=row[1], owner_login=row[2], title=row[3],
                created=row[4], study_uid=row[5], root_dir=row[6],
            )
            feed.tags = {
                tag for (tag,) in self._conn.execute(
                    "SELECT tag FROM feed_tags WHERE feed_id=?", (feed_id,)
                )
            }
            feed.shared_with = {
                uid for (uid,) in self._conn.execute(
                    "SELECT user_id FROM feed_shares WHERE feed_id=?", (feed_id,)
                )
            }
            feed.bookmarked_by = {
                uid for (uid,) in self._conn.execute(
                    "SELECT user_id FROM feed_bookmarks WHERE feed_id=?", (feed_id,)
                )
            }
            feed.comments = [
                Comment(author, created, text)
                for author, created, text in self._conn.execute(
                    "SELECT u.login, c.created, c.text FROM feed_comments c"
                    " JOIN users u ON u.id = c.author_id WHERE c.feed_id=? ORDER BY c.created, c.id",
                    (feed_id,),
                )
            ]
            return feed

    def list_feeds_for(self, user_id: int) -> list[Feed]:
        with self.lock:
            ids = [
                fid for (fid,) in self._conn.execute(
                    "SELECT DISTINCT f.id FROM feeds f"
                    " LEFT JOIN feed_shares s ON s.feed_id = f.id"
                    " WHERE f.owner_id=? OR s.user_id=? ORDER BY f.id",
                    (user_id, user_id),
                )
            ]
            return [self.get_feed(fid) for fid in ids]

    def add_share(self, feed_id: int, user_id: int) -> None:
        with self.lock, self._conn:
            self._conn.execute(
                "INSERT OR IGNORE INTO feed_shares (feed_id, user_id) VALUES (?,?)",
                (feed_id, user_id),
            )

    def add_tag(self, feed_id: int, tag: str) -> None:
        with self.lock, self._conn:
            self._conn.execute(
                "INSERT OR IGNORE INTO feed_tags (feed_id, tag) VALUES (?,?)", (feed_id, tag)
            )

    def add_comment(self, feed_id: int, author_id: int, text: str) -> None:
        with self.lock, self._conn:
            self._conn.execute(
                "INSERT INTO feed_comments (feed_id, author_id, created, text) VALUES (?,?,?,?)",
                (feed_id, author_id, time.time(), text),
            )

    def toggle_bookmark(self, feed_id: int, user_id: int) -> bool:
        with self.lock, self._conn:
            cursor = self._conn.execute(
                "DELETE FROM feed_bookmarks WHERE feed_id=? AND user_id=?", (feed_id, user_id)
            )
            if cursor.rowcount:
                return False
            self._conn.execute(
                "INSERT INTO feed_bookmarks (feed_id, user_id) VALUES (?,?)", (feed_id, user_id)
            )
            return True

    # -- plugins -----------------------------------------------------------------

    def add_plugin(self, descriptor: PluginDescriptor) -> PluginDescriptor:
        with self.lock, self._conn:
            try:
                cursor = self._conn.execute(
                    "INSERT INTO plugins (name, version, parameters_json, command_json,"
                    " timeout_s, image) VALUES (?,?,?,?,?,?)",
                    (
                        descriptor.name,
                        descriptor.version,
                        json.dumps([p.to_json() for p in descriptor.parameters]),
                        json.dumps(descriptor.command),
                        descriptor.timeout_s,
                        descriptor.image,
                    ),
                )
            except sqlite3.IntegrityError:
                raise DuplicatePlugin(
                    f"plugin {descriptor.name} v{descriptor.version} already registered"
                ) from None
            descriptor.id = cursor.lastrowid
            return descriptor

    def _plugin_from_row(self, row) -> PluginDescriptor:
        return PluginDescriptor(
            id=row[0],
            name=row[1],
            version=row[2],
            parameters=[ParamSpec.from_json(p) for p in json.loads(row[3])],
            command=json.loads(row[4]),
            timeout_s=row[5],
            image=row[6],
        )

    def get_plugin(self, plugin_id: int) -> PluginDescriptor:
        with self.lock:
            row = self._conn.execute(
                "SELECT id, name, version, parameters_json, command_json, timeout_s, image"
                " FROM plugins WHERE id=?",
                (plugin_id,),
            ).fetchone()
        if row is None:
            raise UnknownPlugin(f"no plugin {plugin_id}")
        return self._plugin_from_row(row)

    def list_plugins(self) -> list[PluginDescriptor]:
        with self.lock:
            rows = self._conn.execute(
                "SELECT id, name, version, parameters_json, command_json, timeout_s, image"
                " FROM plugins ORDER BY name, version"
            ).fetchall()
        return [self._plugin_from_row(row) for row in rows]

    # -- instances -----------------------------------------------------------------

    def create_instance(
        self, feed_id: int, plugin_id: int, parent_id: int | None, params: dict,
        input_dir: str, output_dir: str,
    ) -> PluginInstance:
        now = time.time()
        with self.lock, self._conn:
            cursor = self._conn.execute(
                "INSERT INTO instances (feed_id, plugin_id, parent_id, params_json, status,"
                " input_dir, output_dir, step_id, created, updated)"
                " VALUES (?,?,?,?,?,?,?,?,?,?)",
                (feed_id, plugin_id, parent_id, json.dumps(params), "CREATED",
                 input_dir, output_dir, None, now, now),
            )
            return self.get_instance(cursor.lastrowid)

    def _instance_from_row(self, row) -> PluginInstance:
        return PluginInstance(
            id=row[0], feed_id=row[1], plugin_id=row[2], parent_id=row[3],
            params=json.loads(row[4]), status=row[5], input_dir=row[6], output_dir=row[7],
            step_id=row[8], created=row[9], updated=row[10], error=row[11],
            analyzed=bool(row[12]),
        )

    _INSTANCE_COLS = (
        "id, feed_id, plugin_id, parent_id, params_json, status, input_dir, output_dir,"
        " step_id, created, updated, error, analyzed"
    )

    def get_instance(self, instance_id: int) -> PluginInstance:
        with self.lock:
            row = self._conn.execute(
                f"SELECT {self._INSTANCE_COLS} FROM instances WHERE id=?", (instance_id,)
            ).fetchone()
        if row is None:
            raise UnknownInstance(f"no plugin instance {instance_id}")
        return self._instance_from_row(row)

    def instances_for_feed(self, feed_id: int) -> list[PluginInstance]:
        with self.lock:
            rows = self._conn.execute(
                f"SELECT {self._INSTANCE_COLS} FROM instances WHERE feed_id=? ORDER BY id",
                (feed_id,),
            ).fetchall()
        return [self._instance_from_row(row) for row in rows]

    def update_instance(self, instance_id: int, *, status: str | None = None,
                        step_id: str | None = None, error: str | None = None,
                        analyzed: bool | None = None, output_dir: str | None = None) -> None:
        sets, params = ["updated=?"], [time.time()]
        if status is not None:
            sets.append("status=?")
            params.append(status)
        if output_dir is not None:
            sets.append("output_dir=?")
            params.append(output_dir)
        if step_id is not None:
            sets.append("step_id=?")
            params.append(step_id)
        if error is not None:
            sets.append("error=?")
            params.append(error)
        if analyzed is not None:
            sets.append("analyzed=?")
            params.append(1 if analyzed else 0)
        params.append(instance_id)
        with self.lock, self._conn:
            self._conn.execute(f"UPDATE instances SET {', '.join(sets)} WHERE id=?", params)
