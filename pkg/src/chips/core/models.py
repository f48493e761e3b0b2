"""Core domain objects."""

from __future__ import annotations

from dataclasses import dataclass, field

from .errors import ParamValidation, SchemaInvalid

ROLES = ("CLINICIAN", "RESEARCHER", "ADMIN")

PARAM_TYPES = ("text", "int", "real", "flag", "choice")

INSTANCE_STATUSES = ("CREATED", "DISPATCHED", "RUNNING", "SUCCESS", "ERROR", "CANCELLED")
TERMINAL_STATUSES = frozenset({"SUCCESS", "ERROR", "CANCELLED"})
# monotonic progression guard: a status may only move to a higher rank
STATUS_RANK = {"CREATED": 0, "DISPATCHED": 1, "RUNNING": 2, "SUCCESS": 3, "ERROR": 3, "CANCELLED": 3}


@dataclass
class User:
    id: int
    login: str
    role: str

    def to_json(self) -> dict:
        return {"id": self.id, "login": self.login, "role": self.role}


@dataclass
class Comment:
    author: str
    created: float
    text: str

    def to_json(self) -> dict:
        return {"author": self.author, "created": self.created, "text": self.text}


@dataclass
class Feed:
    id: int
    owner_id: int
    owner_login: str
    title: str
    created: float
    study_uid: str
    root_dir: str
    tags: set[str] = field(default_factory=set)
    shared_with: set[int] = field(default_factory=set)
    comments: list[Comment] = field(default_factory=list)
    bookmarked_by: set[int] = field(default_factory=set)

    def accessible_by(self, user_id: int) -> bool:
        return user_id == self.owner_id or user_id in self.shared_with

    def to_json(self, for_user: int | None = None) -> dict:
        return {
            "id": self.id,
            "owner": self.owner_login,
            "title": self.title,
            "created": self.created,
            "study_uid": self.study_uid,
            "tags": sorted(self.tags),
            "shared_with": sorted(self.shared_with),
            "comments": [c.to_json() for c in self.comments],
            "bookmarked": for_user in self.bookmarked_by if for_user is not None else False,
        }


@dataclass
class ParamSpec:
    name: str
    type: str
    required: bool = False
    default: object | None = None
    choices: list[str] | None = None

    def validate_schema(self) -> None:
        if not self.name:
            raise SchemaInvalid("parameter with empty name")
        if self.type not in PARAM_TYPES:
            raise SchemaInvalid(f"parameter {self.name!r} has unknown type {self.type!r}")
        if self.type == "choice" and not self.choices:
            raise SchemaInvalid(f"choice parameter {self.name!r} lists no choices")
        if not self.required and self.default is None:
            raise SchemaInvalid(
                f"parameter {self.name!r} is optional but has no default (unresolvable)"
            )

    def coerce(self, value):
        try:
            if self.type == "int":
                if isinstance(value, bool):
                    raise ValueError("flag given for int")
                return int(value)
            if self.type == "real":
                return float(value)
            if self.type == "flag":
                if isinstance(value, bool):
                    return value
                if str(value).lower() in ("true", "1", "yes"):
                    return True
                if str(value).lower() in ("false", "0", "no"):
                    return False
                raise ValueError(f"not a flag: {value!r}")
            if self.type == "choice":
                value = str(value)
                if value not in (self.choices or []):
                    raise ValueError(f"{value!r} not among {self.choices}")
                return value
            return str(value)
        except (TypeError, ValueError) as exc:
            raise ParamValidation(f"parameter {self.name!r}: {exc}") from exc

    def to_json(self) -> dict:
        return {
            "name": self.name,
            "type": self.type,
            "required": self.required,
            "default": self.default,
            "choices": self.choices,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "ParamSpec":
        return cls(
            name=obj.get("name", ""),
            type=obj.get("type", ""),
            required=bool(obj.get("required", False)),
            default=obj.get("default"),
            choices=obj.get("choices"),
        )


@dataclass
class PluginDescriptor:
    id: int
    name: str
    version: str
    parameters: list[ParamSpec]
    command: list[str]  # template argv: {input}, {output}, {param:NAME} placeholders
    timeout_s: float = 300.0
    image: str | None = None

    def validate_schema(self) -> None:
        if not self.name or not self.version:
            raise SchemaInvalid("plugin needs a name and a version")
        if not self.command:
            raise SchemaInvalid("plugin needs a command template")
        seen = set()
        for param in self.parameters:
            param.validate_schema()
            if param.name in seen:
                raise SchemaInvalid(f"duplicate parameter {param.name!r}")
            seen.add(param.name)

    def resolve_params(self, given: dict) -> dict:
        """Validate user-supplied values against the schema; apply defaults."""
        known = {p.name: p for p in self.parameters}
        unknown = set(given) - set(known)
        if unknown:
            raise ParamValidation(f"unknown parameter(s): {sorted(unknown)}")
        resolved = {}
        for name, spec in known.items():
            if name in given:
                resolved[name] = spec.coerce(given[name])
            elif spec.required:
                raise ParamValidation(f"missing required parameter {name!r}")
            else:
                resolved[name] = spec.coerce(spec.default)
        return resolved

    def render_command(self, params: dict) -> list[str]:
        argv = []
        for part in self.command:
            rendered = part.replace("{input}", "input").replace("{output}", "output")
            for name, value in params.items():
                if isinstance(value, bool):
                    value = "1" if value else "0"
                rendered = rendered.replace(f"{{param:{name}}}", str(value))
            argv.append(rendered)
        return argv

    def to_json(self) -> dict:
        return {
            "id": self.id,
            "name": self.name,
            "version": self.version,
            "parameters": [p.to_json() for p in self.parameters],
            "command": list(self.command),
            "timeout_s": self.timeout_s,
            "image": self.image,
        }


@dataclass
class PluginInstance:
    id: int
    feed_id: int
    plugin_id: int
    parent_id: int | None  # None: child of the feed's root data node
    params: dict
    status: str
    input_dir: str
    output_dir: str
    step_id: str | None
    created: float
    updated: float
    error: str | None = None
    analyzed: bool = False

    def to_json(self) -> dict:
        return {
            "id": self.id,
            "feed_id": self.feed_id,
            "plugin_id": self.plugin_id,
            "parent_id": self.parent_id,
            "params": dict(self.params),
            "status": self.status,
            "input_dir": self.input_dir,
            "output_dir": self.output_dir,
            "step_id": self.step_id,
            "created": self.created,
            "updated": self.updated,
            "error": self.error,
        }
