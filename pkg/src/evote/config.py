"""Service configuration file handling.

The config document is JSON: election_id, candidates, schema path, key
paths, node list, quorum, and listen address.  Relative paths resolve
against the config file's own directory.
"""

from __future__ import annotations

import json
import os
import secrets
from dataclasses import dataclass
from typing import Optional, Tuple

from .election import ElectionConfig, ElectionService
from .he import load_public_key
from .ledger import Ledger, NodeSet
from .schema import load_schema

ADMIN_TOKEN_ENV = "EVOTE_ADMIN_TOKEN"
SERVICE_LOCK_FILENAME = "service.lock"


class ConfigError(ValueError):
    pass


@dataclass
class ServiceConfig:
    election_id: str
    candidates: tuple
    schema_path: str
    public_key_path: str
    secret_key_path: Optional[str]
    data_dir: str
    listen_host: str
    listen_port: int
    node_ids: Optional[tuple]
    ack_quorum: Optional[int]
    admin_token: Optional[str]
    path: str


def load_service_config(path) -> ServiceConfig:
    path = os.path.abspath(path)
    base = os.path.dirname(path)

    def resolve(p):
        return p if os.path.isabs(p) else os.path.join(base, p)

    try:
        with open(path, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    try:
        election_id = doc["election_id"]
        candidates = tuple(doc["candidates"])
        schema_path = resolve(doc["schema"])
        keys = doc["keys"]
        public_key_path = resolve(keys["public"])
        data_dir = resolve(doc.get("data_dir", "data"))
        listen = doc.get("listen", "127.0.0.1:8080")
    except KeyError as exc:
        raise ConfigError(f"config missing field {exc}") from exc
    host, _, port = listen.rpartition(":")
    if not host or not port.isdigit():
        raise ConfigError(f"bad listen address {listen!r}; expected host:port")
    secret = keys.get("secret")
    nodes = doc.get("nodes")
    return ServiceConfig(
        election_id=election_id,
        candidates=candidates,
        schema_path=schema_path,
        public_key_path=public_key_path,
        secret_key_path=resolve(secret) if secret else None,
        data_dir=data_dir,
        listen_host=host,
        listen_port=int(port),
        node_ids=tuple(nodes) if nodes is not None else None,
        ack_quorum=doc.get("quorum"),
        admin_token=doc.get("admin_token") or os.environ.get(ADMIN_TOKEN_ENV),
        path=path,
    )


def write_service_config(path, doc: dict) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2)
        fh.write("\n")


def build_node_set(cfg: ServiceConfig) -> NodeSet:
    node_ids = cfg.node_ids
    if node_ids is None:
        node_ids = tuple(f"cand-{c}" for c in cfg.candidates)
    if cfg.ack_quorum is not None:
        return NodeSet(admin_node="admin", candidate_nodes=node_ids, ack_quorum=cfg.ack_quorum)
    return NodeSet.with_majority_quorum("admin", node_ids)


def build_service(
    cfg: ServiceConfig,
    kdf_cost: Optional[int] = None,
    allow_test_keys: bool = False,
) -> Tuple[ElectionService, str]:
    """Assemble the election service from a parsed config.

    Returns the service and the admin token (generated when the config
    and environment supply none; the caller must surface it)."""
    with open(cfg.schema_path, "r", encoding="utf-8") as fh:
        schema = load_schema(fh.read())
    public_key = load_public_key(cfg.public_key_path)
    ledger = Ledger(
        os.path.join(cfg.data_dir, "ledger"),
        candidates=cfg.candidates,
        nodes=build_node_set(cfg),
    )
    admin_token = cfg.admin_token or secrets.token_hex(16)
    election = ElectionConfig(
        election_id=cfg.election_id,
        candidates=cfg.candidates,
        schema=schema,
        public_key=public_key,
    )
    kwargs = {}
    if kdf_cost is not None:
        kwargs["kdf_cost"] = kdf_cost
    service = ElectionService(
        election,
        ledger,
        admin_token=admin_token,
        data_dir=cfg.data_dir,
        allow_test_keys=allow_test_keys,
        **kwargs,
    )
    return service, admin_token


def lock_path(data_dir: str) -> str:
    return os.path.join(data_dir, SERVICE_LOCK_FILENAME)


def acquire_service_lock(data_dir: str) -> str:
    path = lock_path(data_dir)
    if os.path.exists(path):
        raise ConfigError(f"service already running (lock file {path} exists)")
    os.makedirs(data_dir, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(str(os.getpid()))
    return path


def release_service_lock(data_dir: str) -> None:
    try:
        os.unlink(lock_path(data_dir))
    except FileNotFoundError:
        pass
