"""Service configuration from a TOML file plus environment overrides.

The provider key can be supplied as MORPHCOLLECT_PROVIDER_KEY so secrets stay
out of config files; it is never logged.
"""
from __future__ import annotations

import os
from dataclasses import dataclass, field
from typing import Optional

try:
    import tomllib
except ModuleNotFoundError:  # Python 3.10
    import tomli as tomllib

from .errors import ConfigError

PROVIDER_KEY_ENV = "MORPHCOLLECT_PROVIDER_KEY"


@dataclass
class UserSeed:
    name: str
    role: str  # Linguist | Speaker
    expertise: str = "NonExpert"
    designated_expert: bool = False
    token: str = ""


@dataclass
class AppConfig:
    host: str = "127.0.0.1"
    port: int = 8000
    database: str = "morphcollect.db"
    provider_endpoint: str = ""
    provider_model: str = ""
    provider_key: str = ""
    n_train: int = 100
    delta_n: int = 100
    expert_quorum: int = 3
    shots: int = 2
    min_shots: int = 2
    train_seed: int = 0
    frontend_dir: str = ""
    users: list[UserSeed] = field(default_factory=list)


def load_config(path: Optional[str] = None) -> AppConfig:
    config = AppConfig()
    if path:
        try:
            with open(path, "rb") as fp:
                data = tomllib.load(fp)
        except FileNotFoundError:
            raise ConfigError(f"config file not found: {path}")
        except tomllib.TOMLDecodeError as e:
            raise ConfigError(f"bad config file {path}: {e}")
        server = data.get("server", {})
        config.host = server.get("host", config.host)
        config.port = int(server.get("port", config.port))
        config.database = server.get("database", config.database)
        config.frontend_dir = server.get("frontend_dir", config.frontend_dir)
        provider = data.get("provider", {})
        config.provider_endpoint = provider.get("endpoint", "")
        config.provider_model = provider.get("model", "")
        config.provider_key = provider.get("key", "")
        learning = data.get("learning", {})
        config.n_train = int(learning.get("n_train", config.n_train))
        config.delta_n = int(learning.get("delta_n", config.delta_n))
        config.expert_quorum = int(learning.get("expert_quorum", config.expert_quorum))
        config.shots = int(learning.get("shots", config.shots))
        config.min_shots = int(learning.get("min_shots", config.min_shots))
        config.train_seed = int(learning.get("train_seed", config.train_seed))
        for raw in data.get("users", []):
            try:
                config.users.append(UserSeed(**raw))
            except TypeError as e:
                raise ConfigError(f"bad user entry {raw}: {e}")
    if not 1 <= config.shots <= 3:
        raise ConfigError("shots must be between 1 and 3")
    env_key = os.environ.get(PROVIDER_KEY_ENV)
    if env_key:
        config.provider_key = env_key
    return config
