# PERISCAN (TM) IPv6 Periphery Measurement Toolkit
# All trademark and other rights reserved by their respective owners
# Copyright 2025 Periscan Developers
# BSD-3 License
# Redistribution and use in source and binary forms, with or without
# modification, are permitted provided that the following conditions are met:
# 1. Redistributions of source code must retain the above copyright notice,
#    this list of conditions and the following disclaimer.
# 2. Redistributions in binary form must reproduce the above copyright notice,
#    this list of conditions and the following disclaimer in the documentation
#    and/or other materials provided with the distribution.
# 3. Neither the name of the copyright holder nor the names of its
#    contributors may be used to endorse or promote products derived from this
#    software without specific prior written permission.
# THIS SOFTWARE IS PROVIDED BY THE COPYRIGHT HOLDERS AND CONTRIBUTORS "AS IS"
# AND ANY EXPRESS OR IMPLIED WARRANTIES, INCLUDING, BUT NOT LIMITED TO,
# THE IMPLIED WARRANTIES OF MERCHANTABILITY AND FITNESS FOR A PARTICULAR
# PURPOSE ARE DISCLAIMED. IN NO EVENT SHALL THE COPYRIGHT HOLDER OR
# CONTRIBUTORS  BE LIABLE FOR ANY DIRECT, INDIRECT, INCIDENTAL, SPECIAL,
# EXEMPLARY, OR CONSEQUENTIAL DAMAGES (INCLUDING, BUT NOT LIMITED TO,
# PROCUREMENT OF SUBSTITUTE GOODS OR SERVICES; LOSS OF USE, DATA,
# OR PROFITS;  OR BUSINESS INTERRUPTION) HOWEVER CAUSED AND ON ANY THEORY OF
# LIABILITY, WHETHER IN CONTRACT, STRICT LIABILITY, OR TORT (INCLUDING
# NEGLIGENCE OR OTHERWISE) ARISING IN ANY WAY OUT OF THE USE OF THIS
# SOFTWARE,  EVEN IF ADVISED OF THE POSSIBILITY OF SUCH DAMAGE.

import json
import os

from copy import deepcopy
from ipaddress import IPv6Address
from os.path import join, dirname, isfile
from typing import Optional, Union

import yaml

from neon_utils.log_utils import init_log
from neon_utils.logger import LOG
from ovos_config.config import Configuration
from pydantic import BaseModel, ConfigDict, Field, ValidationError

from periscan.utils.constants import DEFAULT_RATE, DEFAULT_RETRIES, \
    DEFAULT_TIMEOUT, MAX_RATE
from periscan.utils.exceptions import ConfigurationError

CONFIG_SECTION = "PERISCAN"


def _packaged_defaults() -> dict:
    default_config_path = join(dirname(dirname(__file__)),
                               "default_config.json")
    with open(default_config_path) as f:
        return json.load(f)


def _read_config_file(path: str) -> dict:
    with open(path) as f:
        if path.endswith(".json"):
            return json.load(f)
        return yaml.safe_load(f) or dict()


def load_env_config() -> Union[dict, None]:
    config_path = os.getenv("PERISCAN_CONFIG")
    if config_path and isfile(config_path):
        config = _read_config_file(config_path)
        init_log(config=config)
        return config


def load_config_file(path: str) -> dict:
    """
    Read an explicit JSON or YAML configuration file
    :raises ConfigurationError: if the file is missing or unreadable
    """
    if not isfile(path):
        raise ConfigurationError(f"Config file not found: {path}")
    try:
        config = _read_config_file(path)
    except (OSError, ValueError, yaml.YAMLError) as e:
        raise ConfigurationError(f"Cannot read config {path}: {e}") from e
    init_log(config=config)
    return config


load_ovos_config = Configuration


def load_default_config() -> Union[dict, None]:
    LOG.warning(f"No configuration found! falling back to defaults")
    return _packaged_defaults()


def load_config() -> Union[dict, None]:
    """
    Load and return a configuration object,
    """
    configs_loading_order = (load_env_config, load_ovos_config,
                             load_default_config,)
    for config_loader in configs_loading_order:
        config = config_loader()
        if config:
            LOG.info(f'Applied configs from loader={config_loader.__name__}()')
            return config


def _merge(defaults: dict, overrides: dict) -> dict:
    merged = deepcopy(defaults)
    for key, value in overrides.items():
        if isinstance(value, dict) and isinstance(merged.get(key), dict):
            merged[key] = _merge(merged[key], value)
        else:
            merged[key] = value
    return merged


def periscan_section(config: Optional[dict] = None) -> dict:
    """
    Returns the `PERISCAN` section of `config` layered over the packaged
    defaults, so every consumer sees every key
    :param config: full configuration (as returned by `load_config`)
    """
    defaults = _packaged_defaults()
    section = (config or dict()).get(CONFIG_SECTION)
    if section is None:
        LOG.warning(f"No config for {CONFIG_SECTION} found in "
                    f"{list((config or dict()).keys())}")
        return defaults[CONFIG_SECTION]
    return _merge(defaults[CONFIG_SECTION], section)


class ScanConfig(BaseModel):
    """
    Typed view of the scan defaults shared by every measurement
    """
    model_config = ConfigDict(extra="ignore")

    backend: str = Field(default="sim", pattern="^(sim|live)$")
    rate: int = Field(default=DEFAULT_RATE, ge=1, le=MAX_RATE)
    timeout: float = Field(default=DEFAULT_TIMEOUT, gt=0)
    retries: int = Field(default=DEFAULT_RETRIES, ge=0, le=10)
    seed: int = Field(default=1, ge=0, lt=1 << 64)
    source_address: Optional[IPv6Address] = None
    live_enabled: bool = False

    @classmethod
    def from_config(cls, config: Optional[dict] = None, **overrides) \
            -> "ScanConfig":
        section = periscan_section(config)
        values = {k: v for k, v in section.items() if not isinstance(v, dict)}
        values.update({k: v for k, v in overrides.items() if v is not None})
        try:
            return cls.model_validate(values)
        except ValidationError as e:
            raise ConfigurationError(f"Invalid scan configuration: {e}") from e
