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
import unittest

from os.path import join
from tempfile import TemporaryDirectory
from unittest.mock import patch

from periscan.utils.config import ScanConfig, load_config, \
    load_config_file, load_env_config, periscan_section
from periscan.utils.exceptions import ConfigurationError


@patch("periscan.utils.config.init_log")
class TestConfigFiles(unittest.TestCase):

    def setUp(self):
        self.tmp = TemporaryDirectory()

    def tearDown(self):
        self.tmp.cleanup()

    def _write(self, name: str, text: str) -> str:
        path = join(self.tmp.name, name)
        with open(path, "w") as f:
            f.write(text)
        return path

    def test_json_and_yaml(self, init_log):
        path = self._write("config.json", json.dumps(
            {"PERISCAN": {"rate": 10}}))
        self.assertEqual(load_config_file(path), {"PERISCAN": {"rate": 10}})
        init_log.assert_called_once_with(config={"PERISCAN": {"rate": 10}})

        path = self._write("config.yaml", "PERISCAN:\n  rate: 20\n")
        self.assertEqual(load_config_file(path), {"PERISCAN": {"rate": 20}})
        self.assertEqual(load_config_file(self._write("empty.yml", "")),
                         dict())

    def test_invalid_files(self, init_log):
        with self.assertRaises(ConfigurationError):
            load_config_file(join(self.tmp.name, "missing.json"))
        with self.assertRaises(ConfigurationError):
            load_config_file(self._write("broken.json", "{"))
        with self.assertRaises(ConfigurationError):
            load_config_file(self._write("broken.yaml", "a: [1"))
        init_log.assert_not_called()

    def test_env_config(self, init_log):
        path = self._write("env.yaml", "PERISCAN:\n  seed: 3\n")
        with patch.dict(os.environ, {"PERISCAN_CONFIG": path}):
            self.assertEqual(load_env_config(), {"PERISCAN": {"seed": 3}})
            self.assertEqual(load_config(), {"PERISCAN": {"seed": 3}})
        with patch.dict(os.environ, {"PERISCAN_CONFIG": path + ".missing"}):
            self.assertIsNone(load_env_config())

    @patch("periscan.utils.config.load_ovos_config")
    def test_default_fallback(self, ovos_config, init_log):
        ovos_config.__name__ = "Configuration"
        ovos_config.return_value = dict()
        with patch.dict(os.environ, {"PERISCAN_CONFIG": ""}):
            config = load_config()
        self.assertEqual(config["PERISCAN"]["backend"], "sim")
        ovos_config.assert_called_once()

        ovos_config.return_value = {"PERISCAN": {"rate": 5}}
        with patch.dict(os.environ, {"PERISCAN_CONFIG": ""}):
            self.assertEqual(load_config(), {"PERISCAN": {"rate": 5}})


class TestPeriscanSection(unittest.TestCase):

    def test_defaults(self):
        section = periscan_section(None)
        self.assertEqual(section["rate"], 1000)
        self.assertEqual(section["rgps"]["tau"], 120.0)
        self.assertEqual(periscan_section({"MQ": {}}), section)

    def test_nested_merge(self):
        section = periscan_section({"PERISCAN": {"rgps": {"tau": 10},
                                                 "rate": 50}})
        self.assertEqual(section["rate"], 50)
        self.assertEqual(section["rgps"]["tau"], 10)
        self.assertEqual(section["rgps"]["child_len"], 28)
        self.assertEqual(section["loops"]["trials"], 2)
        self.assertEqual(periscan_section(None)["rgps"]["tau"], 120.0)


class TestScanConfig(unittest.TestCase):

    def test_defaults(self):
        config = ScanConfig.from_config(None)
        self.assertEqual((config.backend, config.rate, config.timeout,
                          config.retries, config.seed),
                         ("sim", 1000, 5.0, 1, 1))
        self.assertFalse(config.live_enabled)
        self.assertIsNone(config.source_address)

    def test_overrides(self):
        config = ScanConfig.from_config({"PERISCAN": {"rate": 50,
                                                      "retries": 0}},
                                        rate=10, seed=None, timeout=2.0)
        self.assertEqual((config.rate, config.retries, config.timeout,
                          config.seed), (10, 0, 2.0, 1))

    def test_invalid(self):
        for overrides in ({"rate": 0}, {"backend": "raw"},
                          {"timeout": 0}, {"retries": -1},
                          {"source_address": "10.0.0.1"}):
            with self.assertRaises(ConfigurationError):
                ScanConfig.from_config(None, **overrides)


if __name__ == '__main__':
    unittest.main()
