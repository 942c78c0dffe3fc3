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

import unittest

from periscan.utils.http import build_request, build_response, \
    parse_request_path, parse_response


class TestHttp(unittest.TestCase):

    def test_request(self):
        request = build_request("2001:db8::1", "/api/tags", 11434)
        self.assertTrue(request.startswith(b"GET /api/tags HTTP/1.1\r\n"
                                           b"Host: [2001:db8::1]:11434\r\n"))
        self.assertTrue(request.endswith(b"\r\n\r\n"))
        self.assertEqual(parse_request_path(request), "/api/tags")
        self.assertIn(b"Host: example.org\r\n", build_request("example.org"))
        self.assertIsNone(parse_request_path(b"SSH-2.0-x\r\n"))
        self.assertIsNone(parse_request_path(b"GET /\r\n"))

    def test_response(self):
        response = parse_response(b"HTTP/1.1 401 Unauthorized\r\n"
                                  b"WWW-Authenticate: Basic realm=\"x\"\r\n"
                                  b"\r\n<html><title> Log\n in </title>",
                                  body_limit=64)
        self.assertEqual(response.status_code, 401)
        self.assertEqual(response.status_line, "HTTP/1.1 401 Unauthorized")
        self.assertEqual(response.header("www-authenticate"),
                         'Basic realm="x"')
        self.assertEqual(response.title, "Log in")
        self.assertIsNone(parse_response(b"220 ftp ready\r\n"))

    def test_malformed_responses(self):
        self.assertIsNone(parse_response(b""))
        self.assertIsNone(parse_response(build_request("2001:db8::1")))
        self.assertIsNone(parse_response(b"HTTP/1.1 OK\r\n\r\n"))

        bare = parse_response(b"HTTP/2 204")
        self.assertEqual((bare.status_code, bare.headers, bare.body),
                         (204, [], b""))
        self.assertIsNone(bare.title)

        odd = parse_response(b"HTTP/1.0 200 OK\r\nno colon here\r\n"
                             b"Server: a\r\nserver: b\r\n\r\n0123456789",
                             body_limit=4)
        self.assertEqual(odd.headers, [("Server", "a"), ("server", "b")])
        self.assertEqual(odd.header("SERVER"), "a")
        self.assertIsNone(odd.header("Location"))
        self.assertEqual(odd.body, b"0123")

    def test_build_response(self):
        raw = build_response(302, "Found", [("Location", "/ui/")], b"x")
        self.assertEqual(raw, b"HTTP/1.1 302 Found\r\nLocation: /ui/\r\n"
                              b"Content-Length: 1\r\n\r\nx")
        response = parse_response(raw)
        self.assertEqual(response.header("location"), "/ui/")
        self.assertEqual(response.header("content-length"), "1")
        self.assertEqual(response.body, b"x")


if __name__ == '__main__':
    unittest.main()
