import json
import threading
from datetime import datetime, timedelta, timezone
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path

import pytest

from apptriage.corpus import LogRecord

FIXTURES = Path(__file__).parent / "fixtures"
T0 = datetime(2024, 2, 23, tzinfo=timezone.utc)


def rec(i=0, app_id="app-x", log_type="signin", ip="10.0.0.1", operation="Sign-in", resource="Azure Storage",
        result_code="0", actor="sp-x", **extra):
    return LogRecord(T0 + timedelta(seconds=i), app_id, log_type, ip, operation, resource, result_code, actor,
                     dict(extra))


@pytest.fixture
def fixture_text():
    def read(name):
        return (FIXTURES / name).read_text(encoding="utf-8")
    return read


class ScriptedServer:
    """Local HTTP server replaying a list of (status, body) replies; the last one repeats."""

    def __init__(self, replies):
        self.replies = list(replies)
        self.requests = []
        outer = self

        class Handler(BaseHTTPRequestHandler):
            def do_POST(self):
                length = int(self.headers.get("Content-Length", 0))
                outer.requests.append(json.loads(self.rfile.read(length) or b"null"))
                idx = min(len(outer.requests), len(outer.replies)) - 1
                status, body = outer.replies[idx]
                data = body if isinstance(body, bytes) else json.dumps(body).encode()
                self.send_response(status)
                self.send_header("Content-Type", "application/json")
                self.send_header("Content-Length", str(len(data)))
                self.end_headers()
                self.wfile.write(data)

            def log_message(self, *args):
                pass

        self.httpd = ThreadingHTTPServer(("127.0.0.1", 0), Handler)
        self.url = f"http://127.0.0.1:{self.httpd.server_address[1]}/"
        self.thread = threading.Thread(target=self.httpd.serve_forever, daemon=True)

    def __enter__(self):
        self.thread.start()
        return self

    def __exit__(self, *exc):
        self.httpd.shutdown()
        self.httpd.server_close()


@pytest.fixture
def scripted_server():
    return ScriptedServer


# acceptance reporting: one line per criterion in the terminal summary

_ACCEPTANCE = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n, title): acceptance criterion number and title")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None or report.when == "teardown" and not report.failed:
        return
    n, title = marker.args
    status, _, seconds, _ = _ACCEPTANCE.get(n, ("PASS", title, 0.0, ""))
    if report.failed:
        status = "FAIL"
    detail = "; ".join(str(v) for k, v in item.user_properties if k == "measured")
    _ACCEPTANCE[n] = (status, title, seconds + report.duration, detail)


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_ACCEPTANCE):
        status, title, seconds, detail = _ACCEPTANCE[n]
        extra = f" [{detail}]" if detail else ""
        terminalreporter.write_line(f"criterion {n:>2}: {status}  {title} ({seconds:.1f}s){extra}")
