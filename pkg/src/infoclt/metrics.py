from __future__ import annotations

import threading

from prometheus_client import Counter, start_http_server


runs_total = Counter("infoclt_runs_total", "Total CLI runs", ["command"])
checks_total = Counter("infoclt_checks_total", "Total inequality checks evaluated", ["check"])
check_failures_total = Counter("infoclt_check_failures_total", "Total failed inequality checks", ["check"])


def record_check(check: str, passed: bool):
    checks_total.labels(check=check).inc()
    if not passed:
        check_failures_total.labels(check=check).inc()


def start_metrics_server_if_enabled(enabled: bool, port: int):
    if not enabled:
        return

    def _run():
        start_http_server(port)

    t = threading.Thread(target=_run, daemon=True)
    t.start()
