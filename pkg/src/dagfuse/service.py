"""Line-protocol request loop.

Requests arrive as lines ``REQ <model_id> <iterations> <class>
<input_ref>`` over a local stream socket (or stdin). Each is answered
immediately with ``ACK <request_id>`` or ``REJ <reason>``; completed
requests later produce ``DONE <request_id> <output_ref>``. Malformed
lines get ``ERR parse`` and the connection stays open.

Aggregation never blocks on execution: connection reader threads feed a
shared queue while a single execution lane plans and runs batches,
which is also what keeps per-connection reply order sane (ACK/REJ
always precedes any DONE for the same request).
"""

from __future__ import annotations

import logging
import socket
import threading
from pathlib import Path

from . import costmodel, model_io
from .repo import Repository
from .scheduler import (
    InferenceRequest,
    RequestQueue,
    ingest,
    plan_batches,
    run_plan,
)

logger = logging.getLogger(__name__)


class ServiceLoop:
    def __init__(
        self,
        repo: Repository,
        ct: costmodel.CostTable,
        budget_mib: float,
        quantum: int,
        out_dir,
        mode: str = costmodel.FUSED,
    ):
        self.repo = repo
        self.ct = ct
        self.budget_mib = budget_mib
        self.quantum = quantum
        self.out_dir = Path(out_dir)
        self.mode = mode
        self.queue = RequestQueue()
        self.run_logs = []
        self._replies: dict[str, object] = {}  # request_id -> reply writer
        self._req_counter = 0
        self._lock = threading.Lock()
        self._work = threading.Event()
        self._stop = threading.Event()
        self._executor_thread: threading.Thread | None = None
        self.out_dir.mkdir(parents=True, exist_ok=True)

    # -- protocol ------------------------------------------------------

    def handle_line(self, line: str, reply) -> str | None:
        """Parse one request line and reply immediately.

        Returns the request id when the line was accepted.
        """
        parts = line.strip().split()
        if not parts:
            return None
        if parts[0] != "REQ" or len(parts) != 5:
            reply("ERR parse")
            return None
        _, model_id, iterations_raw, uptime_class, input_ref = parts
        try:
            iterations = int(iterations_raw)
        except ValueError:
            reply("ERR parse")
            return None
        with self._lock:
            self._req_counter += 1
            request_id = f"req{self._req_counter:05d}"
        req = InferenceRequest(
            request_id=request_id,
            model_id=model_id,
            input_ref=input_ref,
            iterations_requested=iterations,
            uptime_class=uptime_class,
        )
        outcome = ingest(self.queue, req, self.repo)
        if outcome == "accepted":
            with self._lock:
                self._replies[request_id] = reply
            reply(f"ACK {request_id}")
            self._work.set()
            return request_id
        reason = next(
            (r.reason for r in reversed(self.queue.rejected)
             if r.request.request_id == request_id),
            "rejected",
        )
        reply(f"REJ {reason.replace(' ', '-')}")
        return None

    # -- execution lane --------------------------------------------------

    def _execute_pending(self) -> None:
        pending = self.queue.drain()
        if not pending:
            return
        classes: dict[str, str] = {}
        for req in pending:
            classes.setdefault(req.model_id, req.uptime_class)
        manifests = self.repo.get_many(sorted({r.model_id for r in pending}))
        plan = plan_batches(
            manifests,
            self.budget_mib,
            self.ct,
            quantum_iterations=self.quantum,
            uptime_classes=classes,
        )
        unschedulable = dict(plan.unschedulable)
        log = run_plan(plan, pending, self.repo, self.ct, self.mode)
        self.run_logs.append(log)
        for req in pending:
            if req.model_id in unschedulable:
                self._reply_to(req.request_id, f"REJ {unschedulable[req.model_id].replace(' ', '-')}")
                continue
            output = log.completed.get(req.request_id)
            if output is None:
                continue
            out_path = self.out_dir / f"{req.request_id}.json"
            model_io.save_tensor_json(output.values, output.spec.dims, out_path)
            self._reply_to(req.request_id, f"DONE {req.request_id} {out_path}")

    def _reply_to(self, request_id: str, message: str) -> None:
        with self._lock:
            reply = self._replies.pop(request_id, None)
        if reply is not None:
            try:
                reply(message)
            except OSError:
                logger.warning("could not deliver %r", message)

    def _executor_loop(self) -> None:
        while not self._stop.is_set():
            self._work.wait(timeout=0.05)
            self._work.clear()
            self._execute_pending()
        self._execute_pending()  # drain after stop

    def start(self) -> None:
        self._executor_thread = threading.Thread(target=self._executor_loop, daemon=True)
        self._executor_thread.start()

    def stop(self) -> None:
        self._stop.set()
        self._work.set()
        if self._executor_thread is not None:
            self._executor_thread.join(timeout=30)

    # -- transports ------------------------------------------------------

    def serve_socket(self, socket_path, ready: threading.Event | None = None) -> None:
        """Accept connections on a unix stream socket until stopped."""
        socket_path = Path(socket_path)
        if socket_path.exists():
            socket_path.unlink()
        server = socket.socket(socket.AF_UNIX, socket.SOCK_STREAM)
        server.bind(str(socket_path))
        server.listen(16)
        server.settimeout(0.1)
        self.start()
        if ready is not None:
            ready.set()
        threads: list[threading.Thread] = []
        try:
            while not self._stop.is_set():
                try:
                    conn, _ = server.accept()
                except socket.timeout:
                    continue
                t = threading.Thread(target=self._connection_loop, args=(conn,), daemon=True)
                t.start()
                threads.append(t)
        finally:
            server.close()
            socket_path.unlink(missing_ok=True)
            self.stop()
            for t in threads:
                t.join(timeout=5)

    def _connection_loop(self, conn: socket.socket) -> None:
        import time

        write_lock = threading.Lock()

        def reply(message: str) -> None:
            with write_lock:
                conn.sendall((message + "\n").encode("utf-8"))

        accepted_here: set[str] = set()
        try:
            buffer = b""
            while True:
                chunk = conn.recv(4096)
                if not chunk:
                    break
                buffer += chunk
                while b"\n" in buffer:
                    line, buffer = buffer.split(b"\n", 1)
                    request_id = self.handle_line(line.decode("utf-8", "replace"), reply)
                    if request_id is not None:
                        accepted_here.add(request_id)
        except OSError:
            pass
        finally:
            # The client closed its write side; keep the socket alive
            # until every DONE owed to this connection went out.
            for _ in range(600):
                with self._lock:
                    owed = accepted_here & set(self._replies)
                if not owed:
                    break
                time.sleep(0.05)
            try:
                conn.shutdown(socket.SHUT_RDWR)
            except OSError:
                pass
            conn.close()

    def serve_stdin(self, stdin, stdout) -> None:
        """Line loop over stdio; EOF drains pending work, then returns."""
        write_lock = threading.Lock()

        def reply(message: str) -> None:
            with write_lock:
                stdout.write(message + "\n")
                stdout.flush()

        self.start()
        try:
            for line in stdin:
                self.handle_line(line, reply)
        finally:
            self.stop()
