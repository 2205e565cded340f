"""Line-protocol service loop."""

import socket
import threading

import pytest

from dagfuse import toygen
from dagfuse.model_io import load_tensor_json
from dagfuse.repo import Repository
from dagfuse.service import ServiceLoop


@pytest.fixture()
def served(tmp_path, default_ct):
    repo = Repository(tmp_path / "repo", default_ct)
    for i in range(2):
        g, w = toygen.mlp(f"svc{i}", 700 + i)
        repo.register_model(g, w, profile=(50, 1.0))
    loop = ServiceLoop(repo, default_ct, budget_mib=24_000, quantum=100,
                       out_dir=tmp_path / "out")
    sock_path = tmp_path / "dagfuse.sock"
    ready = threading.Event()
    thread = threading.Thread(target=loop.serve_socket, args=(sock_path, ready), daemon=True)
    thread.start()
    assert ready.wait(5)
    yield sock_path, loop
    loop._stop.set()
    thread.join(timeout=10)


class Client:
    def __init__(self, sock_path):
        self.sock = socket.socket(socket.AF_UNIX, socket.SOCK_STREAM)
        self.sock.connect(str(sock_path))
        self.file = self.sock.makefile("r")

    def send(self, line):
        self.sock.sendall((line + "\n").encode())

    def recv(self, timeout=10.0):
        self.sock.settimeout(timeout)
        return self.file.readline().strip()

    def close(self):
        self.sock.close()


def test_request_lifecycle(served, tmp_path):
    sock_path, _ = served
    client = Client(sock_path)
    client.send("REQ svc0 10 short zeros")
    ack = client.recv()
    assert ack.startswith("ACK ")
    request_id = ack.split()[1]
    done = client.recv()
    assert done.startswith(f"DONE {request_id} ")
    out_ref = done.split()[2]
    dims, values = load_tensor_json(out_ref)
    assert len(values) == int(__import__("numpy").prod(dims))
    client.close()


def test_reject_unknown_model(served):
    sock_path, _ = served
    client = Client(sock_path)
    client.send("REQ ghost 10 short zeros")
    assert client.recv() == "REJ unknown-model"
    client.close()


def test_malformed_line_keeps_connection(served):
    sock_path, _ = served
    client = Client(sock_path)
    client.send("HELLO world")
    assert client.recv() == "ERR parse"
    client.send("REQ svc0 not-a-number short zeros")
    assert client.recv() == "ERR parse"
    client.send("REQ svc0 5 short zeros")
    assert client.recv().startswith("ACK")
    assert client.recv().startswith("DONE")
    client.close()


def test_stdin_transport(tmp_path, default_ct):
    import io

    repo = Repository(tmp_path / "repo", default_ct)
    g, w = toygen.mlp("pipe", 777)
    repo.register_model(g, w, profile=(40, 1.0))
    loop = ServiceLoop(repo, default_ct, budget_mib=24_000, quantum=100,
                       out_dir=tmp_path / "out")
    stdin = io.StringIO("REQ pipe 5 short zeros\nREQ ghost 1 short zeros\nbogus\n")
    stdout = io.StringIO()
    loop.serve_stdin(stdin, stdout)
    lines = stdout.getvalue().strip().splitlines()
    assert lines[0].startswith("ACK ")
    assert "REJ unknown-model" in lines
    assert "ERR parse" in lines
    assert any(line.startswith("DONE ") for line in lines)


def test_ack_precedes_done_and_done_once(served):
    sock_path, _ = served
    client = Client(sock_path)
    n = 10
    for i in range(n):
        client.send(f"REQ svc{i % 2} 100 short rand:{i}")
    lines = [client.recv() for _ in range(2 * n)]
    client.close()
    seen_ack = set()
    seen_done = set()
    for line in lines:
        kind, rid = line.split()[0], line.split()[1]
        if kind == "ACK":
            seen_ack.add(rid)
        elif kind == "DONE":
            assert rid in seen_ack, "DONE before ACK"
            assert rid not in seen_done, "duplicate DONE"
            seen_done.add(rid)
    assert len(seen_done) == n
