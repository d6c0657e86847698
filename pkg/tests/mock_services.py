"""Local stand-ins for the chat and image endpoints, served over real HTTP."""

import json
import os
import signal
import subprocess
import sys
import threading
import time
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

GOOD_BODY = {"items": [{"item_id": 0, "label": "dog", "attributes": ["small"]},
                       {"item_id": 1, "label": "ball", "attributes": ["red"]}],
             "relations": [{"triple_id": 0, "item1": 0, "relation": "chasing", "item2": 1}]}


class ChatServer:
    """OpenAI-style chat endpoint.

    ``fail_every=n`` answers every n-th request with HTTP 503, but fails a
    given image at most once so that every job's retry goes through. ``hang_after``
    blocks every request after that many successes until ``release()``.
    """

    def __init__(self, fail_every=0, hang_after=None, reply=None):
        self.fail_every = fail_every
        self.hang_after = hang_after
        self.reply = reply or (lambda image_url: "```json\n" + json.dumps(GOOD_BODY) + "\n```")
        self.requests = []  # image urls, in arrival order
        self.successes = 0
        self.failed = set()
        self.lock = threading.Lock()
        self.gate = threading.Event()
        owner = self

        class Handler(BaseHTTPRequestHandler):
            def log_message(self, *args):
                pass

            def do_POST(self):
                body = json.loads(self.rfile.read(int(self.headers["Content-Length"])))
                url = body["messages"][0]["content"][1]["image_url"]["url"]
                with owner.lock:
                    owner.requests.append(url)
                    n = len(owner.requests)
                    hang = owner.hang_after is not None and owner.successes >= owner.hang_after
                if hang:
                    owner.gate.wait(30)
                    return
                with owner.lock:
                    fail = (owner.fail_every and n % owner.fail_every == 0 and url not in owner.failed)
                    if fail:
                        owner.failed.add(url)
                if fail:
                    self.send_response(503)
                    self.end_headers()
                    return
                data = json.dumps({"choices": [{"message": {"role": "assistant",
                                                            "content": owner.reply(url)}}]}).encode()
                with owner.lock:
                    owner.successes += 1
                self.send_response(200)
                self.send_header("Content-Type", "application/json")
                self.send_header("Content-Length", str(len(data)))
                self.end_headers()
                self.wfile.write(data)

        self.httpd = ThreadingHTTPServer(("127.0.0.1", 0), Handler)
        self.httpd.daemon_threads = True
        self.thread = threading.Thread(target=self.httpd.serve_forever, daemon=True)

    @property
    def url(self):
        return f"http://127.0.0.1:{self.httpd.server_address[1]}/v1/chat/completions"

    def release(self):
        self.gate.set()

    def __enter__(self):
        self.thread.start()
        return self

    def __exit__(self, *exc):
        self.release()
        self.httpd.shutdown()
        self.httpd.server_close()


def write_manifest(path, n):
    with open(path, "w") as fh:
        for i in range(n):
            fh.write(json.dumps({"img_id": str(i), "url": f"https://img.example/{i}.jpg",
                                 "caption_ori": f"caption {i}", "score": 7.1}) + "\n")
    return path


def write_config(path, endpoint, parallelism=1, retries=3, backoff=0.0):
    path.write_text(f"endpoint = {endpoint}\nmodel = mock\nparallelism = {parallelism}\n"
                    f"retries = {retries}\nbackoff = {backoff}\n")
    return path


def kill_and_resume(tmp_path, n_jobs=10, kill_after=4, fail_every=0):
    """Run ``annotate`` in a child process, SIGKILL it once ``kill_after``
    jobs are journaled, then resume in-process. Returns (done ids before
    the kill, image urls requested by the resumed run, final journal state)."""
    from sgkit.annotator import read_journal
    from sgkit.cli import main

    tmp_path.mkdir(parents=True, exist_ok=True)
    manifest = write_manifest(tmp_path / "jobs.jsonl", n_jobs)
    out = tmp_path / "o"
    journal = out / "journal.tsv"
    env = dict(os.environ, PYTHONPATH=os.pathsep.join(sys.path))
    with ChatServer(fail_every=fail_every, hang_after=kill_after) as server:
        cfg = write_config(tmp_path / "cfg.txt", server.url, parallelism=1)
        proc = subprocess.Popen([sys.executable, "-m", "sgkit.cli", "annotate", str(manifest),
                                 "--config", str(cfg), "--out", str(out)], env=env)
        deadline = time.time() + 20
        while time.time() < deadline:
            if journal.exists() and len(journal.read_text().splitlines()) >= kill_after:
                break
            time.sleep(0.02)
        while len(server.requests) <= server.successes and time.time() < deadline:
            time.sleep(0.02)  # the next request is parked in the server
        proc.send_signal(signal.SIGKILL)
        proc.wait()
        done_before = {k for k, (s, _) in read_journal(journal).items() if s == "done"}
        server.hang_after = None
        server.release()
        before = len(server.requests)
        assert main(["annotate", str(manifest), "--config", str(cfg), "--out", str(out)]) == 0
        resumed = server.requests[before:]
    return done_before, resumed, read_journal(journal)
