"""Trace events as JSON lines, with a running SHA-256 over the exact bytes.

One event per line, compact separators, keys in emission order, ASCII only. The trace
hash is the digest of the whole JSONL stream, so two runs agree on the hash
iff they would write byte-identical trace files.
"""

from __future__ import annotations

import hashlib
import json
from importlib import resources
from pathlib import Path
from typing import IO, Callable, Iterable, Iterator

try:
    import orjson
except ImportError:  # pragma: no cover - exercised only without the optional speedup
    orjson = None

_stdlib_encode = json.JSONEncoder(separators=(",", ":"), ensure_ascii=True).encode

if orjson is not None:
    _dumps = orjson.dumps
else:  # pragma: no cover
    def _dumps(ev: dict) -> bytes:
        return _stdlib_encode(ev).encode("ascii")

_FLUSH_EVERY = 4096


def encode_event(ev: dict) -> str:
    """The exact line written for ``ev`` (without the newline)."""
    return _dumps(ev).decode("ascii")


def stdlib_encode_event(ev: dict) -> str:
    return _stdlib_encode(ev)


class TraceWriter:
    """Event sink that hashes, and optionally writes, the JSONL stream.

    ``on_chunk`` sees every block of encoded lines as it is flushed.
    """

    def __init__(self, fp: IO[bytes] | None = None, on_chunk: Callable[[str], None] | None = None):
        self.fp = fp
        self.on_chunk = on_chunk
        self._h = hashlib.sha256()
        self._buf: list[bytes] = []
        self.events = 0

    def __call__(self, ev: dict) -> None:
        self._buf.append(_dumps(ev))
        self.events += 1
        if len(self._buf) >= _FLUSH_EVERY:
            self.flush()

    def flush(self) -> None:
        if not self._buf:
            return
        chunk = b"\n".join(self._buf) + b"\n"
        self._buf.clear()
        self._h.update(chunk)
        if self.fp is not None:
            self.fp.write(chunk)
        if self.on_chunk is not None:
            self.on_chunk(chunk.decode("ascii"))

    def hexdigest(self) -> str:
        self.flush()
        return self._h.hexdigest()


def tee(*sinks: Callable[[dict], None]) -> Callable[[dict], None]:
    sinks = tuple(s for s in sinks if s is not None)
    if len(sinks) == 1:
        return sinks[0]

    def fan(ev: dict) -> None:
        for s in sinks:
            s(ev)
    return fan


def trace_hash(events: Iterable[dict]) -> str:
    w = TraceWriter()
    for ev in events:
        w(ev)
    return w.hexdigest()


def read_trace(path: str | Path) -> Iterator[dict]:
    with open(path, encoding="ascii") as fp:
        for line in fp:
            if line.strip():
                yield json.loads(line)


def load_schema() -> dict:
    text = resources.files("pulpsim").joinpath("schemas/trace.schema.json").read_text()
    return json.loads(text)
