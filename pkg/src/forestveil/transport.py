"""Length-prefixed TCP framing, message codecs, model store, server and clients.

A frame is a 4-byte big-endian length (payload size + 1), a 1-byte message
type and the payload.  One TCP connection carries one HELLO and then any
number of uploads (providers) or queries (users).  A query is four round
trips::

    R1  QUERY_INIT  ->  SC_BATCH + GAMMA_TILDE
    R2  (the two replies above)
    R3  OT_R1       ->  OT_R2
    R4  FINAL_SHARE ->  FINAL_SHARE

(R1/R2 are a single request/response pair; the numbering follows the data
each direction carries.)
"""

from __future__ import annotations

import json
import logging
import os
import socket
import socketserver
import struct
import tempfile
import threading
import time
from collections import Counter
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path

from . import lhe, metrics, prims
from . import protocol as P
from .lhe import Ciphertext, PublicKey

log = logging.getLogger(__name__)

HELLO = 0x01
MANIFEST = 0x02
UPLOAD_MODEL = 0x10
QUERY_INIT = 0x20
SC_BATCH = 0x21
GAMMA_TILDE = 0x22
OT_R1 = 0x30
OT_R2 = 0x31
FINAL_SHARE = 0x40
ERROR = 0x7F

MSG_NAMES = {
    HELLO: "HELLO", MANIFEST: "MANIFEST", UPLOAD_MODEL: "UPLOAD_MODEL", QUERY_INIT: "QUERY_INIT",
    SC_BATCH: "SC_BATCH", GAMMA_TILDE: "GAMMA_TILDE", OT_R1: "OT_R1", OT_R2: "OT_R2",
    FINAL_SHARE: "FINAL_SHARE", ERROR: "ERROR",
}

MAX_FRAME = 64 * 2**20
PROTOCOL_VERSION = 1
ROLE_USER, ROLE_PROVIDER = 1, 2
UPLOAD_CHUNK = 32 * 2**20
DEFAULT_TIMEOUT = 600.0
STORE_ENV = "FORESTVEIL_STORE"

GROUP_IDS = {"p256": 1, "modp2048": 2}


class TransportError(RuntimeError):
    pass


class FrameError(TransportError):
    pass


class RemoteError(TransportError):
    """The peer sent an ERROR frame."""


# -- frames -------------------------------------------------------------------

def encode_frame(msg_type: int, payload: bytes = b"") -> bytes:
    if msg_type not in MSG_NAMES:
        raise FrameError(f"unknown message type 0x{msg_type:02x}")
    if len(payload) + 1 > MAX_FRAME:
        raise FrameError(f"frame of {len(payload) + 1} bytes exceeds the 64 MiB limit")
    return struct.pack(">IB", len(payload) + 1, msg_type) + payload


def decode_frame(buf: bytes) -> tuple[int, bytes, int]:
    """Decode one frame from the front of ``buf``; returns (type, payload, consumed)."""
    if len(buf) < 5:
        raise FrameError("truncated frame header")
    length, msg_type = struct.unpack_from(">IB", buf)
    if length < 1 or length > MAX_FRAME:
        raise FrameError(f"bad frame length {length}")
    if msg_type not in MSG_NAMES:
        raise FrameError(f"unknown message type 0x{msg_type:02x}")
    end = 4 + length
    if len(buf) < end:
        raise FrameError("truncated frame payload")
    return msg_type, bytes(buf[5:end]), end


def _recv_exact(sock: socket.socket, n: int) -> bytes:
    chunks, got = [], 0
    while got < n:
        c = sock.recv(min(n - got, 1 << 20))
        if not c:
            raise TransportError("connection closed by peer")
        chunks.append(c)
        got += len(c)
    return b"".join(chunks)


class Connection:
    """Framed socket that tallies payload bytes by message type and direction."""

    def __init__(self, sock: socket.socket, timeout: float | None = DEFAULT_TIMEOUT):
        self.sock = sock
        sock.settimeout(timeout)
        self.sent: Counter = Counter()
        self.received: Counter = Counter()

    def send(self, msg_type: int, payload: bytes = b"") -> None:
        self.sock.sendall(encode_frame(msg_type, payload))
        self.sent[msg_type] += len(payload)

    def recv(self, expect: int | None = None) -> tuple[int, bytes]:
        header = _recv_exact(self.sock, 5)
        length, msg_type = struct.unpack(">IB", header)
        if length < 1 or length > MAX_FRAME:
            raise FrameError(f"bad frame length {length}")
        if msg_type not in MSG_NAMES:
            raise FrameError(f"unknown message type 0x{msg_type:02x}")
        payload = _recv_exact(self.sock, length - 1)
        self.received[msg_type] += len(payload)
        if msg_type == ERROR:
            raise RemoteError(payload.decode("utf-8", "replace"))
        if expect is not None and msg_type != expect:
            raise FrameError(f"expected {MSG_NAMES[expect]}, got {MSG_NAMES[msg_type]}")
        return msg_type, payload

    def error(self, message: str) -> None:
        try:
            self.send(ERROR, message.encode())
        except OSError:
            pass

    def close(self) -> None:
        self.sock.close()


# -- payload codecs --------------------------------------------------------------

class _Reader:
    def __init__(self, buf: bytes):
        self.buf, self.off = buf, 0

    def unpack(self, fmt: str):
        try:
            vals = struct.unpack_from(fmt, self.buf, self.off)
        except struct.error:
            raise FrameError("truncated field") from None
        self.off += struct.calcsize(fmt)
        return vals

    def lp(self) -> bytes:
        (n,) = self.unpack(">I")
        if self.off + n > len(self.buf):
            raise FrameError("truncated field")
        out = self.buf[self.off:self.off + n]
        self.off += n
        return out

    def raw(self, n: int) -> bytes:
        if self.off + n > len(self.buf):
            raise FrameError("truncated field")
        out = self.buf[self.off:self.off + n]
        self.off += n
        return out

    def ct(self, pk: PublicKey) -> Ciphertext:
        try:
            c, self.off = pk.ciphertext_from_bytes(self.buf, self.off)
        except (lhe.DecodeError, struct.error) as e:
            raise FrameError(f"bad ciphertext: {e}") from None
        return c

    def cts(self, pk: PublicKey, n: int) -> list[Ciphertext]:
        return [self.ct(pk) for _ in range(n)]

    def done(self) -> None:
        if self.off != len(self.buf):
            raise FrameError("trailing bytes in payload")


def _lp(b: bytes) -> bytes:
    return struct.pack(">I", len(b)) + b


def _cts(cs) -> bytes:
    return b"".join(c.to_bytes() for c in cs)


def encode_hello(role: int) -> bytes:
    return struct.pack(">BB", PROTOCOL_VERSION, role)


def decode_hello(buf: bytes) -> int:
    if len(buf) != 2:
        raise FrameError("bad HELLO")
    version, role = struct.unpack(">BB", buf)
    if version != PROTOCOL_VERSION:
        raise FrameError(f"protocol version {version} not supported")
    if role not in (ROLE_USER, ROLE_PROVIDER):
        raise FrameError(f"unknown role {role}")
    return role


def encode_manifest(man: P.Manifest, group: str = "p256") -> bytes:
    out = [struct.pack(">B", GROUP_IDS[group]), _lp(man.pk.to_bytes()),
           struct.pack(">II", man.n_features, len(man.providers))]
    for p in man.providers:
        out.append(struct.pack(">IIH", p.provider, p.m, p.depth))
        out.append(_cts(p.seed_ct))
    return b"".join(out)


def decode_manifest(buf: bytes) -> tuple[P.Manifest, str]:
    r = _Reader(buf)
    (gid,) = r.unpack(">B")
    names = {v: k for k, v in GROUP_IDS.items()}
    if gid not in names:
        raise FrameError(f"unknown OT group id {gid}")
    try:
        pk, _ = lhe.public_key_from_bytes(r.lp())
    except lhe.DecodeError as e:
        raise FrameError(str(e)) from None
    n, count = r.unpack(">II")
    entries = []
    for _ in range(count):
        k, m, d = r.unpack(">IIH")
        entries.append(P.ProviderEntry(k, m, d, (r.ct(pk), r.ct(pk))))
    r.done()
    return P.Manifest(pk, n, tuple(entries)), names[gid]


def encode_query_init(x_ct, b_ct) -> bytes:
    return _cts(x_ct) + b"".join(_cts(b) for b in b_ct)


def decode_query_init(buf: bytes, man: P.Manifest):
    r = _Reader(buf)
    x_ct = r.cts(man.pk, man.n_features)
    b_ct = [r.cts(man.pk, 2**d - 1) for _, _, d in man.trees()]
    r.done()
    return x_ct, b_ct


def encode_sc_batch(setup: bytes, cts) -> bytes:
    return _lp(setup) + b"".join(_cts(c) for c in cts)


def decode_sc_batch(buf: bytes, man: P.Manifest):
    r = _Reader(buf)
    setup = r.lp()
    cts = [r.cts(man.pk, 2**d - 1) for _, _, d in man.trees()]
    r.done()
    return setup, cts


def pack_signs(signs: list[int]) -> bytes:
    """+1 -> bit 1, -1 -> bit 0, MSB first, zero padded to a byte."""
    out = bytearray((len(signs) + 7) // 8)
    for i, s in enumerate(signs):
        if s == 1:
            out[i // 8] |= 0x80 >> (i % 8)
        elif s != -1:
            raise FrameError("sign must be +1 or -1")
    return bytes(out)


def unpack_signs(buf: bytes, n: int) -> list[int]:
    if len(buf) != (n + 7) // 8:
        raise FrameError("bad packed sign length")
    return [1 if buf[i // 8] & (0x80 >> (i % 8)) else -1 for i in range(n)]


def encode_gamma_tilde(gts) -> bytes:
    return b"".join(pack_signs(g) for g in gts)


def decode_gamma_tilde(buf: bytes, man: P.Manifest):
    r = _Reader(buf)
    out = []
    for _, _, d in man.trees():
        n = 2**d - 1
        out.append(unpack_signs(r.raw((n + 7) // 8), n))
    r.done()
    return out


def encode_ot_r1(requests) -> bytes:
    return b"".join(_lp(b) for req in requests for b in req)


def decode_ot_r1(buf: bytes, man: P.Manifest):
    r = _Reader(buf)
    out = [[r.lp() for _ in range(d)] for _, _, d in man.trees()]
    r.done()
    return out


def encode_ot_r2(responses) -> bytes:
    out = []
    for msgs, blobs in responses:
        out.extend(msgs)
        out.extend(_lp(b) for b in blobs)
    return b"".join(out)


def decode_ot_r2(buf: bytes, man: P.Manifest):
    r = _Reader(buf)
    out = []
    for _, _, d in man.trees():
        msgs = [r.raw(2 * prims.KEY_BYTES) for _ in range(d)]
        blobs = [r.lp() for _ in range(2**d)]
        out.append((msgs, blobs))
    r.done()
    return out


def encode_share(r: int, pk: PublicKey) -> bytes:
    return lhe.int_to_lp(r, pk.element_bytes)


def decode_share(buf: bytes, pk: PublicKey) -> int:
    v, end = lhe.lp_to_int(buf)
    if end != len(buf) or v >= pk.M:
        raise FrameError("bad final share")
    return v


# -- model store -------------------------------------------------------------------

class StoreError(TransportError):
    pass


class ModelStore:
    """One file per provider model plus ``manifest.json``.

    Writes go to a temp file in the same directory and are renamed into
    place.  Readers get an immutable snapshot, so queries never see a
    half-applied upload.
    """

    MANIFEST_FILE = "manifest.json"

    def __init__(self, root):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)
        self._lock = threading.Lock()
        self._models: tuple[P.EncryptedModel, ...] = ()
        self._files: dict[int, str] = {}
        self._load()

    @staticmethod
    def _file_name(provider: int) -> str:
        return f"provider-{provider}.fvem"

    def _load(self) -> None:
        mpath = self.root / self.MANIFEST_FILE
        if not mpath.exists():
            return
        meta = json.loads(mpath.read_text())
        models = []
        for entry in meta["providers"]:
            buf = (self.root / entry["file"]).read_bytes()
            models.append(P.model_from_bytes(buf))
            self._files[entry["id"]] = entry["file"]
        self._models = tuple(models)
        log.info("loaded %d models from %s", len(models), self.root)

    def _atomic_write(self, name: str, data: bytes) -> None:
        fd, tmp = tempfile.mkstemp(dir=self.root, prefix=".tmp-")
        try:
            with os.fdopen(fd, "wb") as f:
                f.write(data)
                f.flush()
                os.fsync(f.fileno())
            os.replace(tmp, self.root / name)
        except BaseException:
            if os.path.exists(tmp):
                os.unlink(tmp)
            raise

    def snapshot(self) -> tuple[P.EncryptedModel, ...]:
        return self._models

    def add(self, model: P.EncryptedModel) -> int:
        """Validate and persist ``model``; provider id 0 asks for a fresh id."""
        with self._lock:
            current = self._models
            if current:
                if model.n_features != current[0].n_features:
                    raise StoreError(f"dimension mismatch: store has n={current[0].n_features}, "
                                     f"upload has n={model.n_features}")
                if model.pk != current[0].pk:
                    raise StoreError("model encrypted under a different public key")
            ids = {mdl.provider for mdl in current}
            if model.provider == 0:
                model = _with_provider(model, max(ids, default=0) + 1)
            elif model.provider in ids:
                raise StoreError(f"duplicate provider id {model.provider}")
            name = self._file_name(model.provider)
            self._atomic_write(name, P.model_to_bytes(model))
            files = dict(self._files)
            files[model.provider] = name
            entries = sorted(current + (model,), key=lambda x: x.provider)
            meta = {"version": 1, "n_features": model.n_features, "m": sum(x.m for x in entries),
                    "providers": [{"id": x.provider, "m": x.m, "d": x.depth, "file": files[x.provider]}
                                  for x in entries]}
            self._atomic_write(self.MANIFEST_FILE, json.dumps(meta, indent=2).encode())
            self._files = files
            self._models = tuple(entries)
            return model.provider


def _with_provider(model: P.EncryptedModel, k: int) -> P.EncryptedModel:
    trees = [P.EncryptedTree(k, t.number, t.depth, t.masked, t.thresholds, t.leaves) for t in model.trees]
    return P.EncryptedModel(k, model.n_features, model.depth, trees, model.seed_ct, model.pk)


def store_path(cli_value=None) -> Path:
    """``FORESTVEIL_STORE`` wins over the command-line value when set."""
    env = os.environ.get(STORE_ENV)
    if env:
        return Path(env)
    if cli_value is None:
        raise StoreError(f"no store directory given (use --store or {STORE_ENV})")
    return Path(cli_value)


# -- server --------------------------------------------------------------------

class _Handler(socketserver.BaseRequestHandler):
    server: "ForestServer"

    def handle(self):
        srv = self.server
        conn = Connection(self.request, srv.timeout_s)
        try:
            _, payload = conn.recv(HELLO)
            role = decode_hello(payload)
            if role == ROLE_PROVIDER:
                conn.send(HELLO, encode_hello(ROLE_PROVIDER))
                self._provider_loop(conn)
            else:
                self._user_loop(conn)
        except TransportError as e:
            if "closed by peer" not in str(e):
                log.warning("session error: %s", e)
                conn.error(str(e))
        except (P.ProtocolError, prims.OTError, lhe.LHEError) as e:
            log.warning("protocol abort: %s", e)
            conn.error(f"protocol abort: {e}")
        except socket.timeout:
            conn.error("timeout")
        except OSError as e:
            log.info("connection dropped: %s", e)

    def _provider_loop(self, conn: Connection):
        srv = self.server
        while True:
            parts = []
            while True:
                _, payload = conn.recv(UPLOAD_MODEL)
                if not payload:
                    raise FrameError("empty upload chunk")
                parts.append(payload[1:])
                if payload[0] == 1:
                    break
            try:
                model = P.model_from_bytes(b"".join(parts))
                k = srv.store.add(model)
            except (lhe.LHEError, StoreError, struct.error) as e:
                conn.error(f"upload rejected: {e}")
                continue
            conn.send(UPLOAD_MODEL, struct.pack(">I", k))

    def _user_loop(self, conn: Connection):
        srv = self.server
        models = srv.store.snapshot()
        if not models:
            conn.error("no models")
            return
        session = P.ServerSession(list(models), group=prims.get_group(srv.group))
        man = session.manifest
        conn.send(MANIFEST, encode_manifest(man, srv.group))
        while True:
            _, payload = conn.recv(QUERY_INIT)
            x_ct, b_ct = decode_query_init(payload, man)
            setup, cts, gts = session.evaluate(x_ct, b_ct)
            conn.send(SC_BATCH, encode_sc_batch(setup, cts))
            conn.send(GAMMA_TILDE, encode_gamma_tilde(gts))
            _, payload = conn.recv(OT_R1)
            conn.send(OT_R2, encode_ot_r2(session.transfer(decode_ot_r1(payload, man))))
            conn.recv(FINAL_SHARE)
            conn.send(FINAL_SHARE, encode_share(session.final_share(), man.pk))
            # a further query on this connection gets fresh randomness
            session = P.ServerSession(list(models), group=prims.get_group(srv.group))


class ForestServer(socketserver.ThreadingTCPServer):
    """Threaded TCP server; holds only public material."""

    daemon_threads = True
    allow_reuse_address = True

    def __init__(self, store: ModelStore, address=("127.0.0.1", 0), group: str = "p256",
                 timeout_s: float = DEFAULT_TIMEOUT):
        self.store = store
        self.group = group
        self.timeout_s = timeout_s
        super().__init__(address, _Handler)

    @property
    def address(self) -> str:
        host, port = self.server_address[:2]
        return f"{host}:{port}"


def serve_in_thread(store: ModelStore, address=("127.0.0.1", 0), **kw) -> tuple[ForestServer, threading.Thread]:
    srv = ForestServer(store, address, **kw)
    th = threading.Thread(target=srv.serve_forever, name="forestveil-server", daemon=True)
    th.start()
    return srv, th


def parse_address(addr: str) -> tuple[str, int]:
    host, sep, port = addr.rpartition(":")
    if not sep or not port.isdigit():
        raise TransportError(f"address must be host:port, got {addr!r}")
    return host or "127.0.0.1", int(port)


def _connect(addr: str, timeout: float) -> Connection:
    sock = socket.create_connection(parse_address(addr), timeout=timeout)
    return Connection(sock, timeout)


# -- clients -------------------------------------------------------------------

def upload_model(addr: str, model: P.EncryptedModel, timeout: float = DEFAULT_TIMEOUT) -> int:
    """Send a model to the server; returns the provider id it was stored under."""
    conn = _connect(addr, timeout)
    try:
        conn.send(HELLO, encode_hello(ROLE_PROVIDER))
        conn.recv(HELLO)
        buf = P.model_to_bytes(model)
        chunks = [buf[i:i + UPLOAD_CHUNK] for i in range(0, len(buf), UPLOAD_CHUNK)] or [b""]
        for i, c in enumerate(chunks):
            conn.send(UPLOAD_MODEL, bytes([i == len(chunks) - 1]) + c)
        _, payload = conn.recv(UPLOAD_MODEL)
        return struct.unpack(">I", payload)[0]
    finally:
        conn.close()


def fetch_manifest(addr: str, timeout: float = DEFAULT_TIMEOUT) -> P.Manifest:
    conn = _connect(addr, timeout)
    try:
        conn.send(HELLO, encode_hello(ROLE_USER))
        _, payload = conn.recv(MANIFEST)
        return decode_manifest(payload)[0]
    finally:
        conn.close()


@dataclass
class QueryResult:
    y: Fraction
    timings: dict[str, float] = field(default_factory=dict)
    bytes_sent: dict[str, int] = field(default_factory=dict)
    bytes_received: dict[str, int] = field(default_factory=dict)
    m: int = 0

    def to_json(self) -> dict:
        return {"y": round(float(self.y), 6), "y_exact": f"{self.y.numerator}/{self.y.denominator}",
                "m": self.m, "timings_s": self.timings,
                "bytes_sent": self.bytes_sent, "bytes_received": self.bytes_received}


def query(addr: str, sk: lhe.SecretKey, x, rng=None, timeout: float = DEFAULT_TIMEOUT,
          tap: P.Tap | None = None) -> QueryResult:
    """Run one prediction against a server as the user."""
    t_all = time.perf_counter()
    timings = {}
    conn = _connect(addr, timeout)
    try:
        t0 = time.perf_counter()
        conn.send(HELLO, encode_hello(ROLE_USER))
        _, payload = conn.recv(MANIFEST)
        man, group = decode_manifest(payload)
        user = P.UserSession(man, sk, x, rng, prims.get_group(group), tap)
        timings["setup"] = time.perf_counter() - t0

        t0 = time.perf_counter()
        conn.send(QUERY_INIT, encode_query_init(*user.submit()))
        _, p1 = conn.recv(SC_BATCH)
        _, p2 = conn.recv(GAMMA_TILDE)
        timings["round1_2"] = time.perf_counter() - t0

        t0 = time.perf_counter()
        setup, cts = decode_sc_batch(p1, man)
        requests = user.choose_leaves(setup, cts, decode_gamma_tilde(p2, man))
        conn.send(OT_R1, encode_ot_r1(requests))
        _, p3 = conn.recv(OT_R2)
        user.receive_labels(decode_ot_r2(p3, man))
        timings["round3"] = time.perf_counter() - t0

        t0 = time.perf_counter()
        conn.send(FINAL_SHARE)
        _, p4 = conn.recv(FINAL_SHARE)
        y = user.predict(decode_share(p4, man.pk))
        timings["round4"] = time.perf_counter() - t0
    finally:
        conn.close()
    timings["total"] = time.perf_counter() - t_all
    timings.update({f"user_{k}": v for k, v in user.timings.items()})
    c = metrics.current()
    if c is not None:
        c.add_bytes("user->server", sum(conn.sent.values()))
        c.add_bytes("server->user", sum(conn.received.values()))
    return QueryResult(y, timings, {MSG_NAMES[k]: v for k, v in conn.sent.items()},
                       {MSG_NAMES[k]: v for k, v in conn.received.items()}, man.m)
