"""Closed control loop over loopback sockets: RAN emulator -> data processing
-> encrypted RIC database -> xApp inference -> control message back to the RAN.

Plaintext spectrograms and cipher keys never cross into the database or the
xApp: the processing stage encrypts with a fresh per-report key and drops both
the plaintext and the key on the floor (a test-only escrow can retain keys,
off by default). Per-stage latencies are stamped with one process-wide
monotonic clock.
"""

from __future__ import annotations

import os
import socket
import struct
import threading
import time
from dataclasses import dataclass, field

import numpy as np

from . import crypt, e2, rng, spectro
from .models import Model, predict
from .optim import TrainConfig  # noqa: F401  (re-exported for loop configs)
from .signals import IqBuffer, Label, SynthConfig, synth_capture
from .spectro import StftConfig


class BudgetError(Exception):
    """Closed-loop latency budget violated."""


# -- database ---------------------------------------------------------------


@dataclass(frozen=True)
class StoredBlob:
    seq: int
    key_id: bytes
    timestamp: float
    blob: bytes  # SGRM bytes of the encrypted image


class RicDatabase:
    """Append-only in-memory store; one writer, read-after-write visibility.

    Accepts only EncryptedSpectrogram payloads and never holds key material,
    so nothing readable from it can decrypt a blob.
    """

    def __init__(self) -> None:
        self._items: list[StoredBlob] = []
        self._cond = threading.Condition()
        self._closed = False

    def store(self, enc: crypt.EncryptedSpectrogram, timestamp: float) -> int:
        if not isinstance(enc, crypt.EncryptedSpectrogram):
            raise TypeError("RicDatabase only accepts EncryptedSpectrogram payloads")
        blob = spectro.to_bytes(spectro.Spectrogram(enc.pixels))
        with self._cond:
            seq = len(self._items) + 1
            self._items.append(StoredBlob(seq, enc.key_id, timestamp, blob))
            self._cond.notify_all()
        return seq

    def fetch_since(self, seq: int) -> list[StoredBlob]:
        with self._cond:
            return self._items[seq:]

    def next_after(self, seq: int, timeout: float = 0.5) -> StoredBlob | None:
        """Blocking read of item seq+1; None when closed and drained (or timeout)."""
        deadline = time.monotonic() + timeout
        with self._cond:
            while len(self._items) <= seq:
                if self._closed:
                    return None
                remaining = deadline - time.monotonic()
                if remaining <= 0:
                    return None
                self._cond.wait(remaining)
            return self._items[seq]

    def close(self) -> None:
        with self._cond:
            self._closed = True
            self._cond.notify_all()

    @property
    def count(self) -> int:
        with self._cond:
            return len(self._items)


class DirRicDatabase:
    """Directory-backed variant for running the roles as separate processes."""

    def __init__(self, path: str):
        self.path = path
        os.makedirs(path, exist_ok=True)

    def store(self, enc: crypt.EncryptedSpectrogram, timestamp: float) -> int:
        if not isinstance(enc, crypt.EncryptedSpectrogram):
            raise TypeError("RicDatabase only accepts EncryptedSpectrogram payloads")
        seq = self.count + 1
        name = f"{seq:08d}_{enc.key_id.hex()}.blob"
        tmp = os.path.join(self.path, "." + name)
        with open(tmp, "wb") as fh:
            fh.write(struct.pack(">d", timestamp))
            fh.write(spectro.to_bytes(spectro.Spectrogram(enc.pixels)))
        os.replace(tmp, os.path.join(self.path, name))
        return seq

    def _names(self) -> list[str]:
        return sorted(n for n in os.listdir(self.path)
                      if n.endswith(".blob") and not n.startswith("."))

    def fetch_since(self, seq: int) -> list[StoredBlob]:
        out = []
        for name in self._names()[seq:]:
            with open(os.path.join(self.path, name), "rb") as fh:
                raw = fh.read()
            (timestamp,) = struct.unpack(">d", raw[:8])
            out.append(StoredBlob(int(name[:8]), bytes.fromhex(name[9:41]), timestamp, raw[8:]))
        return out

    def next_after(self, seq: int, timeout: float = 0.5) -> StoredBlob | None:
        deadline = time.monotonic() + timeout
        while time.monotonic() < deadline:
            items = self.fetch_since(seq)
            if items:
                return items[0]
            time.sleep(0.02)
        return None

    def close(self) -> None:  # directory stores have no writer-side close
        pass

    @property
    def count(self) -> int:
        return len(self._names())


# -- pipeline stages -----------------------------------------------------------


class ProcessingStage:
    """IQ report -> spectrogram -> fresh key -> encrypt -> store.

    Plaintext and key are locals that die here; `escrow` (test mode only)
    retains keys by key id for round-trip checks.
    """

    def __init__(self, db, patch_size: int, seed: int,
                 stft: StftConfig | None = None,
                 escrow: dict[bytes, crypt.ShuffleKey] | None = None):
        self.db = db
        self.patch_size = patch_size
        self.stft = stft
        self.escrow = escrow
        self._keys = rng.substream(seed, "loop-keys")
        self.skipped = 0

    def handle(self, iq: IqBuffer) -> tuple[int, float]:
        """Returns (seq, store timestamp)."""
        image = spectro.spectrogram(iq, self.stft)
        key = crypt.fresh_key(self._keys, self.patch_size)
        enc = crypt.encrypt(image, key)
        if self.escrow is not None:
            self.escrow[enc.key_id] = key
        stored_at = time.monotonic()
        seq = self.db.store(enc, stored_at)
        return seq, stored_at


class XApp:
    """Watches the database and answers every new blob with a CONTROL message.

    Holds a trained model and a frame sender; has no access to keys and no
    decryption path."""

    def __init__(self, db, model: Model, send_frame):
        self.db = db
        self.model = model
        self.send_frame = send_frame
        self.flagged = 0
        self.inference_times: dict[int, tuple[float, float, float]] = {}
        self.decisions: list[e2.ControlDecision] = []

    def handle_blob(self, item: StoredBlob) -> bool:
        image = spectro.from_bytes(item.blob)
        expect = (self.model.cfg.image_height, self.model.cfg.image_width,
                  self.model.cfg.channels)
        if image.pixels.shape != expect:
            self.flagged += 1
            return False
        started = time.monotonic()
        probs, _ = predict(self.model, image)
        done = time.monotonic()
        label = Label(int(probs.argmax()))
        decision = e2.ControlDecision(label, e2.action_for(label), float(probs.max()))
        sent_at = time.monotonic()
        self.send_frame(e2.encode_frame(e2.MsgType.CONTROL, e2.encode_control(decision)))
        self.inference_times[item.seq] = (started, done, sent_at)
        self.decisions.append(decision)
        return True

    def drain(self, stop: threading.Event, poll_s: float = 0.2) -> None:
        seen = 0
        while True:
            item = self.db.next_after(seen, timeout=poll_s)
            if item is None:
                if stop.is_set() and self.db.count <= seen:
                    return
                if isinstance(self.db, RicDatabase) and self.db._closed \
                        and self.db.count <= seen:
                    return
                continue
            self.handle_blob(item)
            seen = item.seq


# -- scenario / RAN side ---------------------------------------------------------


@dataclass
class ScenarioSegment:
    label: Label
    duration_s: float

    def __post_init__(self) -> None:
        if self.duration_s <= 0:
            raise ValueError("segment durations must be positive")


def parse_scenario(text: str) -> list[ScenarioSegment]:
    """One segment per line: '<CLASS> <seconds>', e.g. 'SOI 5'."""
    segments = []
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        try:
            name, dur = line.split()
            segments.append(ScenarioSegment(Label.parse(name), float(dur)))
        except ValueError:
            raise ValueError(f"scenario line {lineno} is not '<CLASS> <seconds>': {line!r}")
    return segments


def scenario_schedule(scenario: list[ScenarioSegment], interval_s: float) -> list[Label]:
    """Label of each report: one report per interval from t=0, segments honored
    to within one interval."""
    total = sum(seg.duration_s for seg in scenario)
    labels = []
    t = 0.0
    for _ in range(int(np.floor(total / interval_s + 1e-9))):
        elapsed = 0.0
        for seg in scenario:
            elapsed += seg.duration_s
            if t < elapsed:
                labels.append(seg.label)
                break
        t += interval_s
    return labels


def ran_capture(label: Label, seed: int, index: int,
                synth: SynthConfig | None = None) -> IqBuffer:
    """Deterministic capture for report `index` of a run (shared by the
    emulator and by tests that need to reproduce the plaintext)."""
    base = synth or SynthConfig()
    stream = rng.substream(seed, f"ran-report-{index}")
    subseed = stream.next()
    if label == Label.SOI:
        gain = base.interferer_gain_db
    else:
        gain = float(rng.numpy_generator(subseed, "gain").uniform(30.0, 40.0))
    from dataclasses import replace
    return synth_capture(replace(base, label=label, interferer_gain_db=gain, rng_seed=subseed))


# -- timing -----------------------------------------------------------------------


@dataclass
class LoopTiming:
    t_transport_up: float
    t_process: float
    t_inference: float
    t_transport_down: float

    def __post_init__(self) -> None:
        for name in ("t_transport_up", "t_process", "t_inference", "t_transport_down"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} is negative")

    @property
    def rtt(self) -> float:
        return (self.t_transport_up + self.t_process
                + self.t_inference + self.t_transport_down)


@dataclass
class LoopReport:
    timings: list[LoopTiming | None]
    decisions: list[e2.ControlDecision]
    stored: int
    skipped: int
    incomplete: int
    budget_s: float
    p50_rtt: float = float("nan")
    p95_rtt: float = float("nan")
    max_rtt: float = float("nan")

    def __post_init__(self) -> None:
        rtts = [t.rtt for t in self.timings if t is not None]
        if rtts:
            self.p50_rtt = float(np.percentile(rtts, 50))
            self.p95_rtt = float(np.percentile(rtts, 95))
            self.max_rtt = float(max(rtts))

    @property
    def budget_violated(self) -> bool:
        complete = [t for t in self.timings if t is not None]
        return not complete or self.p95_rtt >= self.budget_s

    def to_csv(self, path) -> None:
        import csv

        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["report", "t_transport_up", "t_process", "t_inference",
                             "t_transport_down", "rtt", "predicted_class", "action",
                             "confidence"])
            for i, (t, d) in enumerate(zip(self.timings, self.decisions), 1):
                if t is None:
                    writer.writerow([i, "", "", "", "", "", "", "", ""])
                else:
                    writer.writerow([
                        i, f"{t.t_transport_up:.6f}", f"{t.t_process:.6f}",
                        f"{t.t_inference:.6f}", f"{t.t_transport_down:.6f}",
                        f"{t.rtt:.6f}", d.predicted_class.name, d.action.name,
                        f"{d.confidence:.4f}"])


# -- the whole loop in one process --------------------------------------------------


def run_loop(model: Model, scenario: list[ScenarioSegment], *,
             interval_s: float = 1.0, patch_size: int = 16, seed: int = 0,
             budget_s: float = 1.0, pace: bool = True,
             synth: SynthConfig | None = None, stft: StftConfig | None = None,
             escrow: dict[bytes, crypt.ShuffleKey] | None = None,
             db: RicDatabase | None = None, timeout_s: float = 120.0) -> LoopReport:
    """Run RAN emulator, processing stage, and xApp as three concurrent roles
    joined by a loopback TCP connection, and account per-stage latency.

    `pace=False` drops the inter-report sleep (functional tests); timing
    semantics are unchanged since every stage is stamped individually.
    """
    labels = scenario_schedule(scenario, interval_s)
    db = db if db is not None else RicDatabase()
    proc = ProcessingStage(db, patch_size, seed, stft, escrow)
    send_times: list[float] = []
    recv_times: dict[int, float] = {}
    proc_recv: dict[int, float] = {}
    proc_done: dict[int, float] = {}
    ctrl_recv: list[float] = []
    stop = threading.Event()
    errors: list[BaseException] = []
    xapp_holder: list[XApp] = []

    listener = socket.create_server(("127.0.0.1", 0))
    port = listener.getsockname()[1]

    def ric_server() -> None:
        try:
            conn, _ = listener.accept()
            conn_file_lock = threading.Lock()

            def send_frame(data: bytes) -> None:
                with conn_file_lock:
                    conn.sendall(data)

            xapp = XApp(db, model, send_frame)
            xapp_holder.append(xapp)
            xapp_thread = threading.Thread(
                target=xapp.drain, args=(stop,), name="xapp", daemon=True)
            xapp_thread.start()
            index = 0
            while True:
                frame = e2.read_frame(conn.recv)
                if frame is None:
                    break
                received = time.monotonic()
                if frame.msg_type != e2.MsgType.IQ_REPORT:
                    proc.skipped += 1
                    continue
                try:
                    iq = e2.decode_iq_report(frame.payload)
                except e2.ProtocolError:
                    proc.skipped += 1
                    continue
                proc_recv[index] = received
                seq, stored_at = proc.handle(iq)
                proc_done[index] = stored_at
                index += 1
            stop.set()
            db.close()
            xapp_thread.join(timeout=timeout_s)
            conn.close()
        except BaseException as exc:  # surfaced to the caller after join
            errors.append(exc)
            stop.set()
            db.close()

    server_thread = threading.Thread(target=ric_server, name="ric", daemon=True)
    server_thread.start()

    client = socket.create_connection(("127.0.0.1", port))
    expected = len(labels)

    def control_reader() -> None:
        try:
            while len(ctrl_recv) < expected:
                frame = e2.read_frame(client.recv)
                if frame is None:
                    break
                ctrl_recv.append(time.monotonic())
                e2.decode_control(frame.payload)
        except BaseException as exc:
            errors.append(exc)

    reader_thread = threading.Thread(target=control_reader, name="ran-ctrl", daemon=True)
    reader_thread.start()

    start = time.monotonic()
    for i, label in enumerate(labels):
        iq = ran_capture(label, seed, i, synth)
        payload = e2.encode_iq_report(iq)
        if pace:
            target = start + i * interval_s
            delay = target - time.monotonic()
            if delay > 0:
                time.sleep(delay)
        send_times.append(time.monotonic())
        client.sendall(e2.encode_frame(e2.MsgType.IQ_REPORT, payload))
    client.shutdown(socket.SHUT_WR)

    reader_thread.join(timeout=timeout_s)
    server_thread.join(timeout=timeout_s)
    client.close()
    listener.close()
    if errors:
        raise errors[0]
    if not xapp_holder:
        raise RuntimeError("RIC server never started an xApp")

    xapp = xapp_holder[0]
    timings: list[LoopTiming | None] = []
    incomplete = 0
    for i in range(expected):
        seq = i + 1
        have = (i in proc_recv and i in proc_done and seq in xapp.inference_times
                and i < len(ctrl_recv))
        if not have:
            timings.append(None)
            incomplete += 1
            continue
        inf_start, inf_done, ctrl_sent = xapp.inference_times[seq]
        timings.append(LoopTiming(
            t_transport_up=proc_recv[i] - send_times[i],
            t_process=proc_done[i] - proc_recv[i],
            t_inference=inf_done - inf_start,
            t_transport_down=ctrl_recv[i] - ctrl_sent,
        ))
    return LoopReport(timings=timings, decisions=xapp.decisions, stored=db.count,
                      skipped=proc.skipped, incomplete=incomplete, budget_s=budget_s)


# -- standalone roles (separate processes) ---------------------------------------


def serve_processing(port: int, db, patch_size: int, seed: int,
                     stft: StftConfig | None = None) -> int:
    """Accept one uplink connection and store every report until EOF.
    Returns the number of stored blobs."""
    listener = socket.create_server(("127.0.0.1", port))
    conn, _ = listener.accept()
    proc = ProcessingStage(db, patch_size, seed, stft)
    stored = 0
    while True:
        frame = e2.read_frame(conn.recv)
        if frame is None:
            break
        if frame.msg_type != e2.MsgType.IQ_REPORT:
            proc.skipped += 1
            continue
        try:
            iq = e2.decode_iq_report(frame.payload)
        except e2.ProtocolError:
            proc.skipped += 1
            continue
        proc.handle(iq)
        stored += 1
    conn.close()
    listener.close()
    return stored


def run_xapp_standalone(db, model: Model, control_host: str, control_port: int,
                        expected: int, timeout_s: float = 300.0) -> int:
    """Watch a database and send CONTROL frames to the RAN's control port.
    Stops after `expected` blobs (or timeout). Returns blobs answered."""
    sock = socket.create_connection((control_host, control_port))
    xapp = XApp(db, model, sock.sendall)
    seen = 0
    deadline = time.monotonic() + timeout_s
    while seen < expected and time.monotonic() < deadline:
        item = db.next_after(seen, timeout=1.0)
        if item is None:
            continue
        xapp.handle_blob(item)
        seen = item.seq
    sock.close()
    return seen


def run_ran_standalone(scenario: list[ScenarioSegment], interval_s: float,
                       uplink_host: str, uplink_port: int, control_port: int,
                       seed: int, synth: SynthConfig | None = None,
                       timeout_s: float = 300.0) -> tuple[int, int]:
    """Stream the scenario to the processing stage and count control replies
    arriving on the local control port. Returns (reports sent, controls seen)."""
    labels = scenario_schedule(scenario, interval_s)
    ctrl_listener = socket.create_server(("127.0.0.1", control_port))
    ctrl_listener.settimeout(timeout_s)
    controls = []

    def control_sink() -> None:
        try:
            conn, _ = ctrl_listener.accept()
            while len(controls) < len(labels):
                frame = e2.read_frame(conn.recv)
                if frame is None:
                    break
                controls.append(e2.decode_control(frame.payload))
            conn.close()
        except (TimeoutError, OSError):
            pass

    sink = threading.Thread(target=control_sink, daemon=True)
    sink.start()
    client = socket.create_connection((uplink_host, uplink_port))
    start = time.monotonic()
    for i, label in enumerate(labels):
        iq = ran_capture(label, seed, i, synth)
        target = start + i * interval_s
        delay = target - time.monotonic()
        if delay > 0:
            time.sleep(delay)
        client.sendall(e2.encode_frame(e2.MsgType.IQ_REPORT, e2.encode_iq_report(iq)))
    client.shutdown(socket.SHUT_WR)
    sink.join(timeout=timeout_s)
    client.close()
    ctrl_listener.close()
    return len(labels), len(controls)
