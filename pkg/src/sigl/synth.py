"""Synthetic installer traces, benign and with injected malware.

A benign trace follows one :class:`InstallerTemplate`: a browser downloads
the installer, the shell launches it and a tree of installer stages loads
system libraries, unpacks temporary files, writes the application and
possibly phones home.  Malware is added either by wrapping the installer in
a new root process (``bundle``) or by having an installer stage drop and run
it mid-install (``embed``).  Ground truth lives in :class:`Trace.labels`,
never in the events.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .audit import AuditEvent, EntityKind, Relation, serialize_events

USER = "c:/users/user"
TEMP = f"{USER}/appdata/local/temp"
DOWNLOADS = f"{USER}/downloads"
SYSTEM32 = "c:/windows/system32"
BROWSER = "c:/program files/mozilla firefox/firefox.exe"
EXPLORER = "c:/windows/explorer.exe"
SVCHOST = f"{SYSTEM32}/svchost.exe"

SYSTEM_DLLS = tuple(f"{SYSTEM32}/{n}.dll" for n in (
    "ntdll", "kernel32", "kernelbase", "user32", "advapi32", "shell32", "ole32",
    "oleaut32", "gdi32", "comctl32", "msvcrt", "ws2_32", "crypt32", "version",
    "shlwapi", "rpcrt4", "sechost", "bcrypt", "winhttp", "wininet", "uxtheme",
    "dwmapi", "imm32", "setupapi", "cfgmgr32", "wintrust", "msi", "propsys",
    "profapi", "userenv", "combase", "msctf", "shcore", "windows.storage",
    "powrprof", "cryptbase", "iphlpapi", "dnsapi", "nsi", "mswsock",
))
CDN_ENDPOINTS = ("151.101.1.69:443", "151.101.65.69:443", "104.16.24.35:443")
ATTACKER_ENDPOINTS = ("185.220.101.4:4444", "45.137.21.9:8080", "91.219.236.18:443",
                      "193.42.33.7:1337", "5.188.86.172:6667")
MALWARE_NAMES = ("winupdsvc", "svchelper", "msdtcx", "chromeupd", "sysmond", "wuauclt32",
                 "rtkaudio", "igfxtray64", "onedrivesync", "dllhostx")
STARTUP = f"{USER}/appdata/roaming/microsoft/windows/start menu/programs/startup"

TICK = 1000  # benign events sit on millisecond boundaries; injected ones go between


@dataclass(frozen=True)
class Stage:
    """One installer process.

    ``image`` may contain ``{tmp}`` (a per-trace random temp directory) and
    ``{app}``.  ``parent`` is the index of the launching stage, or None for
    the root that the shell starts.
    """

    image: str
    parent: int | None = None
    dlls: int = 8
    reads: tuple[str, ...] = ()
    writes: tuple[str, ...] = ()
    extra_writes: int = 0
    temp_files: int = 0
    sockets: tuple[str, ...] = ()


@dataclass(frozen=True)
class InstallerTemplate:
    name: str
    installer: str
    app_dir: str
    stages: tuple[Stage, ...]
    targets: tuple[str, ...]
    count_noise: float = 0.2
    temp_random_rate: float = 0.5
    service_catalog: bool = False

    def __post_init__(self):
        if not self.stages or self.stages[0].parent is not None:
            raise ValueError("first stage must be the root")
        written = {w.replace("{app}", self.app_dir) for s in self.stages for w in s.writes}
        for t in self.targets:
            if t.replace("{app}", self.app_dir) not in written:
                raise ValueError(f"target {t} is never written")


@dataclass(frozen=True)
class MalwareProfile:
    beacon: bool = False
    payload_drop: bool = False
    spawn_shell: bool = False
    mass_writes: bool = False
    beacons: int = 3
    mass_files: int = 20
    dlls: int = 6

    def __post_init__(self):
        if not (self.beacon or self.payload_drop or self.spawn_shell or self.mass_writes):
            raise ValueError("a malware profile needs at least one behavior")

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}


PROFILES = {
    "beacon": MalwareProfile(beacon=True),
    "dropper": MalwareProfile(beacon=True, payload_drop=True),
    "shell": MalwareProfile(spawn_shell=True),
    "ransom": MalwareProfile(mass_writes=True),
    "full": MalwareProfile(beacon=True, payload_drop=True, spawn_shell=True, mass_writes=True),
}


@dataclass
class Trace:
    events: list[AuditEvent]
    targets: list[str]
    labels: dict = field(default_factory=dict)
    meta: dict = field(default_factory=dict)

    @property
    def malicious(self) -> bool:
        return self.labels.get("label") == "malicious"

    def sidecar(self) -> dict:
        return {**self.labels, "targets": list(self.targets), "meta": self.meta}

    def write(self, stem) -> tuple[str, str]:
        """Write ``<stem>.jsonl`` and its ``<stem>.labels.json`` sidecar."""
        trace_path, label_path = f"{stem}.jsonl", f"{stem}.labels.json"
        with open(trace_path, "w", encoding="utf-8") as fh:
            fh.write(serialize_events(self.events))
        with open(label_path, "w", encoding="utf-8") as fh:
            json.dump(self.sidecar(), fh, indent=1, sort_keys=True)
        return trace_path, label_path


class _Builder:
    """Hands out entity ids and collects events."""

    def __init__(self, events: Sequence[AuditEvent] = ()):
        self.events = list(events)
        self.files: dict[str, str] = {}
        self.sockets: dict[str, str] = {}
        self.counter = 0
        for ev in self.events:
            for ident in (ev.subject_id, ev.object_id):
                self.counter = max(self.counter, int(ident[1:]))
            if ev.object_kind is EntityKind.FILE:
                self.files.setdefault(ev.object_name, ev.object_id)
            elif ev.object_kind is EntityKind.SOCKET:
                self.sockets.setdefault(ev.object_name, ev.object_id)
        self.names: dict[str, str] = {}
        for ev in self.events:
            self.names[ev.subject_id] = ev.subject_name
            self.names[ev.object_id] = ev.object_name
        self.new_ids: list[str] = []

    def _next(self, prefix: str) -> str:
        self.counter += 1
        ident = f"{prefix}{self.counter:05d}"
        self.new_ids.append(ident)
        return ident

    def process(self, image: str) -> str:
        pid = self._next("p")
        self.names[pid] = image
        return pid

    def file(self, path: str) -> str:
        if path not in self.files:
            self.files[path] = self._next("f")
            self.names[self.files[path]] = path
        return self.files[path]

    def socket(self, addr: str) -> str:
        if addr not in self.sockets:
            self.sockets[addr] = self._next("s")
            self.names[self.sockets[addr]] = addr
        return self.sockets[addr]

    def emit(self, ts: int, pid: str, rel: Relation, obj: str, kind: EntityKind) -> None:
        self.events.append(AuditEvent(int(ts), pid, self.names[pid], obj, self.names[obj],
                                      kind, rel))

    def start(self, ts, parent, child):
        self.emit(ts, parent, Relation.START, child, EntityKind.PROCESS)

    def end(self, ts, parent, child):
        self.emit(ts, parent, Relation.END, child, EntityKind.PROCESS)

    def read(self, ts, pid, path):
        self.emit(ts, pid, Relation.READ, self.file(path), EntityKind.FILE)

    def write(self, ts, pid, path):
        self.emit(ts, pid, Relation.WRITE, self.file(path), EntityKind.FILE)

    def execute(self, ts, pid, path):
        self.emit(ts, pid, Relation.EXECUTE, self.file(path), EntityKind.FILE)

    def delete(self, ts, pid, path):
        self.emit(ts, pid, Relation.DELETE, self.file(path), EntityKind.FILE)

    def send(self, ts, pid, addr):
        self.emit(ts, pid, Relation.SEND, self.socket(addr), EntityKind.SOCKET)

    def receive(self, ts, pid, addr):
        self.emit(ts, pid, Relation.RECEIVE, self.socket(addr), EntityKind.SOCKET)


def random_name(rng: np.random.Generator, prefix: str = "ns", ext: str = ".tmp") -> str:
    """Temp-style name whose hex part always contains a digit."""
    digits = rng.integers(0, 16, size=8)
    digits[int(rng.integers(8))] = int(rng.integers(10))
    return prefix + "".join("0123456789abcdef"[d] for d in digits) + ext


def _jitter(rng, n: int, noise: float) -> int:
    if n <= 0 or noise <= 0:
        return n
    spread = max(1, int(round(n * noise)))
    return max(0, n + int(rng.integers(-spread, spread + 1)))


def gen_benign_trace(template: InstallerTemplate, seed: int) -> Trace:
    """Deterministic benign trace for ``template``; returns events and targets."""
    rng = np.random.default_rng([seed, sum(template.name.encode())])
    b = _Builder()
    ts = 10**12 + int(rng.integers(0, 10**9)) * TICK

    def tick(n=None):
        nonlocal ts
        ts += TICK * (int(rng.integers(1, 20)) if n is None else n)
        return ts

    app = template.app_dir
    tmpdir = f"{TEMP}/" + (random_name(rng, "is-", ".tmp") if rng.random() < template.temp_random_rate
                           else f"{template.name}_setup")
    installer_path = f"{DOWNLOADS}/{template.installer}"

    # long-lived shell with old history; launches the browser
    explorer = b.process(EXPLORER)
    old = ts - 3 * 86400 * 10**6
    b.read(old, explorer, f"{USER}/desktop/desktop.ini")
    b.read(old + TICK, explorer, f"{SYSTEM32}/shell32.dll")
    # machine-to-machine variation in the shell and browser history
    varied = template.count_noise > 0

    def some(lo, hi):
        k = int(rng.integers(lo, hi)) if varied else lo
        return sorted(rng.choice(len(SYSTEM_DLLS), k, replace=False))

    for i in some(1, 5):
        b.read(ts - 600 * 10**6 - (60 - int(i)) * 10**6, explorer, SYSTEM_DLLS[i])
    browser = b.process(BROWSER)
    b.start(ts - 600 * 10**6, explorer, browser)
    for i in some(4, 10):
        b.read(tick(), browser, SYSTEM_DLLS[i])
    cdn = CDN_ENDPOINTS[int(rng.integers(len(CDN_ENDPOINTS)))]
    for _ in range(int(rng.integers(1, 4)) if varied else 1):
        b.send(tick(), browser, cdn)
        b.receive(tick(), browser, cdn)
    b.write(tick(), browser, installer_path)
    b.read(tick(), explorer, f"{USER}/appdata/roaming/microsoft/windows/recent/{template.name}.lnk")
    tick(1000)  # the user double-clicks about a second later

    if template.service_catalog:
        svc = b.process(SVCHOST)
        b.read(old + 2 * TICK, svc, f"{SYSTEM32}/config/system")
        b.write(tick(), svc, f"{SYSTEM32}/catroot2/{template.name}.cat")

    def resolve(path: str) -> str:
        return path.replace("{app}", app).replace("{tmp}", tmpdir)

    dll_order = rng.permutation(len(SYSTEM_DLLS))
    procs: list[str] = []
    lineage = []
    for idx, stage in enumerate(template.stages):
        image = installer_path if stage.parent is None else resolve(stage.image)
        pid = b.process(image)
        procs.append(pid)
        lineage.append(pid)
        parent = explorer if stage.parent is None else procs[stage.parent]
        if stage.parent is None:
            b.start(tick(), parent, pid)
            b.execute(tick(), pid, installer_path)
        else:
            b.start(tick(), parent, pid)
            b.execute(tick(), pid, image)
        n_dlls = min(len(SYSTEM_DLLS), _jitter(rng, stage.dlls, template.count_noise))
        base = sorted(dll_order[:n_dlls])
        for i in base:
            b.read(tick(), pid, SYSTEM_DLLS[i])
        for r in stage.reads:
            b.read(tick(), pid, resolve(r))
        if template.service_catalog and stage.parent is None:
            b.read(tick(), pid, f"{SYSTEM32}/catroot2/{template.name}.cat")
        for addr in stage.sockets:
            addr = cdn if addr == "{cdn}" else addr
            b.send(tick(), pid, addr)
            b.receive(tick(), pid, addr)
        temps = []
        for i in range(_jitter(rng, stage.temp_files, template.count_noise)):
            if rng.random() < template.temp_random_rate:
                name = f"{TEMP}/" + random_name(rng)
            else:
                name = f"{tmpdir}/chunk{i}.bin"
            temps.append(name)
            b.write(tick(), pid, name)
        for i in range(_jitter(rng, stage.extra_writes, template.count_noise)):
            b.write(tick(), pid, f"{app}/resources/res{i:03d}.dat")
        for w in stage.writes:
            b.write(tick(), pid, resolve(w))
        for name in temps:
            b.delete(tick(), pid, name)
    # parents reap their children once everything is written
    for idx in range(len(template.stages) - 1, 0, -1):
        stage = template.stages[idx]
        b.end(tick(), procs[stage.parent], procs[idx])

    targets = [resolve(t) for t in template.targets]
    labels = {"label": "benign", "template": template.name, "seed": seed, "mode": None,
              "malicious_ids": [], "malicious_processes": []}
    events = sorted(b.events, key=lambda e: e.timestamp)
    meta = {"root": procs[0], "lineage": lineage, "explorer": explorer, "browser": browser,
            "installer_file": b.files[installer_path],
            "span": [events[0].timestamp, events[-1].timestamp]}
    return Trace(events, targets, labels, meta)


def _slot(events: Sequence[AuditEvent], rng, lo: int | None = None) -> int:
    """A free millisecond gap inside the trace, at or after ``lo``."""
    times = sorted({e.timestamp for e in events})
    candidates = [t for t in times if (lo is None or t >= lo) and t + TICK not in times]
    if not candidates:
        return times[-1]
    return candidates[int(rng.integers(len(candidates)))]


def _malware_body(b: _Builder, rng, pid: str, image: str, profile: MalwareProfile,
                  clock) -> list[str]:
    """Malware activity after it is started; returns the extra process ids."""
    extra = []
    b.execute(clock(), pid, image)
    for dll in SYSTEM_DLLS[:profile.dlls]:
        b.read(clock(), pid, dll)
    c2 = ATTACKER_ENDPOINTS[int(rng.integers(len(ATTACKER_ENDPOINTS)))]
    if profile.beacon:
        for _ in range(profile.beacons):
            b.send(clock(), pid, c2)
            b.receive(clock(), pid, c2)
    if profile.mass_writes:
        for i in range(profile.mass_files):
            doc = f"{USER}/documents/report{i:02d}.docx"
            b.read(clock(), pid, doc)
            b.write(clock(), pid, doc + ".locked")
    if profile.payload_drop:
        payload = f"{TEMP}/" + random_name(rng, "pl", ".exe")
        if not profile.beacon:
            b.receive(clock(), pid, c2)
        b.write(clock(), pid, payload)
        child = b.process(payload)
        extra.append(child)
        b.start(clock(), pid, child)
        b.execute(clock(), child, payload)
        b.send(clock(), child, c2)
        b.write(clock(), child, f"{USER}/appdata/roaming/" + random_name(rng, "svc", ".exe"))
    if profile.spawn_shell:
        shell = b.process(f"{SYSTEM32}/cmd.exe")
        extra.append(shell)
        b.start(clock(), pid, shell)
        b.execute(clock(), shell, f"{SYSTEM32}/cmd.exe")
        b.read(clock(), shell, image)
        b.write(clock(), shell, f"{USER}/appdata/roaming/{image.rsplit('/', 1)[-1]}")
    # every sample persists itself, which also makes it an installed executable
    b.write(clock(), pid, f"{STARTUP}/{image.rsplit('/', 1)[-1]}")
    return extra


def _malware_image(rng) -> str:
    if rng.random() < 0.5:
        return f"{TEMP}/" + random_name(rng, "", ".exe")
    return f"{USER}/appdata/roaming/{MALWARE_NAMES[int(rng.integers(len(MALWARE_NAMES)))]}.exe"


def _finish(trace: Trace, b: _Builder, mode: str, profile: MalwareProfile, seed: int,
            meta_updates: dict) -> Trace:
    events = sorted(b.events, key=lambda e: e.timestamp)
    new_targets = [p for p in _written_exes(events) if p not in trace.targets]
    labels = dict(trace.labels)
    prev_ids = list(labels.get("malicious_ids", []))
    prev_procs = list(labels.get("malicious_processes", []))
    new_procs = [i for i in b.new_ids if i.startswith("p")]
    labels.update({
        "label": "malicious", "mode": mode if not labels.get("mode") else f"{labels['mode']}+{mode}",
        "profile": profile.to_dict(), "inject_seed": seed,
        "malicious_ids": prev_ids + [i for i in b.new_ids if not i.startswith("s")],
        "malicious_processes": prev_procs + new_procs,
    })
    meta = {**trace.meta, **meta_updates}
    return Trace(events, list(trace.targets) + new_targets, labels, meta)


def _written_exes(events) -> list[str]:
    out = []
    for e in events:
        if e.relation is Relation.WRITE and e.object_name.endswith(".exe") and e.object_name not in out:
            out.append(e.object_name)
    return out


def inject_bundle(trace: Trace, profile: MalwareProfile, seed: int) -> Trace:
    """Wrap the installer: a new root starts both the original root and malware.

    Every benign event is kept unchanged; new events use free timestamps.
    """
    rng = np.random.default_rng([seed, 1])
    b = _Builder(trace.events)
    root = trace.meta["root"]
    root_start = min(e.timestamp for e in trace.events
                     if e.object_id == root and e.relation is Relation.START)
    ts = root_start - TICK  # the gap left before the user launched the installer
    step = max(1, TICK // 64)

    def clock():
        nonlocal ts
        ts += step
        return ts

    stem = b.names[trace.meta["installer_file"]].rsplit("/", 1)[-1].rsplit(".", 1)[0]
    wrapper_file = f"{DOWNLOADS}/{stem}_" + random_name(rng, "", ".exe")
    wrapper = b.process(wrapper_file)
    b.write(clock(), trace.meta["browser"], wrapper_file)
    b.start(clock(), trace.meta["explorer"], wrapper)
    b.execute(clock(), wrapper, wrapper_file)
    for dll in SYSTEM_DLLS[:4]:
        b.read(clock(), wrapper, dll)
    image = _malware_image(rng)
    b.write(clock(), wrapper, image)
    b.start(clock(), wrapper, root)
    malware = b.process(image)
    b.start(clock(), wrapper, malware)
    # malware runs in the background while the installer proceeds
    ts = _slot(trace.events, rng, lo=root_start)
    _malware_body(b, rng, malware, image, profile, clock)
    return _finish(trace, b, "bundle", profile, seed, {"root": wrapper})


def inject_embed(trace: Trace, profile: MalwareProfile, seed: int) -> Trace:
    """An installer-lineage process drops and launches malware mid-install."""
    rng = np.random.default_rng([seed, 2])
    b = _Builder(trace.events)
    lineage = trace.meta["lineage"]
    host = lineage[int(rng.integers(len(lineage)))]
    host_times = [e.timestamp for e in trace.events if e.subject_id == host]
    first, last = min(host_times), max(host_times)
    inside = [e for e in trace.events if first <= e.timestamp < last] or trace.events
    ts = _slot(inside, rng)
    step = max(1, TICK // 64)

    def clock():
        nonlocal ts
        ts += step
        return ts

    image = _malware_image(rng)
    b.write(clock(), host, image)
    malware = b.process(image)
    b.start(clock(), host, malware)
    _malware_body(b, rng, malware, image, profile, clock)
    return _finish(trace, b, "embed", profile, seed, {"host": host})


def _app(vendor: str, product: str) -> str:
    return f"c:/program files/{vendor}/{product}"


TEMPLATES: dict[str, InstallerTemplate] = {}


def _register(t: InstallerTemplate) -> None:
    TEMPLATES[t.name] = t


_register(InstallerTemplate(
    name="ziplite",
    installer="ziplite-2.1-setup.exe",
    app_dir=_app("ziplite", "ziplite"),
    stages=(
        Stage("root", None, dlls=10, writes=("{app}/ziplite.exe", "{app}/ziplite.dll",
                                             "{app}/license.txt"), temp_files=1),
    ),
    targets=("{app}/ziplite.exe",),
))

_register(InstallerTemplate(
    name="textpad",
    installer="textpad_8.4_installer.exe",
    app_dir=_app("textpad", "textpad"),
    stages=(
        Stage("root", None, dlls=10, writes=("{tmp}/setup.tmp",), temp_files=2),
        Stage("{tmp}/setup.tmp", 0, dlls=14, extra_writes=25,
              reads=(f"{SYSTEM32}/msvcp140.dll",),
              writes=("{app}/plugins/spell.dll", "{app}/plugins/lexer.dll",
                      "{app}/textpad.exe", "{app}/uninstall.exe"), temp_files=3),
    ),
    targets=("{app}/textpad.exe", "{app}/uninstall.exe"),
))

_register(InstallerTemplate(
    name="mediabox",
    installer="mediabox-3.0.12-win64.exe",
    app_dir=_app("mediabox", "mediabox"),
    stages=(
        Stage("root", None, dlls=12, writes=("{tmp}/setup.tmp",), temp_files=3),
        Stage("{tmp}/setup.tmp", 0, dlls=16, extra_writes=70, sockets=("{cdn}",),
              writes=("{app}/codecs/avcodec.dll", "{app}/codecs/avformat.dll",
                      "{app}/mediabox.exe", "{app}/updater.exe"), temp_files=4),
        Stage(f"{SYSTEM32}/regsvr32.exe", 1, dlls=8, reads=("{app}/codecs/avcodec.dll",),
              writes=("{app}/codecs/registered.cfg",)),
        Stage(f"{SYSTEM32}/regsvr32.exe", 1, dlls=8, reads=("{app}/codecs/avformat.dll",),
              writes=("{app}/codecs/registered2.cfg",)),
        Stage("{app}/updater.exe", 1, dlls=10, sockets=("{cdn}",),
              writes=("{app}/update/manifest.xml", "{app}/update/mbupdate.exe")),
    ),
    targets=("{app}/mediabox.exe", "{app}/update/mbupdate.exe"),
    service_catalog=False,
))

_register(InstallerTemplate(
    name="devkit",
    installer="devkit-11.2-x64.msi.exe",
    app_dir=_app("devkit", "devkit 11"),
    stages=(
        Stage("root", None, dlls=12, writes=("{tmp}/devkit.msi",), temp_files=3),
        Stage(f"{SYSTEM32}/msiexec.exe", 0, dlls=20, reads=("{tmp}/devkit.msi",),
              extra_writes=200, temp_files=6,
              writes=("{app}/bin/devkit.exe", "{app}/bin/dkcc.exe", "{app}/bin/dkrt.dll",
                      "{app}/bin/dklink.exe", "{tmp}/ca_setup.exe")),
        Stage("{tmp}/ca_setup.exe", 1, dlls=10, reads=("{app}/bin/dkrt.dll",),
              writes=("{app}/config/env.cfg", "{app}/bin/dkenv.exe")),
        Stage(f"{SYSTEM32}/cmd.exe", 1, dlls=5, reads=("{app}/config/env.cfg",),
              writes=("{app}/logs/postinstall.log",)),
        Stage("{app}/bin/dkcc.exe", 1, dlls=8, reads=("{app}/bin/dkrt.dll",),
              writes=("{app}/cache/index.bin", "{app}/bin/dkserver.exe"), temp_files=4),
    ),
    targets=("{app}/bin/devkit.exe", "{app}/bin/dkcc.exe", "{app}/bin/dklink.exe",
             "{app}/bin/dkenv.exe", "{app}/bin/dkserver.exe"),
    service_catalog=True,
))

_register(InstallerTemplate(
    name="officepro",
    installer="officepro_2024_setup.exe",
    app_dir=_app("officepro", "office24"),
    stages=(
        Stage("root", None, dlls=14, sockets=("{cdn}",), writes=("{tmp}/bootstrap.exe",),
              temp_files=4),
        Stage("{tmp}/bootstrap.exe", 0, dlls=18, sockets=("{cdn}", "40.126.32.74:443"),
              extra_writes=180, temp_files=8,
              writes=("{app}/root/writer.exe", "{app}/root/sheets.exe", "{app}/root/mso.dll",
                      "{tmp}/integrator.exe", "{tmp}/licsetup.exe")),
        Stage("{tmp}/integrator.exe", 1, dlls=12, reads=("{app}/root/mso.dll",),
              extra_writes=180, writes=("{app}/root/slides.exe", "{app}/root/mail.exe")),
        Stage("{tmp}/licsetup.exe", 1, dlls=10, sockets=("40.126.32.74:443",),
              writes=("{app}/licenses/license.dat", "{app}/root/licagent.exe")),
        Stage(f"{SYSTEM32}/regsvr32.exe", 2, dlls=8, reads=("{app}/root/mso.dll",),
              writes=("{app}/root/registered.cfg",)),
        Stage("{app}/root/writer.exe", 1, dlls=16, reads=("{app}/root/mso.dll",),
              extra_writes=120, writes=("{app}/root/templates/normal.dotm",
                                        "{app}/root/wrtconv.exe"), temp_files=6),
        Stage(f"{SYSTEM32}/cmd.exe", 2, dlls=5, reads=("{app}/licenses/license.dat",),
              writes=("{app}/logs/setup.log",)),
    ),
    targets=("{app}/root/writer.exe", "{app}/root/sheets.exe", "{app}/root/slides.exe",
             "{app}/root/mail.exe", "{app}/root/licagent.exe", "{app}/root/wrtconv.exe"),
    service_catalog=True,
))


def gen_malicious_trace(template: InstallerTemplate, seed: int, mode: str = "bundle",
                        profile: MalwareProfile | str = "dropper") -> Trace:
    if isinstance(profile, str):
        profile = PROFILES[profile]
    benign = gen_benign_trace(template, seed)
    inject = {"bundle": inject_bundle, "embed": inject_embed}[mode]
    return inject(benign, profile, seed)


def zero_jitter(template: InstallerTemplate) -> InstallerTemplate:
    return replace(template, count_noise=0.0, temp_random_rate=0.0)
