"""Sandboxed skill execution: one OS process per invocation, cwd pinned to the
session scratch directory, environment reduced to an allowlist, hard timeout,
and artifact capture via a before/after filesystem snapshot.

When running as root (and a ``nobody`` account exists) the child is started
with privileges dropped to nobody, so writes outside the world-writable
scratch directory fail at the OS level. Otherwise execution falls back to a
plain subprocess; scratch directories are nested one level inside a private
session directory so single-level escapes stay session-private. Container
isolation can substitute later behind the same interface.
"""

from __future__ import annotations

import json
import os
import signal
import subprocess
import sys
import threading
import time
import uuid
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping

from agentloom.schema import SkillSpec

STDIO_LIMIT_BYTES = 64 * 1024
TIMEOUT_GRACE_S = 0.5
TRUNCATION_FLAG = "\n[truncated: output exceeded 64 KiB]"

MEDIA_KINDS = ("image", "code", "document", "data", "other")

_EXTENSION_KINDS = {
    "png": "image", "jpg": "image", "jpeg": "image", "svg": "image",
    "py": "code", "js": "code", "sh": "code", "rs": "code",
    "md": "document", "pdf": "document", "txt": "document",
    "csv": "data", "json": "data",
}

# Flip to False to force plain-subprocess execution even as root.
ALLOW_PRIVILEGE_DROP = True


@dataclass(frozen=True)
class ArtifactRef:
    path: str  # relative to the session workdir, no traversal
    bytes: int
    media_kind: str

    def to_dict(self) -> dict:
        return {"path": self.path, "bytes": self.bytes, "media_kind": self.media_kind}

    @staticmethod
    def from_dict(obj: Mapping[str, Any]) -> "ArtifactRef":
        return ArtifactRef(path=str(obj["path"]), bytes=int(obj["bytes"]),
                           media_kind=str(obj["media_kind"]))


@dataclass(frozen=True)
class ToolResult:
    status: str  # success | failure
    exit_code: int
    stdout: str
    stderr: str
    duration_s: float
    artifacts: tuple[ArtifactRef, ...] = ()
    failure_kind: str | None = None  # nonzero_exit | timeout | spawn_error

    def to_dict(self) -> dict:
        return {
            "status": self.status,
            "exit_code": self.exit_code,
            "stdout": self.stdout,
            "stderr": self.stderr,
            "duration_s": self.duration_s,
            "artifacts": [a.to_dict() for a in self.artifacts],
            "failure_kind": self.failure_kind,
        }

    @staticmethod
    def from_dict(obj: Mapping[str, Any]) -> "ToolResult":
        return ToolResult(
            status=str(obj["status"]),
            exit_code=int(obj["exit_code"]),
            stdout=str(obj["stdout"]),
            stderr=str(obj["stderr"]),
            duration_s=float(obj["duration_s"]),
            artifacts=tuple(ArtifactRef.from_dict(a) for a in obj.get("artifacts", [])),
            failure_kind=obj.get("failure_kind"),
        )


@dataclass(frozen=True)
class ToolInvocation:
    session_workdir: Path
    timeout_s: float
    skill: SkillSpec | None = None
    inline_code: str | None = None
    inline_language: str = "shell"
    arguments: Mapping[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        if (self.skill is None) == (self.inline_code is None):
            raise ValueError("exactly one of skill or inline_code must be given")
        if self.timeout_s <= 0:
            raise ValueError("timeout_s must be > 0")

    @property
    def language(self) -> str:
        return self.skill.language if self.skill else self.inline_language

    @property
    def source(self) -> str:
        return self.skill.source if self.skill else (self.inline_code or "")

    @property
    def name(self) -> str:
        return self.skill.name if self.skill else "inline_code"

    @property
    def env_allowlist(self) -> tuple[str, ...]:
        return self.skill.env_allowlist if self.skill else ()


def classify_artifact(path: str | Path) -> str:
    ext = Path(path).suffix.lstrip(".").lower()
    return _EXTENSION_KINDS.get(ext, "other")


def _snapshot(workdir: Path, skip: set[str]) -> dict[str, tuple[int, int]]:
    seen: dict[str, tuple[int, int]] = {}
    for root, _dirs, files in os.walk(workdir):
        for name in files:
            full = Path(root) / name
            rel = str(full.relative_to(workdir))
            if rel in skip:
                continue
            try:
                st = full.lstat()
            except OSError:
                continue
            seen[rel] = (st.st_size, st.st_mtime_ns)
    return seen


def snapshot_diff(before: Mapping[str, tuple[int, int]],
                  after: Mapping[str, tuple[int, int]]) -> list[str]:
    """Paths created or modified between two snapshots, sorted."""
    return sorted(rel for rel, stat in after.items() if before.get(rel) != stat)


_drop_lock = threading.Lock()
_drop_cache: dict[str, tuple[int, int] | None] = {}


def _resolve_nobody() -> tuple[int, int] | None:
    if not ALLOW_PRIVILEGE_DROP or os.name != "posix" or os.geteuid() != 0:
        return None
    try:
        import grp
        import pwd

        uid = pwd.getpwnam("nobody").pw_uid
        try:
            gid = grp.getgrnam("nogroup").gr_gid
        except KeyError:
            gid = pwd.getpwnam("nobody").pw_gid
        return uid, gid
    except (ImportError, KeyError):
        return None


def _drop_user_for(workdir: Path) -> tuple[int, int] | None:
    """Probe whether the sacrificial user can work inside this workdir."""
    key = str(workdir)
    with _drop_lock:
        if key in _drop_cache:
            return _drop_cache[key]
    ids = _resolve_nobody()
    result = None
    if ids is not None:
        try:
            os.chmod(workdir, 0o777)
            probe = subprocess.run(
                ["/bin/sh", "-c", "touch .agentloom_probe && rm -f .agentloom_probe"],
                cwd=str(workdir), user=ids[0], group=ids[1], extra_groups=[],
                capture_output=True, timeout=10,
            )
            if probe.returncode == 0:
                result = ids
        except (OSError, subprocess.SubprocessError):
            result = None
    with _drop_lock:
        _drop_cache[key] = result
    return result


def _truncate(raw: bytes) -> str:
    if len(raw) <= STDIO_LIMIT_BYTES:
        return raw.decode("utf-8", errors="replace")
    return raw[:STDIO_LIMIT_BYTES].decode("utf-8", errors="replace") + TRUNCATION_FLAG


def _argv_payload(arguments: Mapping[str, Any]) -> list[str]:
    out = []
    for key in sorted(arguments):
        value = arguments[key]
        out.append(f"{key}={value if isinstance(value, str) else json.dumps(value, sort_keys=True)}")
    return out


def execute(inv: ToolInvocation) -> ToolResult:
    """Run one skill (or inline code block) to completion inside the sandbox.

    Never raises for execution problems: spawn failures, nonzero exits, and
    timeouts are all reported in the result.
    """
    workdir = Path(inv.session_workdir)
    if not workdir.is_dir():
        return ToolResult(status="failure", exit_code=-1, stdout="",
                          stderr=f"session workdir does not exist: {workdir}",
                          duration_s=0.0, failure_kind="spawn_error")

    suffix = "sh" if inv.language == "shell" else "py"
    script_name = f"._skill_{uuid.uuid4().hex[:8]}.{suffix}"
    script_path = workdir / script_name
    script_path.write_text(inv.source, encoding="utf-8")
    os.chmod(script_path, 0o644)

    # Relative script path: the child resolves it via its cwd, so a dropped
    # user needs no traversal rights on the workdir's ancestors.
    interpreter = "/bin/sh" if inv.language == "shell" else sys.executable
    argv = [interpreter, script_name] + _argv_payload(inv.arguments)

    env = {
        "PATH": os.environ.get("PATH", "/usr/local/bin:/usr/bin:/bin"),
        "HOME": str(workdir),
        "LANG": os.environ.get("LANG", "C.UTF-8"),
        "SKILL_ARGS": json.dumps(dict(inv.arguments), sort_keys=True),
    }
    for var in inv.env_allowlist:
        if var in os.environ:
            env[var] = os.environ[var]

    drop = _drop_user_for(workdir)
    run_kwargs: dict[str, Any] = {}
    if drop is not None:
        run_kwargs = {"user": drop[0], "group": drop[1], "extra_groups": []}

    skip = {script_name}
    before = _snapshot(workdir, skip)

    start = time.monotonic()
    try:
        proc = subprocess.Popen(
            argv, cwd=str(workdir), env=env, stdout=subprocess.PIPE,
            stderr=subprocess.PIPE, stdin=subprocess.DEVNULL,
            start_new_session=True, **run_kwargs,
        )
    except (OSError, ValueError, subprocess.SubprocessError) as e:
        script_path.unlink(missing_ok=True)
        return ToolResult(status="failure", exit_code=-1, stdout="", stderr=str(e),
                          duration_s=time.monotonic() - start, failure_kind="spawn_error")

    timed_out = False
    try:
        out, err = proc.communicate(timeout=inv.timeout_s)
    except subprocess.TimeoutExpired:
        timed_out = True
        try:
            os.killpg(proc.pid, signal.SIGKILL)
        except (ProcessLookupError, PermissionError):
            proc.kill()
        out, err = proc.communicate()
    duration = time.monotonic() - start

    after = _snapshot(workdir, skip)
    script_path.unlink(missing_ok=True)
    artifacts = tuple(
        ArtifactRef(path=rel, bytes=after[rel][0], media_kind=classify_artifact(rel))
        for rel in snapshot_diff(before, after)
    )

    exit_code = proc.returncode
    if timed_out:
        status, failure_kind = "failure", "timeout"
    elif exit_code == 0:
        status, failure_kind = "success", None
    else:
        status, failure_kind = "failure", "nonzero_exit"

    return ToolResult(
        status=status,
        exit_code=exit_code,
        stdout=_truncate(out or b""),
        stderr=_truncate(err or b""),
        duration_s=duration,
        artifacts=artifacts,
        failure_kind=failure_kind,
    )
