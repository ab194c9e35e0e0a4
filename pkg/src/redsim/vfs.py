"""Copy-on-write virtual filesystems.

Machines built from the same template share one immutable TemplateFS.  Each
machine gets a MachineFS overlay that records only its own whole-file writes
and deletions; reads fall through to the template via a shared LRU cache so
a thousand idle machines cost one backing-store read per distinct path.
"""
from __future__ import annotations

import hashlib
import json
import logging
import posixpath
from collections import OrderedDict
from pathlib import Path

from .errors import FileError, ValidationError

logger = logging.getLogger(__name__)

MANIFEST_NAME = "template.json"


def _norm(path: str) -> str:
    if not path.startswith("/"):
        raise FileError(f"path {path!r} is not absolute")
    norm = posixpath.normpath(path)
    return norm


class TemplateFS:
    """Immutable file tree shared by every machine built from it."""

    def __init__(self, template_id: str, files: dict[str, bytes], default_mode: int = 0o644):
        self.id = template_id
        self.default_mode = default_mode
        self._files: dict[str, bytes] = {}
        self._dirs: set[str] = {"/"}
        for path, data in files.items():
            path = _norm(path)
            if isinstance(data, str):
                data = data.encode("utf-8")
            self._files[path] = bytes(data)
            parent = posixpath.dirname(path)
            while parent not in self._dirs:
                self._dirs.add(parent)
                parent = posixpath.dirname(parent)
        # Counts accesses that would hit the backing store; the cache layer
        # exists to keep this flat.
        self.disk_reads = 0

    @classmethod
    def from_dir(cls, root: str | Path) -> "TemplateFS":
        """Load a template bundle: a directory tree plus a manifest file."""
        root = Path(root)
        manifest_path = root / MANIFEST_NAME
        if not manifest_path.is_file():
            raise ValidationError(f"template bundle has no {MANIFEST_NAME}", str(root))
        manifest = json.loads(manifest_path.read_text())
        if "id" not in manifest:
            raise ValidationError("template manifest has no id", str(manifest_path))
        # The tree lives under files/ so the manifest stays out of it.
        files_root = root / "files"
        files: dict[str, bytes] = {}
        if files_root.is_dir():
            for p in sorted(files_root.rglob("*")):
                if p.is_file():
                    files["/" + p.relative_to(files_root).as_posix()] = p.read_bytes()
        mode = int(manifest.get("default_mode", "644"), 8) if isinstance(
            manifest.get("default_mode"), str) else manifest.get("default_mode", 0o644)
        return cls(manifest["id"], files, mode)

    def read(self, path: str) -> bytes:
        path = _norm(path)
        try:
            data = self._files[path]
        except KeyError:
            raise FileError(f"{path!r} not in template {self.id!r}") from None
        self.disk_reads += 1
        return data

    def exists(self, path: str) -> bool:
        return _norm(path) in self._files

    def is_dir(self, path: str) -> bool:
        return _norm(path) in self._dirs

    def entries(self, dirpath: str) -> set[str]:
        dirpath = _norm(dirpath)
        prefix = "/" if dirpath == "/" else dirpath + "/"
        names: set[str] = set()
        for p in self._files:
            if p.startswith(prefix):
                names.add(p[len(prefix):].split("/", 1)[0])
        for d in self._dirs:
            if d != "/" and d.startswith(prefix):
                names.add(d[len(prefix):].split("/", 1)[0])
        return names

    def paths(self) -> list[str]:
        return sorted(self._files)

    def contents(self) -> dict[str, bytes]:
        """Administrative copy of the whole tree; not a simulated disk access."""
        return dict(self._files)

    def tree_hash(self) -> str:
        h = hashlib.sha256()
        for path in sorted(self._files):
            h.update(path.encode())
            h.update(b"\0")
            h.update(self._files[path])
            h.update(b"\0")
        return h.hexdigest()


class FileCache:
    """Shared LRU over template reads, keyed by (template id, path).

    Only template content is cached; machine-private overlay data never
    enters the cache, so cached bytes can be handed out by reference.
    """

    def __init__(self, capacity: int = 1024):
        if capacity < 1:
            raise ValidationError("cache capacity must be >= 1")
        self.capacity = capacity
        self._entries: OrderedDict[tuple[str, str], bytes] = OrderedDict()
        self.hits = 0
        self.misses = 0

    def __len__(self) -> int:
        return len(self._entries)

    def fetch(self, template: TemplateFS, path: str) -> bytes:
        key = (template.id, _norm(path))
        if key in self._entries:
            self._entries.move_to_end(key)
            self.hits += 1
            return self._entries[key]
        data = template.read(path)
        self.misses += 1
        self._entries[key] = data
        if len(self._entries) > self.capacity:
            self._entries.popitem(last=False)
        return data

    def invalidate(self, template_id: str | None = None) -> None:
        if template_id is None:
            self._entries.clear()
        else:
            for key in [k for k in self._entries if k[0] == template_id]:
                del self._entries[key]


class MachineFS:
    """Per-machine view: template base, private overlay, deletion set.

    Resolution order is deletion set, then overlay, then template.  Writes
    are whole-file copies into the overlay and never touch the template.
    """

    def __init__(self, template: TemplateFS, cache: FileCache | None = None):
        self.template = template
        self.cache = cache
        self.overlay: dict[str, bytes] = {}
        self.deleted: set[str] = set()

    def _is_deleted(self, path: str) -> bool:
        probe = path
        while True:
            if probe in self.deleted:
                return True
            if probe == "/":
                return False
            probe = posixpath.dirname(probe)

    def _dir_exists(self, dirpath: str) -> bool:
        if dirpath == "/":
            return True
        if self._is_deleted(dirpath):
            return False
        if self.template.is_dir(dirpath):
            return True
        prefix = dirpath + "/"
        return any(p == dirpath or p.startswith(prefix) for p in self.overlay)

    def exists(self, path: str) -> bool:
        path = _norm(path)
        if self._is_deleted(path):
            return False
        return path in self.overlay or self.template.exists(path)

    def read(self, path: str) -> bytes:
        path = _norm(path)
        if self._is_deleted(path):
            raise FileError(f"{path!r} was deleted")
        if path in self.overlay:
            return self.overlay[path]
        if self.cache is not None:
            if not self.template.exists(path):
                raise FileError(f"{path!r} does not exist")
            return self.cache.fetch(self.template, path)
        return self.template.read(path)

    def write(self, path: str, data: bytes | str) -> None:
        # Missing parents are created implicitly; the shell has no mkdir,
        # so a strict check would make fresh paths unreachable.
        path = _norm(path)
        if isinstance(data, str):
            data = data.encode("utf-8")
        self.overlay[path] = bytes(data)
        self.deleted.discard(path)
        probe = posixpath.dirname(path)
        while probe != "/" and probe in self.deleted:
            self.deleted.discard(probe)
            probe = posixpath.dirname(probe)

    def delete(self, path: str) -> None:
        path = _norm(path)
        if not self.exists(path) and not self._dir_exists(path):
            raise FileError(f"{path!r} does not exist")
        self.deleted.add(path)
        self.overlay.pop(path, None)
        prefix = path + "/"
        for p in [p for p in self.overlay if p.startswith(prefix)]:
            del self.overlay[p]

    def list_dir(self, dirpath: str) -> list[str]:
        dirpath = _norm(dirpath)
        if not self._dir_exists(dirpath):
            raise FileError(f"{dirpath!r} does not resolve")
        names = self.template.entries(dirpath)
        prefix = "/" if dirpath == "/" else dirpath + "/"
        for p in self.overlay:
            if p.startswith(prefix):
                names.add(p[len(prefix):].split("/", 1)[0])
        visible = []
        for name in names:
            full = prefix + name
            if not self._is_deleted(full):
                visible.append(name)
        return sorted(visible)

    def private_entries(self) -> int:
        return len(self.overlay)

    def state(self) -> dict:
        return {
            "overlay": {p: self.overlay[p].decode("utf-8", "surrogateescape")
                        for p in sorted(self.overlay)},
            "deleted": sorted(self.deleted),
        }

    def load_state(self, state: dict) -> None:
        self.overlay = {p: d.encode("utf-8", "surrogateescape")
                        for p, d in state.get("overlay", {}).items()}
        self.deleted = set(state.get("deleted", []))
