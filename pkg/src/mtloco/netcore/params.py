"""Named parameter storage, flat views and the on-disk checkpoint format."""
from __future__ import annotations

import json
import os
import shutil
import tempfile
from collections import OrderedDict
from pathlib import Path

import numpy as np

from ..errors import ArgumentError, ConfigurationError
from .tensor import Tensor

FORMAT_VERSION = 1


class ParamStore:
    """Ordered mapping ``name -> Tensor`` with a trainable flag per array.

    Insertion order is the canonical order used for flattening, checkpoints
    and gradient-conflict vectors.
    """

    def __init__(self):
        self._params: "OrderedDict[str, Tensor]" = OrderedDict()
        self._trainable: dict[str, bool] = {}

    def add(self, name: str, value, trainable: bool = True) -> Tensor:
        if name in self._params:
            raise ConfigurationError(f"duplicate parameter name {name!r}")
        t = Tensor(np.array(value, dtype=np.float64), requires_grad=True, name=name)
        self._params[name] = t
        self._trainable[name] = trainable
        return t

    def __getitem__(self, name: str) -> Tensor:
        return self._params[name]

    def __contains__(self, name):
        return name in self._params

    def __len__(self):
        return len(self._params)

    def __iter__(self):
        return iter(self._params)

    def names(self, prefix: str | None = None, trainable_only: bool = False) -> list[str]:
        out = []
        for n in self._params:
            if prefix is not None and not n.startswith(prefix):
                continue
            if trainable_only and not self._trainable[n]:
                continue
            out.append(n)
        return out

    def items(self):
        return self._params.items()

    def is_trainable(self, name: str) -> bool:
        return self._trainable[name]

    def set_trainable(self, names, flag: bool):
        for n in names:
            if n not in self._params:
                raise ArgumentError(f"unknown parameter {n!r}")
            self._trainable[n] = flag

    def shapes(self):
        return {n: t.data.shape for n, t in self._params.items()}

    def size(self, trainable_only=False) -> int:
        return int(sum(self._params[n].data.size for n in self.names(trainable_only=trainable_only)))

    # -- flat views --------------------------------------------------------
    def flatten(self, names=None) -> np.ndarray:
        names = list(self._params) if names is None else names
        if not names:
            return np.zeros(0)
        return np.concatenate([self._params[n].data.ravel() for n in names])

    def unflatten(self, vec: np.ndarray, names=None) -> "ParamStore":
        """Return a new store whose listed arrays are read from ``vec``."""
        names = list(self._params) if names is None else names
        vec = np.asarray(vec, dtype=np.float64)
        expected = int(sum(self._params[n].data.size for n in names))
        if vec.size != expected:
            raise ArgumentError(f"flat vector has {vec.size} entries, expected {expected}")
        out = self.copy()
        off = 0
        for n in names:
            t = out._params[n]
            k = t.data.size
            t.data = vec[off:off + k].reshape(t.data.shape).copy()
            off += k
        return out

    def copy(self) -> "ParamStore":
        out = ParamStore()
        for n, t in self._params.items():
            out.add(n, t.data.copy(), self._trainable[n])
        return out

    def load_from(self, other: "ParamStore"):
        """Copy values (not flags) from ``other``; names and shapes must match."""
        if list(other._params) != list(self._params):
            raise ConfigurationError("parameter names differ between stores")
        for n, t in self._params.items():
            src = other._params[n].data
            if src.shape != t.data.shape:
                raise ConfigurationError(f"shape mismatch for {n}: {src.shape} vs {t.data.shape}")
            t.data = src.copy()

    def zero_grad(self):
        for t in self._params.values():
            t.grad = None

    def grads(self) -> "GradSet":
        arrays = OrderedDict()
        for n, t in self._params.items():
            arrays[n] = np.zeros_like(t.data) if t.grad is None else t.grad
        frozen = frozenset(n for n, f in self._trainable.items() if not f)
        return GradSet(arrays, frozen)

    def manifest(self) -> dict:
        return {
            "format_version": FORMAT_VERSION,
            "arrays": [
                {"name": n, "shape": list(t.data.shape), "trainable": self._trainable[n]}
                for n, t in self._params.items()
            ],
        }


class GradSet(OrderedDict):
    """Gradients keyed like a :class:`ParamStore`.

    Frozen arrays still carry a gradient; ``applicable`` says whether an
    optimizer may use it.
    """

    def __init__(self, arrays=(), frozen=frozenset()):
        super().__init__(arrays)
        self.frozen = frozenset(frozen)

    def applicable(self, name: str) -> bool:
        return name not in self.frozen

    def flat(self, names=None) -> np.ndarray:
        names = list(self) if names is None else names
        if not names:
            return np.zeros(0)
        return np.concatenate([self[n].ravel() for n in names])


# ---------------------------------------------------------------- checkpoint io

def _atomic_dir_write(path: Path, writer):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = Path(tempfile.mkdtemp(prefix=f".{path.name}.", dir=path.parent))
    try:
        writer(tmp)
        if path.exists():
            shutil.rmtree(path)
        os.replace(tmp, path)
    except BaseException:
        shutil.rmtree(tmp, ignore_errors=True)
        raise


def save_store(store: ParamStore, path, extra: dict | None = None):
    """Write ``manifest.json`` + ``params.bin`` (little-endian float64) into ``path``.

    The directory is built under a temporary name and renamed into place.
    """
    manifest = store.manifest()
    offset = 0
    for entry in manifest["arrays"]:
        n = int(np.prod(entry["shape"], dtype=np.int64))
        entry["offset"] = offset
        entry["count"] = n
        offset += n
    if extra:
        manifest["extra"] = extra

    def writer(tmp: Path):
        with open(tmp / "params.bin", "wb") as fh:
            for n, t in store.items():
                fh.write(np.ascontiguousarray(t.data, dtype="<f8").tobytes())
        (tmp / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")

    _atomic_dir_write(Path(path), writer)


def load_store(path) -> tuple[ParamStore, dict]:
    path = Path(path)
    mpath = path / "manifest.json"
    if not mpath.exists():
        raise ConfigurationError(f"no checkpoint manifest at {mpath}")
    manifest = json.loads(mpath.read_text())
    if manifest.get("format_version") != FORMAT_VERSION:
        raise ConfigurationError(f"unsupported checkpoint format {manifest.get('format_version')}")
    raw = (path / "params.bin").read_bytes()
    expected = sum(int(e["count"]) for e in manifest["arrays"])
    if len(raw) != 8 * expected:
        raise ConfigurationError(f"{path}: params.bin holds {len(raw)} bytes, manifest expects {8 * expected}")
    payload = np.frombuffer(raw, dtype="<f8")
    store = ParamStore()
    for e in manifest["arrays"]:
        a = payload[e["offset"]:e["offset"] + e["count"]].astype(np.float64).reshape(e["shape"])
        store.add(e["name"], a, e["trainable"])
    return store, manifest.get("extra", {})
