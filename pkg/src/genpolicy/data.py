"""Synthetic offline datasets with analytically known structure, plus I/O.

Both toy tasks are single-state contextual bandits (every transition is
terminal, s' = s), which lets the same critic and policy machinery run
unchanged: the value head collapses to a scalar and Q regresses directly
onto the reward surface over actions.

File formats (documented for cross-implementation use):

* CSV — header row ``s0..,a0..,r,sp0..,done`` preceded by comment lines
  starting with ``#`` (``# genpolicy-dataset v1`` and ``# meta: {json}``).
  Values are printed with %.17g, so a round trip is lossless for float64.
* Binary — magic ``GPDS``, u32 version (1), u64 header length, UTF-8 JSON
  header {n, state_dim, action_dim, metadata}, then raw little-endian
  float64 C-order blobs in the order s, a, r, s2, done.
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import DataFormatError

_MAGIC = b"GPDS"
_VERSION = 1


@dataclass
class OfflineDataset:
    s: np.ndarray
    a: np.ndarray
    r: np.ndarray
    s2: np.ndarray
    done: np.ndarray
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        self.s = np.atleast_2d(np.asarray(self.s, dtype=float))
        self.a = np.atleast_2d(np.asarray(self.a, dtype=float))
        self.s2 = np.atleast_2d(np.asarray(self.s2, dtype=float))
        self.r = np.asarray(self.r, dtype=float).reshape(-1)
        self.done = np.asarray(self.done, dtype=float).reshape(-1)
        n = self.a.shape[0]
        for name, arr in (("s", self.s), ("s2", self.s2), ("r", self.r), ("done", self.done)):
            if arr.shape[0] != n:
                raise DataFormatError(f"column {name!r} has {arr.shape[0]} rows, expected {n}")
        for name, arr in (("s", self.s), ("a", self.a), ("r", self.r), ("s2", self.s2)):
            bad = ~np.isfinite(arr)
            if bad.any():
                row = int(np.argwhere(bad)[0][0])
                raise DataFormatError(f"non-finite value in column {name!r} at row {row}")
        if not np.all(np.isin(self.done, (0.0, 1.0))):
            row = int(np.argwhere(~np.isin(self.done, (0.0, 1.0)))[0][0])
            raise DataFormatError(f"done flag outside {{0,1}} at row {row}")

    @property
    def n(self) -> int:
        return self.a.shape[0]

    @property
    def state_dim(self) -> int:
        return self.s.shape[1]

    @property
    def action_dim(self) -> int:
        return self.a.shape[1]


@dataclass
class SwissRollTask:
    n: int = 10_000
    noise: float = 0.6
    value_range: tuple = (-3.5, 1.5)
    angle_range: tuple = (1.5 * math.pi, 4.5 * math.pi)
    seed: int = 0


def make_swiss_roll(task: SwissRollTask) -> OfflineDataset:
    """Planar spiral bandit: actions are noisy spiral points, reward is
    linear in the spiral angle over its range (mean value is the midpoint,
    -1.0 for the default range). The value is assigned from the pre-noise
    angle, so observation noise never moves it."""
    if task.n < 1:
        raise ValueError("need at least one sample")
    rng = np.random.default_rng(task.seed)
    lo, hi = task.angle_range
    theta = rng.uniform(lo, hi, size=task.n)
    spiral = np.stack([theta * np.cos(theta), theta * np.sin(theta)], axis=1)
    a = spiral + task.noise * rng.standard_normal((task.n, 2))
    v_lo, v_hi = task.value_range
    r = v_lo + (theta - lo) / (hi - lo) * (v_hi - v_lo)
    s = np.zeros((task.n, 1))
    return OfflineDataset(
        s=s, a=a, r=r, s2=s.copy(), done=np.ones(task.n),
        metadata={
            "task": "swiss_roll", "seed": task.seed, "noise": task.noise,
            "angle_range": list(task.angle_range), "value_range": list(task.value_range),
            "value_map": "linear in spiral angle over angle_range",
        })


@dataclass
class TiltedTarget:
    """Closed-form optimum of the exponentially tilted Gaussian bandit:
    e^{beta * sum(a)} N(a; 0, I) is proportional to N(a; beta * 1, I)."""
    mean: np.ndarray
    std: np.ndarray
    beta: float


def make_tilted_gaussian_bandit(dims: int, beta_target: float, n: int,
                                seed: int = 0) -> tuple[OfflineDataset, TiltedTarget]:
    """Behavior a ~ N(0, I), reward r = sum_i a_i (so the true Q is linear)."""
    if dims < 1:
        raise ValueError("dims must be >= 1")
    rng = np.random.default_rng(seed)
    a = rng.standard_normal((n, dims))
    r = a.sum(axis=1)
    s = np.zeros((n, 1))
    dataset = OfflineDataset(
        s=s, a=a, r=r, s2=s.copy(), done=np.ones(n),
        metadata={"task": "tilted_gaussian_bandit", "dims": dims,
                  "beta_target": beta_target, "seed": seed})
    target = TiltedTarget(mean=np.full(dims, beta_target), std=np.ones(dims), beta=beta_target)
    return dataset, target


# -- nearest-neighbor helpers (swiss-roll evaluation) ----------------------

def nearest_distances(points: np.ndarray, reference: np.ndarray) -> np.ndarray:
    """Euclidean distance from each point to its nearest reference row."""
    diffs = points[:, None, :] - reference[None, :, :]
    return np.sqrt((diffs ** 2).sum(axis=2)).min(axis=1)


def assign_value_nearest(dataset: OfflineDataset, points: np.ndarray) -> np.ndarray:
    """Value of arbitrary action points = reward of the nearest dataset action."""
    diffs = points[:, None, :] - dataset.a[None, :, :]
    idx = (diffs ** 2).sum(axis=2).argmin(axis=1)
    return dataset.r[idx]


# -- file I/O ---------------------------------------------------------------

def _columns(state_dim: int, action_dim: int) -> list[str]:
    return ([f"s{i}" for i in range(state_dim)] + [f"a{i}" for i in range(action_dim)]
            + ["r"] + [f"sp{i}" for i in range(state_dim)] + ["done"])


def save_dataset(dataset: OfflineDataset, path: str) -> None:
    if str(path).endswith(".csv"):
        _save_csv(dataset, path)
    else:
        _save_binary(dataset, path)


def load_dataset(path: str) -> OfflineDataset:
    with open(path, "rb") as fh:
        head = fh.read(4)
    if head == _MAGIC:
        return _load_binary(path)
    return _load_csv(path)


def _save_csv(dataset: OfflineDataset, path: str) -> None:
    cols = _columns(dataset.state_dim, dataset.action_dim)
    table = np.concatenate([dataset.s, dataset.a, dataset.r[:, None],
                            dataset.s2, dataset.done[:, None]], axis=1)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("# genpolicy-dataset v1\n")
        fh.write("# meta: " + json.dumps(dataset.metadata, sort_keys=True) + "\n")
        fh.write(",".join(cols) + "\n")
        for row in table:
            fh.write(",".join(f"{v:.17g}" for v in row) + "\n")


def _load_csv(path: str) -> OfflineDataset:
    metadata = {}
    header = None
    rows = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            if line.startswith("#"):
                if line.startswith("# meta:"):
                    metadata = json.loads(line[len("# meta:"):])
                continue
            if header is None:
                header = line.split(",")
                continue
            parts = line.split(",")
            if len(parts) != len(header):
                raise DataFormatError(f"row {lineno} has {len(parts)} fields, header has {len(header)}")
            try:
                rows.append([float(p) for p in parts])
            except ValueError as exc:
                raise DataFormatError(f"unparseable value at row {lineno}: {exc}") from exc
    if header is None:
        raise DataFormatError("missing header row")
    state_dim = sum(1 for c in header if c.startswith("s") and not c.startswith("sp"))
    action_dim = sum(1 for c in header if c.startswith("a"))
    expected = _columns(state_dim, action_dim)
    for col in expected:
        if col not in header:
            raise DataFormatError(f"missing column {col!r}")
    if header != expected:
        raise DataFormatError(f"column order must be {expected}")
    table = np.array(rows, dtype=float).reshape(len(rows), len(header))
    sd, ad = state_dim, action_dim
    return OfflineDataset(
        s=table[:, :sd].reshape(-1, sd), a=table[:, sd:sd + ad],
        r=table[:, sd + ad], s2=table[:, sd + ad + 1:sd + ad + 1 + sd].reshape(-1, sd),
        done=table[:, -1], metadata=metadata)


def _save_binary(dataset: OfflineDataset, path: str) -> None:
    header = json.dumps({
        "n": dataset.n, "state_dim": dataset.state_dim, "action_dim": dataset.action_dim,
        "metadata": dataset.metadata}, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<IQ", _VERSION, len(header)))
        fh.write(header)
        for arr in (dataset.s, dataset.a, dataset.r, dataset.s2, dataset.done):
            fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def _load_binary(path: str) -> OfflineDataset:
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[:4] != _MAGIC:
        raise DataFormatError("bad magic; not a dataset container")
    version, hlen = struct.unpack_from("<IQ", raw, 4)
    if version != _VERSION:
        raise DataFormatError(f"unsupported container version {version}")
    off = 4 + struct.calcsize("<IQ")
    head = json.loads(raw[off:off + hlen].decode("utf-8"))
    off += hlen
    n, sd, ad = head["n"], head["state_dim"], head["action_dim"]

    def take(count):
        nonlocal off
        out = np.frombuffer(raw, dtype="<f8", count=count, offset=off).copy()
        off += count * 8
        return out

    s = take(n * sd).reshape(n, sd)
    a = take(n * ad).reshape(n, ad)
    r = take(n)
    s2 = take(n * sd).reshape(n, sd)
    done = take(n)
    return OfflineDataset(s=s, a=a, r=r, s2=s2, done=done, metadata=head.get("metadata", {}))
