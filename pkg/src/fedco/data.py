"""Datasets, non-i.i.d. partitions, streaming arrivals, and bounded buffers.

Dataset file format (little-endian throughout):

    offset  size  field
    0       4     magic  b"FCDS"
    4       4     uint32 version (1)
    8       4     uint32 d        feature dimension
    12      4     uint32 count    number of samples
    16      4     uint32 classes  declared class count
    20      ...   count * d float32 feature rows, row-major
    ...     ...   count int32 labels

Labels are {-1, +1} for two-class SVM data or 0..classes-1 otherwise.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import _backend as K
from .errors import ConfigError, EmptyBufferError

MAGIC = b"FCDS"
FORMAT_VERSION = 1

RESERVOIR = "reservoir"
FIFO = "fifo"
RANDOM_REPLACE = "random"

SAMPLING_POLICIES = (RESERVOIR, FIFO, RANDOM_REPLACE)


@dataclass
class Dataset:
    """Feature matrix (n, d) float64 with integer labels."""

    X: np.ndarray
    y: np.ndarray
    n_classes: int

    def __post_init__(self) -> None:
        self.X = np.ascontiguousarray(self.X, dtype=np.float64)
        self.y = np.ascontiguousarray(self.y, dtype=np.int64)
        if self.X.ndim != 2 or self.y.ndim != 1 or len(self.X) != len(self.y):
            raise ConfigError("dataset features/labels shapes disagree")

    def __len__(self) -> int:
        return len(self.y)

    @property
    def dim(self) -> int:
        return self.X.shape[1]

    def subset(self, rows: np.ndarray) -> "Dataset":
        return Dataset(self.X[rows], self.y[rows], self.n_classes)


def make_blobs(
    n: int,
    dim: int,
    n_classes: int,
    rng: np.random.Generator,
    class_sep: float = 3.0,
    scale: float = 1.0,
    signed_binary: bool | None = None,
    add_bias: bool = True,
) -> Dataset:
    """Gaussian blobs, one isotropic cluster per class, bias column appended.

    ``signed_binary`` maps two-class labels to {-1, +1} (the SVM convention);
    it defaults to on exactly when ``n_classes == 2``.
    """
    if n < n_classes:
        raise ConfigError("need at least one sample per class")
    centers = rng.normal(size=(n_classes, dim)) * class_sep
    counts = np.full(n_classes, n // n_classes)
    counts[: n % n_classes] += 1
    xs, ys = [], []
    for c in range(n_classes):
        xs.append(centers[c] + rng.normal(size=(counts[c], dim)) * scale)
        ys.append(np.full(counts[c], c, dtype=np.int64))
    X = np.vstack(xs)
    y = np.concatenate(ys)
    order = rng.permutation(n)
    X, y = X[order], y[order]
    if add_bias:
        X = np.hstack([X, np.ones((n, 1))])
    if signed_binary is None:
        signed_binary = n_classes == 2
    if signed_binary:
        if n_classes != 2:
            raise ConfigError("signed labels only make sense for two classes")
        y = np.where(y == 1, 1, -1).astype(np.int64)
    return Dataset(X, y, n_classes)


def write_dataset(path: str | Path, ds: Dataset) -> None:
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<IIII", FORMAT_VERSION, ds.dim, len(ds), ds.n_classes))
        fh.write(ds.X.astype("<f4").tobytes())
        fh.write(ds.y.astype("<i4").tobytes())


def read_dataset(path: str | Path) -> Dataset:
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != MAGIC:
            raise ConfigError(f"not a dataset file (magic {magic!r})")
        version, dim, count, classes = struct.unpack("<IIII", fh.read(16))
        if version != FORMAT_VERSION:
            raise ConfigError(f"unsupported dataset version {version}")
        X = np.frombuffer(fh.read(4 * count * dim), dtype="<f4").reshape(count, dim)
        y = np.frombuffer(fh.read(4 * count), dtype="<i4")
    ds = Dataset(X.astype(np.float64), y.astype(np.int64), classes)
    labels = set(np.unique(ds.y).tolist())
    if classes == 2 and labels | {-1, 1} == {-1, 1}:
        pass  # signed convention
    elif not labels <= set(range(classes)):
        raise ConfigError(f"labels {sorted(labels)} outside declared class set")
    return ds


def partition_static(
    dataset: Dataset, n_clients: int, shards_per_client: int, rng: np.random.Generator
) -> list[Dataset]:
    """Label-skewed partition: sort by label, cut into n*shards contiguous
    shards, deal ``shards_per_client`` shards to each client.  Each class then
    concentrates on few clients (one shard per client with matching counts
    gives single-class clients)."""
    if len(dataset) == 0:
        raise ConfigError("cannot partition an empty dataset")
    if n_clients > len(dataset):
        raise ConfigError("more clients than samples")
    if n_clients == 1:
        return [dataset]
    order = np.argsort(dataset.y, kind="stable")
    n_shards = n_clients * shards_per_client
    shards = np.array_split(order, n_shards)
    assignment = rng.permutation(n_shards)
    out = []
    for i in range(n_clients):
        mine = assignment[i * shards_per_client : (i + 1) * shards_per_client]
        rows = np.concatenate([shards[j] for j in sorted(mine.tolist())])
        out.append(dataset.subset(rows))
    return out


def split_stream_sources(
    dataset: Dataset, n_clients: int, rng: np.random.Generator
) -> list[Dataset]:
    """Even per-class split of the master dataset into per-client stream pools."""
    parts: list[list[np.ndarray]] = [[] for _ in range(n_clients)]
    for c in np.unique(dataset.y):
        rows = np.flatnonzero(dataset.y == c)
        rows = rows[rng.permutation(len(rows))]
        for i, chunk in enumerate(np.array_split(rows, n_clients)):
            parts[i].append(chunk)
    return [dataset.subset(np.concatenate(p)) for p in parts]


@dataclass(frozen=True)
class StreamConfig:
    """Arrival pattern and class composition of one client's stream.

    pattern: smooth (arrival_count samples at every interval-th round),
             burst (arrival_count at burst_round, trickle elsewhere),
             random (per-round count uniform in [0, 2*mean], mean =
             arrival_count/interval)
    class_mode: iid (equal per-class split) or continuous (single class at a
             time, advancing to a fresh uniformly chosen class on exhaustion)
    """

    pattern: str = "smooth"
    class_mode: str = "iid"
    arrival_count: int = 0
    interval: int = 1
    burst_round: int = 1
    trickle: int = 0

    def __post_init__(self) -> None:
        if self.pattern not in ("smooth", "burst", "random"):
            raise ConfigError(f"unknown arrival pattern {self.pattern!r}")
        if self.class_mode not in ("iid", "continuous"):
            raise ConfigError(f"unknown class mode {self.class_mode!r}")
        if self.arrival_count < 0 or self.interval < 1 or self.burst_round < 1:
            raise ConfigError("stream counts/intervals out of range")
        if self.trickle < 0:
            raise ConfigError("trickle must be nonnegative")


class ClientStream:
    """Draws arrival batches for one client from its finite source pool."""

    def __init__(self, source: Dataset, cfg: StreamConfig, rng: np.random.Generator):
        self.cfg = cfg
        self.rng = rng
        self._ds = source
        self._pools: dict[int, list[int]] = {}
        for c in np.unique(source.y):
            rows = np.flatnonzero(source.y == c).tolist()
            self.rng.shuffle(rows)
            self._pools[int(c)] = rows
        self._unseen = sorted(self._pools)
        self._current_class: int | None = None

    def _count_for_round(self, k: int) -> int:
        cfg = self.cfg
        if cfg.pattern == "smooth":
            return cfg.arrival_count if k % cfg.interval == 0 else 0
        if cfg.pattern == "burst":
            return cfg.arrival_count if k == cfg.burst_round else cfg.trickle
        mean = cfg.arrival_count / cfg.interval
        return int(self.rng.integers(0, max(1, int(2 * mean)) + 1))

    def _take(self, cls: int, want: int) -> list[int]:
        pool = self._pools.get(cls, [])
        take, rest = pool[:want], pool[want:]
        self._pools[cls] = rest
        return take

    def _draw_iid(self, count: int) -> list[int]:
        classes = [c for c in sorted(self._pools) if self._pools[c]]
        if not classes:
            return []
        per = count // len(classes)
        extra = count - per * len(classes)
        bonus = self.rng.permutation(len(classes))
        rows: list[int] = []
        for i, c in enumerate(classes):
            want = per + (1 if np.flatnonzero(bonus == i)[0] < extra else 0)
            rows.extend(self._take(c, want))
        return rows

    def _draw_continuous(self, count: int) -> list[int]:
        rows: list[int] = []
        while count > 0:
            if self._current_class is None or not self._pools.get(self._current_class):
                fresh = [c for c in self._unseen if self._pools.get(c)]
                if not fresh:
                    break
                pick = int(self.rng.integers(0, len(fresh)))
                self._current_class = fresh[pick]
                self._unseen.remove(self._current_class)
            got = self._take(self._current_class, count)
            rows.extend(got)
            count -= len(got)
        return rows

    def arrivals_for_round(self, k: int) -> Dataset:
        """Samples arriving at round k (k >= 1); empty once the pool runs dry."""
        if k < 1:
            raise ValueError("rounds are 1-based")
        count = self._count_for_round(k)
        if count <= 0:
            rows: list[int] = []
        elif self.cfg.class_mode == "iid":
            rows = self._draw_iid(count)
        else:
            rows = self._draw_continuous(count)
        return self._ds.subset(np.asarray(sorted(rows), dtype=np.int64))

    def initial_draw(self, count: int) -> Dataset:
        """Round-0 seed data, composed like a regular arrival batch."""
        if count <= 0:
            return self._ds.subset(np.zeros(0, dtype=np.int64))
        rows = self._draw_iid(count) if self.cfg.class_mode == "iid" else self._draw_continuous(count)
        return self._ds.subset(np.asarray(sorted(rows), dtype=np.int64))

    def remaining(self) -> int:
        return sum(len(v) for v in self._pools.values())


class Buffer:
    """Bounded sample store with a monotone stream counter.

    ``count`` is the total number of samples ever offered (the stream
    counter); ``size`` is how many are currently held (== min(count,
    capacity) under the reservoir policy).
    """

    def __init__(self, capacity: int, dim: int, n_classes: int):
        if capacity < 1:
            raise ConfigError("buffer capacity must be at least 1")
        self.capacity = capacity
        self.n_classes = n_classes
        self.X = np.zeros((capacity, dim), dtype=np.float64)
        self.y = np.zeros(capacity, dtype=np.int64)
        self.size = 0
        self.count = 0
        self._fifo_head = 0

    def contents(self) -> tuple[np.ndarray, np.ndarray]:
        return self.X[: self.size], self.y[: self.size]

    def seed_initial(self, ds: Dataset) -> None:
        """Install round-0 data (must fit: B_i >= D_i^0)."""
        if len(ds) > self.capacity:
            raise ConfigError("initial data exceeds buffer capacity")
        self.X[: len(ds)] = ds.X
        self.y[: len(ds)] = ds.y
        self.size = len(ds)
        self.count = len(ds)


def reservoir_update(buf: Buffer, arrivals: Dataset, rng: np.random.Generator) -> Buffer:
    """Classic reservoir rule: append while room, then keep each newcomer
    with probability capacity/count by replacing a uniform slot."""
    m = len(arrivals)
    if m == 0:
        return buf
    cap = buf.capacity
    n_draws = max(0, buf.count + m - max(buf.count, cap))
    if n_draws > 0:
        first_over = max(buf.count + 1, cap + 1)
        highs = np.arange(first_over, buf.count + m + 1, dtype=np.int64)
        js = rng.integers(1, highs, endpoint=True).astype(np.int64)
    else:
        js = np.zeros(0, dtype=np.int64)
    X = np.ascontiguousarray(arrivals.X, dtype=np.float64)
    y = np.ascontiguousarray(arrivals.y, dtype=np.int64)
    buf.size, buf.count = K.reservoir_apply(buf.X, buf.y, X, y, buf.size, buf.count, js)
    return buf


def fifo_update(buf: Buffer, arrivals: Dataset) -> Buffer:
    """Evict oldest first once full."""
    for i in range(len(arrivals)):
        buf.count += 1
        if buf.size < buf.capacity:
            buf.X[buf.size] = arrivals.X[i]
            buf.y[buf.size] = arrivals.y[i]
            buf.size += 1
        else:
            buf.X[buf._fifo_head] = arrivals.X[i]
            buf.y[buf._fifo_head] = arrivals.y[i]
            buf._fifo_head = (buf._fifo_head + 1) % buf.capacity
    return buf


def random_replace_update(buf: Buffer, arrivals: Dataset, rng: np.random.Generator) -> Buffer:
    """Always keep the newcomer; evict a uniformly chosen stored sample."""
    for i in range(len(arrivals)):
        buf.count += 1
        if buf.size < buf.capacity:
            slot = buf.size
            buf.size += 1
        else:
            slot = int(rng.integers(0, buf.capacity))
        buf.X[slot] = arrivals.X[i]
        buf.y[slot] = arrivals.y[i]
    return buf


def apply_policy(
    policy: str, buf: Buffer, arrivals: Dataset, rng: np.random.Generator
) -> Buffer:
    if policy == RESERVOIR:
        return reservoir_update(buf, arrivals, rng)
    if policy == FIFO:
        return fifo_update(buf, arrivals)
    if policy == RANDOM_REPLACE:
        return random_replace_update(buf, arrivals, rng)
    raise ConfigError(f"unknown sampling policy {policy!r}")


def sample_batch(
    buf: Buffer, s: int, rng: np.random.Generator
) -> tuple[np.ndarray, np.ndarray, bool]:
    """Uniform draw without replacement of min(s, size) samples.

    Returns (X, y, shortfall); raises when the buffer is empty so the round
    planner can record the failure.
    """
    if s < 1:
        raise ValueError("batch size must be at least 1")
    if buf.size == 0:
        raise EmptyBufferError("buffer holds no samples")
    if s >= buf.size:
        X, y = buf.contents()
        return X.copy(), y.copy(), s > buf.size
    rows = rng.choice(buf.size, size=s, replace=False)
    return buf.X[rows], buf.y[rows], False


def draw_batch_indices(buf: Buffer, s: int, tau: int, rng: np.random.Generator) -> np.ndarray:
    """Index matrix (tau, min(s, size)) for the local-step kernel; each row is
    a fresh without-replacement draw."""
    if buf.size == 0:
        raise EmptyBufferError("buffer holds no samples")
    eff = min(s, buf.size)
    out = np.empty((tau, eff), dtype=np.int64)
    for r in range(tau):
        if eff == buf.size:
            out[r] = np.arange(buf.size)
        else:
            out[r] = rng.choice(buf.size, size=eff, replace=False)
    return out
