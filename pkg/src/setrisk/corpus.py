"""Corpus and embedding persistence, plus the synthetic data generator.

Corpus files are line-delimited JSON, one user per line, with posts in
chronological order. Embeddings live in a separate binary store: a
plain-text header (encoder_name, dimension, count, version) followed by
a sorted post-id table and contiguous little-endian float32 vectors.
Vectors are widened to float64 in memory.

The synthetic generator plants a known signal direction into a fraction
of each positive user's posts, records exactly which posts carry it,
and is fully determined by its spec (seed included).
"""

import json
import math
import os
import warnings
from dataclasses import dataclass

import numpy as np

from .errors import DataError
from .rng import stream

LABELS = ("positive", "negative", "unknown")

_EMB_MAGIC = b"SETRISK-EMB 1\n"


@dataclass(frozen=True)
class Post:
    post_id: str
    timestamp: float
    text: str = None


@dataclass
class UserRecord:
    user_id: str
    label: str
    posts: list

    def label_int(self):
        if self.label == "positive":
            return 1
        if self.label == "negative":
            return 0
        raise DataError(f"user {self.user_id}: label {self.label!r} has no numeric value")


def _validate_user(user_id, label, posts, where):
    if not isinstance(user_id, str) or not user_id:
        raise DataError(f"{where}: user_id must be a non-empty string")
    if label not in LABELS:
        raise DataError(f"{where}: label {label!r} not one of {LABELS}")
    if not posts:
        raise DataError(f"{where}: user {user_id} has no posts")
    seen = set()
    for p in posts:
        if p.post_id in seen:
            raise DataError(f"{where}: user {user_id} has duplicate post_id {p.post_id!r}")
        seen.add(p.post_id)


def load_corpus(path):
    """Read a corpus file into UserRecords, sorted chronologically.

    Malformed lines raise DataError naming the line number. Posts given
    out of chronological order are sorted with a warning.
    """
    users = []
    seen_users = set()
    with open(path, "r", encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            line = line.strip()
            if not line:
                continue
            where = f"{path}:{lineno}"
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as e:
                raise DataError(f"{where}: invalid JSON: {e}") from None
            try:
                user_id = rec["user_id"]
                label = rec["label"]
                raw_posts = rec["posts"]
            except (KeyError, TypeError) as e:
                raise DataError(f"{where}: missing field {e}") from None
            posts = []
            for j, rp in enumerate(raw_posts):
                try:
                    posts.append(Post(post_id=rp["post_id"],
                                      timestamp=rp["timestamp"],
                                      text=rp.get("text")))
                except (KeyError, TypeError) as e:
                    raise DataError(f"{where}: post {j}: missing field {e}") from None
            _validate_user(user_id, label, posts, where)
            if user_id in seen_users:
                raise DataError(f"{where}: duplicate user_id {user_id!r}")
            seen_users.add(user_id)
            keys = [(p.timestamp, p.post_id) for p in posts]
            if keys != sorted(keys):
                warnings.warn(f"{where}: posts of user {user_id} out of order; sorting")
                posts.sort(key=lambda p: (p.timestamp, p.post_id))
            users.append(UserRecord(user_id=user_id, label=label, posts=posts))
    return users


def save_corpus(path, users):
    """Write UserRecords as canonical JSON lines (deterministic bytes)."""
    tmp = f"{path}.tmp"
    with open(tmp, "w", encoding="utf-8") as f:
        for u in users:
            _validate_user(u.user_id, u.label, u.posts, path)
            posts = []
            for p in u.posts:
                d = {"post_id": p.post_id, "timestamp": p.timestamp}
                if p.text is not None:
                    d["text"] = p.text
                posts.append(d)
            rec = {"user_id": u.user_id, "label": u.label, "posts": posts}
            f.write(json.dumps(rec, sort_keys=True, separators=(",", ":")) + "\n")
    os.replace(tmp, path)


class EmbeddingStore:
    """Post-id keyed embedding vectors with a compact binary format."""

    def __init__(self, encoder_name, dimension, vectors, version=1):
        self.encoder_name = str(encoder_name)
        self.dimension = int(dimension)
        self.version = int(version)
        self._vectors = {}
        for pid, vec in vectors.items():
            arr = np.asarray(vec, dtype=np.float64)
            if arr.shape != (self.dimension,):
                raise DataError(
                    f"embedding for {pid!r} has shape {arr.shape}, expected ({self.dimension},)")
            if not np.all(np.isfinite(arr)):
                raise DataError(f"embedding for {pid!r} contains non-finite values")
            self._vectors[pid] = arr

    def __len__(self):
        return len(self._vectors)

    def __contains__(self, post_id):
        return post_id in self._vectors

    def ids(self):
        return sorted(self._vectors.keys())

    def get(self, post_id):
        try:
            return self._vectors[post_id]
        except KeyError:
            raise DataError(f"unknown post_id {post_id!r} in embedding store") from None

    def matrix(self, post_ids):
        """Stack vectors for the given ids into a [K, dimension] array."""
        return np.stack([self.get(p) for p in post_ids])

    def save(self, path):
        """Write the store; same content always produces identical bytes."""
        ids = self.ids()
        header = {"encoder_name": self.encoder_name, "dimension": self.dimension,
                  "count": len(ids), "version": self.version}
        tmp = f"{path}.tmp"
        with open(tmp, "wb") as f:
            f.write(_EMB_MAGIC)
            f.write(json.dumps(header, sort_keys=True, separators=(",", ":")).encode() + b"\n")
            for pid in ids:
                if "\n" in pid:
                    raise DataError(f"post_id {pid!r} contains a newline")
                f.write(pid.encode("utf-8") + b"\n")
            f.write(b"\n")
            for pid in ids:
                f.write(np.ascontiguousarray(self._vectors[pid], dtype="<f4").tobytes())
        os.replace(tmp, path)

    @classmethod
    def load(cls, path):
        with open(path, "rb") as f:
            magic = f.read(len(_EMB_MAGIC))
            if magic != _EMB_MAGIC:
                raise DataError(f"{path}: not an embedding store (bad magic)")
            header = json.loads(f.readline().decode("utf-8"))
            for field in ("encoder_name", "dimension", "count", "version"):
                if field not in header:
                    raise DataError(f"{path}: header missing field {field!r}")
            n, dim = int(header["count"]), int(header["dimension"])
            ids = []
            for i in range(n):
                line = f.readline()
                if not line.endswith(b"\n"):
                    raise DataError(f"{path}: truncated post-id table")
                ids.append(line[:-1].decode("utf-8"))
            if ids != sorted(ids):
                raise DataError(f"{path}: post-id table is not sorted")
            if len(set(ids)) != len(ids):
                raise DataError(f"{path}: duplicate post ids")
            if f.readline() != b"\n":
                raise DataError(f"{path}: missing header/vector separator")
            raw = f.read(n * dim * 4)
            if len(raw) != n * dim * 4:
                raise DataError(f"{path}: truncated vector data")
            mat = np.frombuffer(raw, dtype="<f4").reshape(n, dim).astype(np.float64)
        vectors = {pid: mat[i] for i, pid in enumerate(ids)}
        return cls(header["encoder_name"], dim, vectors, version=header["version"])


@dataclass(frozen=True)
class SyntheticSpec:
    """Parameters of the planted-signal generator."""

    n_pos: int
    n_neg: int
    posts_per_user: tuple  # (min, max) inclusive
    signal_rate: float
    noise_sigma: float
    dimension: int
    seed: int
    encoder_name: str = "synthetic-v1"

    def validate(self):
        lo, hi = self.posts_per_user
        if self.n_pos < 1 or self.n_neg < 1:
            raise DataError("n_pos and n_neg must be positive")
        if lo < 1 or hi < lo:
            raise DataError(f"posts_per_user range ({lo}, {hi}) is invalid")
        if not 0.0 < self.signal_rate <= 1.0:
            raise DataError(f"signal_rate must be in (0, 1], got {self.signal_rate}")
        if self.noise_sigma < 0.0:
            raise DataError("noise_sigma must be non-negative")
        if self.dimension < 1:
            raise DataError("dimension must be positive")

    def to_dict(self):
        d = self.__dict__.copy()
        d["posts_per_user"] = list(self.posts_per_user)
        return d


def generate_synthetic(spec):
    """Generate (users, store, meta) with a planted signal direction.

    Noise vectors have expected norm noise_sigma (per-dimension scale
    noise_sigma / sqrt(dimension)); signal posts add one shared unit
    direction on top of their noise. meta records the direction and the
    exact signal-carrying post ids per user, which downstream
    attribution tests use as ground truth. Vectors pass through the
    store's float32 quantization so the returned store equals a
    save/load round trip.
    """
    spec.validate()
    lo, hi = spec.posts_per_user
    direction = stream(spec.seed, "signal-direction").normal(size=spec.dimension)
    direction = direction / np.linalg.norm(direction)
    scale = spec.noise_sigma / math.sqrt(spec.dimension)

    users, vectors = [], {}
    signal_posts = {}
    for label, count, prefix in (("positive", spec.n_pos, "pos"),
                                 ("negative", spec.n_neg, "neg")):
        for i in range(1, count + 1):
            uid = f"{prefix}-{i:04d}"
            n = int(stream(spec.seed, "npost", uid).integers(lo, hi + 1))
            noise = stream(spec.seed, "noise", uid).normal(size=(n, spec.dimension)) * scale
            if label == "positive":
                n_sig = max(1, int(round(spec.signal_rate * n)))
                idx = np.sort(stream(spec.seed, "sigpos", uid).choice(n, size=n_sig,
                                                                      replace=False))
                noise[idx] += direction
            else:
                idx = np.array([], dtype=int)
            posts = []
            for j in range(n):
                pid = f"{uid}-p{j + 1:04d}"
                posts.append(Post(post_id=pid, timestamp=j + 1))
                vectors[pid] = noise[j].astype("<f4").astype(np.float64)
            users.append(UserRecord(user_id=uid, label=label, posts=posts))
            if label == "positive":
                signal_posts[uid] = [posts[k].post_id for k in idx]
    store = EmbeddingStore(spec.encoder_name, spec.dimension, vectors)
    meta = {"generator_version": 1,
            "signal_direction": direction.tolist(),
            "signal_posts": signal_posts,
            "spec": spec.to_dict()}
    return users, store, meta


def degrade_store(store, extra_sigma, seed, encoder_name=None):
    """Return a copy with extra isotropic noise (a weaker-encoder analogue).

    The added noise has expected norm extra_sigma, matching the
    generator's convention, and is keyed per post id so the result is
    deterministic.
    """
    scale = float(extra_sigma) / math.sqrt(store.dimension)
    vectors = {}
    for pid in store.ids():
        noise = stream(seed, "degrade", pid).normal(size=store.dimension) * scale
        vectors[pid] = (store.get(pid) + noise).astype("<f4").astype(np.float64)
    name = encoder_name or f"{store.encoder_name}+noise{extra_sigma}"
    return EmbeddingStore(name, store.dimension, vectors)
