"""Tamper-evident audit log backed by an append-only Merkle tree.

Leaves are SHA-256 digests of canonical record bytes.  Odd node counts pad
by duplicating the last node, so the root of a single record is that
record's digest itself.  Appends maintain the tree incrementally (only the
rightmost path changes) and return an inclusion proof against the new root.

The persisted form is an append-only file: a 5-byte header, then one entry
per record consisting of a big-endian u32 length, the record bytes, and the
32-byte leaf digest.  Verification re-reads the file, recomputes every leaf
and the root, and reports the first index whose stored digest no longer
matches its bytes, or the truncation point for a cut-off file.
"""

from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import BinaryIO

from .errors import AuditError

FILE_MAGIC = b"GAUD"
FILE_VERSION = 1

EMPTY_ROOT = hashlib.sha256(b"").digest()


def _node_hash(left: bytes, right: bytes) -> bytes:
    return hashlib.sha256(left + right).digest()


def leaf_hash(record: bytes) -> bytes:
    return hashlib.sha256(record).digest()


@dataclass(frozen=True)
class InclusionProof:
    index: int
    tree_size: int
    siblings: tuple[bytes, ...]

    def verify(self, leaf: bytes, root: bytes) -> bool:
        if self.tree_size < 1 or not 0 <= self.index < self.tree_size:
            return False
        node = leaf
        idx = self.index
        for sibling in self.siblings:
            if idx % 2 == 0:
                node = _node_hash(node, sibling)
            else:
                node = _node_hash(sibling, node)
            idx //= 2
        return node == root


@dataclass(frozen=True)
class AppendReceipt:
    index: int
    leaf: bytes
    root: bytes
    proof: InclusionProof


@dataclass(frozen=True)
class ChainReport:
    ok: bool
    records: int
    root: bytes
    first_tampered_index: int | None = None
    truncated_at: int | None = None


class MerkleAuditLog:
    """In-memory Merkle tree with an optional append-only file sink."""

    def __init__(self, path: str | Path | None = None):
        self._levels: list[list[bytes]] = [[]]
        self._records = 0
        self._path = Path(path) if path is not None else None
        self._file: BinaryIO | None = None
        if self._path is not None:
            exists = self._path.exists() and self._path.stat().st_size > 0
            self._file = open(self._path, "ab")
            if not exists:
                self._file.write(FILE_MAGIC + bytes([FILE_VERSION]))
                self._file.flush()

    @property
    def size(self) -> int:
        return self._records

    @property
    def root(self) -> bytes:
        if self._records == 0:
            return EMPTY_ROOT
        return self._levels[-1][0]

    def close(self) -> None:
        if self._file is not None:
            self._file.close()
            self._file = None

    def append(self, record: bytes) -> AppendReceipt:
        """Persist (when filed) then extend the tree; the log is unchanged on write failure."""
        leaf = leaf_hash(record)
        if self._file is not None:
            try:
                self._file.write(struct.pack(">I", len(record)) + record + leaf)
                self._file.flush()
            except (OSError, ValueError) as exc:
                raise AuditError(f"audit append failed: {exc}") from exc
        self._push_leaf(leaf)
        index = self._records - 1
        return AppendReceipt(index, leaf, self.root, self.inclusion_proof(index))

    def _push_leaf(self, leaf: bytes) -> None:
        self._levels[0].append(leaf)
        self._records += 1
        idx = len(self._levels[0]) - 1
        lvl = 0
        while len(self._levels[lvl]) > 1:
            arr = self._levels[lvl]
            parent_idx = idx // 2
            left = arr[2 * parent_idx]
            right = arr[2 * parent_idx + 1] if 2 * parent_idx + 1 < len(arr) else left
            parent = _node_hash(left, right)
            if lvl + 1 == len(self._levels):
                self._levels.append([])
            parents = self._levels[lvl + 1]
            if parent_idx < len(parents):
                parents[parent_idx] = parent
            else:
                parents.append(parent)
            idx = parent_idx
            lvl += 1

    def inclusion_proof(self, index: int) -> InclusionProof:
        if not 0 <= index < self._records:
            raise AuditError(f"no record at index {index}")
        siblings: list[bytes] = []
        idx = index
        lvl = 0
        while len(self._levels[lvl]) > 1:
            arr = self._levels[lvl]
            sibling_idx = idx ^ 1
            siblings.append(arr[sibling_idx] if sibling_idx < len(arr) else arr[idx])
            idx //= 2
            lvl += 1
        return InclusionProof(index, self._records, tuple(siblings))

    def leaf(self, index: int) -> bytes:
        return self._levels[0][index]


def compute_root(leaves: list[bytes]) -> bytes:
    """Reference root computation used by verification (and test oracles)."""
    if not leaves:
        return EMPTY_ROOT
    level = list(leaves)
    while len(level) > 1:
        if len(level) % 2 == 1:
            level = level + [level[-1]]
        level = [_node_hash(level[i], level[i + 1]) for i in range(0, len(level), 2)]
    return level[0]


def verify_chain(path: str | Path) -> ChainReport:
    """Recompute the full chain from a persisted log file.

    Reports the first record whose bytes no longer hash to the stored leaf
    digest, or the index where the file is cut off mid-entry.
    """
    path = Path(path)
    data = path.read_bytes()
    if len(data) < 5 or data[:4] != FILE_MAGIC:
        raise AuditError(f"{path} is not an audit log (bad header)")
    if data[4] != FILE_VERSION:
        raise AuditError(f"unsupported audit log version {data[4]}")
    pos = 5
    leaves: list[bytes] = []
    index = 0
    first_tampered: int | None = None
    truncated: int | None = None
    while pos < len(data):
        if pos + 4 > len(data):
            truncated = index
            break
        (length,) = struct.unpack(">I", data[pos : pos + 4])
        pos += 4
        if pos + length + 32 > len(data):
            truncated = index
            break
        record = data[pos : pos + length]
        pos += length
        stored = data[pos : pos + 32]
        pos += 32
        recomputed = leaf_hash(record)
        if recomputed != stored and first_tampered is None:
            first_tampered = index
        leaves.append(recomputed)
        index += 1
    ok = first_tampered is None and truncated is None
    return ChainReport(
        ok=ok,
        records=len(leaves),
        root=compute_root(leaves),
        first_tampered_index=first_tampered,
        truncated_at=truncated,
    )
