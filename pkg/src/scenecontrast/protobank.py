"""Cross-scene semantic prototypes: per-class means of pooled embeddings.

A prototype is the arithmetic mean of every valid region embedding sharing
one semantic sign, accumulated across all frames handed in (that is what
makes the consistency scene-level rather than frame-level).  Means are
taken over the stored unit-norm rows and are NOT re-normalized here; the
blending stage decides what to do with them.

Prototype construction is non-differentiable by decision: gradients never
flow from losses into the contributing embeddings through a prototype,
only through the blending parameters and the query side of the losses.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .embednet import EmbeddingBank
from .errors import EmptyBankError, ShapeError


@dataclass
class PrototypeBank:
    """Per-class prototypes for the classes present in a batch.

    ``class_ids`` is sorted ascending; row i of every matrix belongs to
    ``class_ids[i]``.  ``p2d_bar``/``p3d_bar``/``pmix`` stay None until the
    blending stage fills them.
    """

    class_ids: np.ndarray  # (C,) int64, ascending
    p2d: np.ndarray  # (C, D)
    p3d: np.ndarray  # (C, D)
    counts2d: np.ndarray  # (C,) int64
    counts3d: np.ndarray  # (C,) int64
    p2d_bar: np.ndarray | None = None
    p3d_bar: np.ndarray | None = None
    pmix: np.ndarray | None = None

    @property
    def num_classes(self) -> int:
        return len(self.class_ids)

    def row_of(self, class_id: int) -> int | None:
        pos = int(np.searchsorted(self.class_ids, class_id))
        if pos < len(self.class_ids) and self.class_ids[pos] == class_id:
            return pos
        return None


def build_prototypes(banks: list[EmbeddingBank]) -> PrototypeBank:
    """Mean embeddings per semantic sign over every valid region of ``banks``.

    Regions are accumulated frame by frame, region index ascending, so the
    result is bit-deterministic.  A class must appear in both modalities to
    be present (valid regions carry both sides, so the counts agree).
    """
    if not banks:
        raise EmptyBankError("no embedding banks given")
    d = banks[0].f2d.shape[1]
    sums2d: dict[int, np.ndarray] = {}
    sums3d: dict[int, np.ndarray] = {}
    n2d: dict[int, int] = {}
    n3d: dict[int, int] = {}
    for bank in banks:
        if bank.f2d.shape[1] != d:
            raise ShapeError("embedding dimension differs across banks")
        for q in range(len(bank.valid)):
            if not bank.valid[q]:
                continue
            t = int(bank.signs[q])
            if t not in sums2d:
                sums2d[t] = np.zeros(d)
                sums3d[t] = np.zeros(d)
                n2d[t] = 0
                n3d[t] = 0
            sums2d[t] += bank.f2d[q]
            n2d[t] += 1
            sums3d[t] += bank.f3d[q]
            n3d[t] += 1
    present = sorted(t for t in sums2d if n2d[t] > 0 and n3d[t] > 0)
    if not present:
        raise EmptyBankError("no valid region in any bank")
    c = len(present)
    p2d = np.empty((c, d))
    p3d = np.empty((c, d))
    c2d = np.empty(c, dtype=np.int64)
    c3d = np.empty(c, dtype=np.int64)
    for i, t in enumerate(present):
        p2d[i] = sums2d[t] / n2d[t]
        p3d[i] = sums3d[t] / n3d[t]
        c2d[i] = n2d[t]
        c3d[i] = n3d[t]
    return PrototypeBank(
        class_ids=np.array(present, dtype=np.int64),
        p2d=p2d,
        p3d=p3d,
        counts2d=c2d,
        counts3d=c3d,
    )


def ema_update(
    old: PrototypeBank, fresh: PrototypeBank, momentum: float
) -> PrototypeBank:
    """new = m*old + (1-m)*fresh on shared classes; others carried/inserted."""
    if not (0.0 <= momentum < 1.0):
        raise ShapeError(f"momentum {momentum} outside [0,1)")
    ids = np.union1d(old.class_ids, fresh.class_ids)
    d = old.p2d.shape[1]
    p2d = np.empty((len(ids), d))
    p3d = np.empty((len(ids), d))
    c2d = np.empty(len(ids), dtype=np.int64)
    c3d = np.empty(len(ids), dtype=np.int64)
    for i, t in enumerate(ids):
        o = old.row_of(int(t))
        f = fresh.row_of(int(t))
        if o is not None and f is not None:
            p2d[i] = momentum * old.p2d[o] + (1.0 - momentum) * fresh.p2d[f]
            p3d[i] = momentum * old.p3d[o] + (1.0 - momentum) * fresh.p3d[f]
            c2d[i] = fresh.counts2d[f]
            c3d[i] = fresh.counts3d[f]
        elif f is not None:
            p2d[i] = fresh.p2d[f]
            p3d[i] = fresh.p3d[f]
            c2d[i] = fresh.counts2d[f]
            c3d[i] = fresh.counts3d[f]
        else:
            p2d[i] = old.p2d[o]
            p3d[i] = old.p3d[o]
            c2d[i] = old.counts2d[o]
            c3d[i] = old.counts3d[o]
    return PrototypeBank(
        class_ids=ids.astype(np.int64),
        p2d=p2d,
        p3d=p3d,
        counts2d=c2d,
        counts3d=c3d,
    )


def dump_debug(bank: PrototypeBank) -> str:
    """One line per class: id, member counts, prototype norms."""
    lines = []
    for i, t in enumerate(bank.class_ids):
        lines.append(
            f"{int(t)} n2d={int(bank.counts2d[i])} n3d={int(bank.counts3d[i])} "
            f"norm2d={np.linalg.norm(bank.p2d[i]):.6f} "
            f"norm3d={np.linalg.norm(bank.p3d[i]):.6f}"
        )
    return "\n".join(lines) + "\n"
