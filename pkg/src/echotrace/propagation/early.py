"""Clustering of low-order specular paths into discrete early reflections."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import InvalidInputError

MAX_ER_BOUNCES = 2


@dataclass(frozen=True)
class EarlyReflection:
    delay: float
    energy: np.ndarray
    direction: np.ndarray
    planes: tuple  # (a, b, c, d) plane equations in bounce order
    n_paths: int = 1

    @property
    def bounces(self):
        return len(self.planes)


def cluster_early_reflections(delays, energies, directions, plane_sequences, plane_equations=None):
    """Merge paths that reflect off the same ordered sequence of planes.

    ``plane_sequences`` is (K, 2) integer plane ids padded with -1 (one id per
    bounce, at most two bounces). Each event carries the summed energy and
    the broadband-energy-weighted mean delay and direction. Events are
    returned sorted by delay.
    """
    delays = np.atleast_1d(np.asarray(delays, dtype=float))
    k = len(delays)
    if k == 0:
        return []
    energies = np.asarray(energies, dtype=float).reshape(k, -1)
    directions = np.asarray(directions, dtype=float).reshape(k, 3)
    seqs = np.asarray(plane_sequences, dtype=np.int64).reshape(k, -1)
    if seqs.shape[1] > MAX_ER_BOUNCES:
        if np.any(seqs[:, MAX_ER_BOUNCES:] >= 0):
            raise InvalidInputError("early reflections have at most two bounces")
        seqs = seqs[:, :MAX_ER_BOUNCES]
    if seqs.shape[1] < MAX_ER_BOUNCES:
        seqs = np.hstack([seqs, np.full((k, MAX_ER_BOUNCES - seqs.shape[1]), -1)])
    keys, inv = np.unique(seqs, axis=0, return_inverse=True)
    inv = inv.reshape(-1)
    w = energies.sum(axis=1)
    out = []
    for c, key in enumerate(keys):
        sel = np.nonzero(inv == c)[0]
        wt = w[sel]
        tot = wt.sum()
        if tot <= 0:
            continue
        delay = float(np.dot(wt, delays[sel]) / tot)
        d = wt @ directions[sel]
        norm = np.linalg.norm(d)
        d = d / norm if norm > 0 else directions[sel[0]]
        ids = tuple(int(i) for i in key if i >= 0)
        if plane_equations is not None:
            planes = tuple(tuple(float(x) for x in plane_equations[i]) for i in ids)
        else:
            planes = ids
        out.append(EarlyReflection(delay, energies[sel].sum(axis=0), d, planes, len(sel)))
    out.sort(key=lambda r: (r.delay, r.planes))
    return out
