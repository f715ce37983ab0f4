"""Permutation-invariant set encoder: rho(sum_i phi(v_i))."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .neural import DenseNet, backward, forward, polyak_update

VEHICLE_DIM = 3


@dataclass
class EncodeCache:
    phi_cache: object
    rho_cache: object
    segments: np.ndarray
    batch: int


class DeepSetsEncoder:
    """phi: 3 -> hidden -> d_phi (ReLU), summed per set, then rho: d_phi -> hidden -> d_rho."""

    def __init__(self, phi: DenseNet, rho: DenseNet):
        if phi.in_dim != VEHICLE_DIM:
            raise ValueError(f"phi must take {VEHICLE_DIM} vehicle features, got {phi.in_dim}")
        if phi.out_dim != rho.in_dim:
            raise ValueError("phi output and rho input dimensions differ")
        self.phi = phi
        self.rho = rho

    @classmethod
    def create(cls, rng, d_phi=64, d_rho=32, phi_hidden=(64,), rho_hidden=(64,)):
        phi_sizes = [VEHICLE_DIM, *phi_hidden, d_phi]
        rho_sizes = [d_phi, *rho_hidden, d_rho]
        phi = DenseNet.create(phi_sizes, ["relu"] * (len(phi_sizes) - 1), rng)
        rho = DenseNet.create(rho_sizes, ["relu"] * (len(rho_sizes) - 2) + ["identity"], rng)
        return cls(phi, rho)

    @property
    def d_phi(self) -> int:
        return self.phi.out_dim

    @property
    def out_dim(self) -> int:
        return self.rho.out_dim

    def params(self) -> list:
        return self.phi.params() + self.rho.params()

    @property
    def nets(self):
        return [self.phi, self.rho]

    def copy(self) -> "DeepSetsEncoder":
        return DeepSetsEncoder(self.phi.copy(), self.rho.copy())

    def pool(self, rows, segments, batch):
        """Sum-pooled phi outputs per set, shape (batch, d_phi)."""
        pooled = np.zeros((batch, self.d_phi))
        if not len(rows):
            return pooled, None
        out, cache = forward(self.phi, rows)
        # rows of one set are contiguous, so a segmented reduction suffices
        counts = np.bincount(segments, minlength=batch)
        starts = np.concatenate([[0], np.cumsum(counts)[:-1]])
        nonempty = counts > 0
        pooled[nonempty] = np.add.reduceat(out, starts[nonempty], axis=0)
        return pooled, cache

    def encode_batch(self, sets):
        """Encode a list of ``(n_i, 3)`` arrays; returns ``(batch, d_rho)`` and a cache."""
        rows, segments = stack_sets(sets)
        return self.encode_stacked(rows, segments, len(sets))

    def encode_stacked(self, rows, segments, batch):
        pooled, phi_cache = self.pool(rows, segments, batch)
        out, rho_cache = forward(self.rho, pooled)
        return out, EncodeCache(phi_cache, rho_cache, segments, batch)

    def encode(self, vehicles) -> np.ndarray:
        vehicles = np.asarray(vehicles, dtype=float).reshape(-1, VEHICLE_DIM)
        return self.encode_batch([vehicles])[0][0]

    def backward(self, cache: EncodeCache, grad_out):
        """Parameter gradients (``params()`` order) for upstream ``grad_out`` of shape (batch, d_rho)."""
        rho_grads, g_pooled = backward(self.rho, cache.rho_cache, grad_out)
        if cache.phi_cache is None:
            phi_grads = [np.zeros_like(p) for p in self.phi.params()]
        else:
            phi_grads, _ = backward(self.phi, cache.phi_cache, g_pooled[cache.segments])
        return phi_grads + rho_grads

    def touch(self):
        self.phi.touch()
        self.rho.touch()

    def polyak_from(self, source: "DeepSetsEncoder", tau: float):
        polyak_update(self.phi, source.phi, tau)
        polyak_update(self.rho, source.rho, tau)

    def to_dict(self):
        return {"phi": self.phi.to_dict(), "rho": self.rho.to_dict()}

    @classmethod
    def from_dict(cls, d):
        return cls(DenseNet.from_dict(d["phi"]), DenseNet.from_dict(d["rho"]))


def stack_sets(sets):
    """Concatenate variable-size sets into rows plus the owning set index of each row."""
    sizes = [len(s) for s in sets]
    if sum(sizes):
        rows = np.concatenate([np.asarray(s, dtype=float).reshape(-1, VEHICLE_DIM) for s in sets])
    else:
        rows = np.zeros((0, VEHICLE_DIM))
    segments = np.repeat(np.arange(len(sets)), sizes)
    return rows, segments
