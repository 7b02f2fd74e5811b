"""Marked Galton-Watson trees with diffusing particles.

Trees are generated breadth first and stored as flat node tables so that a
whole batch of independent trees can be simulated with array operations.
Diffusion along a branch restarts from the parent's death position, which
has the same law as concatenating Brownian increments.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, TextIO

import numpy as np

from .dynamics import Dynamics

DEFAULT_NODE_CAP = 1_000_000


class TreeOverflowError(RuntimeError):
    """A tree grew past the configured node cap."""

    def __init__(self, cap: int):
        super().__init__(f"tree overflow: more than {cap} nodes in a single tree")
        self.cap = cap


@dataclass(frozen=True)
class BranchingLaw:
    """Offspring distribution ``p_0..p_L`` and exponential lifetimes."""

    offspring_probs: np.ndarray
    lifetime_rate: float = 0.4

    def __post_init__(self):
        p = np.asarray(self.offspring_probs, dtype=float)
        if p.ndim != 1 or p.size < 1 or np.any(p < 0) or abs(p.sum() - 1.0) > 1e-12:
            raise ValueError("offspring_probs must be nonnegative and sum to one")
        if not self.lifetime_rate > 0:
            raise ValueError("lifetime_rate must be positive")
        object.__setattr__(self, "offspring_probs", p)

    @classmethod
    def uniform(cls, max_offspring: int, lifetime_rate: float = 0.4):
        return cls(np.full(max_offspring + 1, 1.0 / (max_offspring + 1)), lifetime_rate)

    @property
    def max_offspring(self) -> int:
        return self.offspring_probs.size - 1

    def density(self, s):
        return self.lifetime_rate * np.exp(-self.lifetime_rate * np.asarray(s, dtype=float))

    def survival(self, s):
        return np.exp(-self.lifetime_rate * np.asarray(s, dtype=float))

    def sample_lifetimes(self, rng, n):
        return rng.exponential(1.0 / self.lifetime_rate, n)

    def sample_offspring(self, rng, n):
        return rng.choice(self.offspring_probs.size, size=n, p=self.offspring_probs)


@dataclass(frozen=True, eq=False)
class ParticleTree:
    """Node table for one or more independent trees on ``[0, horizon]``.

    ``offspring`` is ``-1`` for survivors (death time at or after the
    horizon). ``x_end`` is the position at ``min(death, horizon)``.
    """

    horizon: float
    n_trees: int
    tree: np.ndarray
    parent: np.ndarray
    child_index: np.ndarray
    birth: np.ndarray
    death: np.ndarray
    offspring: np.ndarray
    x_birth: np.ndarray
    x_end: np.ndarray
    paths: Optional[list] = None

    @property
    def n_nodes(self) -> int:
        return self.tree.size

    @property
    def lifetime(self) -> np.ndarray:
        return self.death - self.birth

    @property
    def survivor(self) -> np.ndarray:
        return self.offspring < 0

    def labels(self) -> list:
        """Ulam-Harris labels, root ``(1,)`` and ``k + (j,)`` for the j-th child."""
        out = [None] * self.n_nodes
        for i in range(self.n_nodes):
            p = self.parent[i]
            out[i] = (1,) if p < 0 else out[p] + (int(self.child_index[i]),)
        return out

    def _check_time(self, t):
        if not 0.0 <= t <= self.horizon:
            raise ValueError(f"t={t} outside [0, {self.horizon}]")

    def alive_at(self, t: float) -> set:
        self._check_time(t)
        mask = (self.birth <= t) & (t < self.death)
        return self._label_set(mask)

    def dead_in(self, t: float) -> set:
        self._check_time(t)
        return self._label_set(self.death <= t)

    def _label_set(self, mask):
        labels = self.labels()
        if self.n_trees == 1:
            return {labels[i] for i in np.flatnonzero(mask)}
        return {(int(self.tree[i]),) + labels[i] for i in np.flatnonzero(mask)}

    def count_per_tree(self, mask) -> np.ndarray:
        return np.bincount(self.tree[mask], minlength=self.n_trees)

    def dump(self, stream: TextIO) -> None:
        """One node per line: label, birth, death, offspring, birth and end positions."""
        stream.write("# tree label birth death offspring x_birth x_end\n")
        for i, lab in enumerate(self.labels()):
            xb = " ".join(f"{v:.10g}" for v in self.x_birth[i])
            xe = " ".join(f"{v:.10g}" for v in self.x_end[i])
            label = ".".join(str(v) for v in lab)
            stream.write(f"{self.tree[i]} {label} {self.birth[i]:.10g} {self.death[i]:.10g} "
                         f"{self.offspring[i]} {xb} {xe}\n")


def simulate_forest(law: BranchingLaw, dyn: Dynamics, x0, horizon: float, n_trees: int, rng,
                    node_cap: int = DEFAULT_NODE_CAP, record_paths: bool = False) -> ParticleTree:
    """Simulate ``n_trees`` independent trees rooted at ``x0`` on ``[0, horizon]``."""
    if horizon < 0:
        raise ValueError("horizon must be nonnegative")
    x0 = np.atleast_1d(np.asarray(x0, dtype=float))
    d = x0.size
    cols = {k: [] for k in ("tree", "parent", "child", "birth", "death", "xi", "xb", "xe")}
    paths = [] if record_paths else None

    gen_tree = np.arange(n_trees)
    gen_parent = np.full(n_trees, -1)
    gen_child = np.ones(n_trees, dtype=int)
    gen_birth = np.zeros(n_trees)
    gen_x = np.broadcast_to(dyn.box.clamp(x0), (n_trees, d)).copy()
    offset = 0
    counts = np.zeros(n_trees, dtype=np.int64)
    while gen_tree.size:
        counts += np.bincount(gen_tree, minlength=n_trees)
        if counts.max() > node_cap:
            raise TreeOverflowError(node_cap)
        m = gen_tree.size
        delta = law.sample_lifetimes(rng, m)
        death = gen_birth + delta
        dur = np.minimum(death, horizon) - gen_birth
        if record_paths:
            x_end, gen_paths = dyn.simulate(gen_x, dur, rng, record=True)
            paths.extend((pos, gen_birth[i] + ts) for i, (pos, ts) in enumerate(gen_paths))
        else:
            x_end = dyn.simulate(gen_x, dur, rng)
        dies = death < horizon
        xi = np.full(m, -1)
        xi[dies] = law.sample_offspring(rng, int(dies.sum()))
        for key, val in zip(("tree", "parent", "child", "birth", "death", "xi", "xb", "xe"),
                            (gen_tree, gen_parent, gen_child, gen_birth, death, xi, gen_x, x_end)):
            cols[key].append(val)
        n_kids = np.where(dies, xi, 0)
        idx = np.repeat(np.arange(m), n_kids)
        gen_tree = gen_tree[idx]
        gen_parent = offset + idx
        # 1-based position among siblings
        starts = np.cumsum(n_kids) - n_kids
        gen_child = np.arange(idx.size) - np.repeat(starts, n_kids) + 1
        gen_birth = death[idx]
        gen_x = x_end[idx]
        offset += m

    cat = {k: np.concatenate(v) for k, v in cols.items()}
    return ParticleTree(
        horizon=float(horizon), n_trees=n_trees, tree=cat["tree"], parent=cat["parent"],
        child_index=cat["child"], birth=cat["birth"], death=cat["death"], offspring=cat["xi"],
        x_birth=cat["xb"].reshape(-1, d), x_end=cat["xe"].reshape(-1, d), paths=paths,
    )


def simulate_tree(law: BranchingLaw, dyn: Dynamics, x0, horizon: float, rng,
                  node_cap: int = DEFAULT_NODE_CAP, record_paths: bool = True) -> ParticleTree:
    """Single tree with full Euler paths along each branch."""
    return simulate_forest(law, dyn, x0, horizon, 1, rng, node_cap=node_cap, record_paths=record_paths)
