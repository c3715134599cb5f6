"""Depth/size grid search, optionally restricted to m * 2^d <= s."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field

import numpy as np

from .. import forest as F
from .data import split


def admissible(m: int, d: int, budget: int | None) -> bool:
    return budget is None or m * 2**d <= budget


@dataclass
class SweepResult:
    depths: list[int]
    trees: list[int]
    auc: dict[tuple[int, int], float]            # (d, m) -> mean AUC
    replicates: dict[tuple[int, int], list[float]] = field(default_factory=dict)
    budget: int | None = None

    def best(self, budget: int | None = None) -> tuple[int, int, float]:
        """(d*, m*, AUC) maximizing AUC over admissible cells; ties go to the cheaper cell."""
        cells = [(d, m) for (d, m) in self.auc if admissible(m, d, budget)]
        if not cells:
            raise ValueError("no grid cell satisfies the budget")
        d, m = max(cells, key=lambda c: (self.auc[c], -c[1] * 2**c[0]))
        return d, m, self.auc[(d, m)]

    @property
    def best_unconstrained(self) -> tuple[int, int, float]:
        return self.best(None)

    @property
    def best_constrained(self) -> tuple[int, int, float]:
        return self.best(self.budget)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf)
        w.writerow(["depth", "trees", "cost", "admissible", "auc_mean", "auc_std", "replicates"])
        for d in self.depths:
            for m in self.trees:
                reps = self.replicates.get((d, m), [self.auc[(d, m)]])
                w.writerow([d, m, m * 2**d, int(admissible(m, d, self.budget)),
                            f"{self.auc[(d, m)]:.6f}", f"{np.std(reps):.6f}", len(reps)])
        return buf.getvalue()


def sweep(data: F.Dataset, depths, trees, replicates: int = 3, budget: int | None = None,
          feature_fraction: float = 0.1, train_fraction: float = 0.7, rng_seed: int = 0) -> SweepResult:
    """Mean held-out AUC for every (d, m) cell.

    Within a replicate and depth one forest of max(trees) is grown; the
    forest of size m is its first m trees, which is the same distribution
    as growing m trees from scratch.
    """
    depths, trees = sorted(set(depths)), sorted(set(trees))
    if not depths or not trees:
        raise ValueError("empty sweep grid")
    ss = np.random.SeedSequence(rng_seed)
    reps: dict[tuple[int, int], list[float]] = {(d, m): [] for d in depths for m in trees}
    for rep_seq in ss.spawn(replicates):
        split_seq, *depth_seqs = rep_seq.spawn(1 + len(depths))
        tr, te = split(data, train_fraction, np.random.default_rng(split_seq))
        for d, dseq in zip(depths, depth_seqs):
            big = F.train_forest(tr, trees[-1], d, feature_fraction, rng_seed=int(dseq.generate_state(1)[0]))
            per_tree = np.stack([F.predict_many(F.RandomForest((t,), big.n_features), te.X) for t in big.trees])
            csum = np.cumsum(per_tree, axis=0)
            for m in trees:
                reps[(d, m)].append(F.auc(csum[m - 1] / m, te.y))
    auc = {k: float(np.mean(v)) for k, v in reps.items()}
    return SweepResult(depths, trees, auc, reps, budget)
