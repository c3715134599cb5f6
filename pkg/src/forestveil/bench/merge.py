"""Silo versus merged versus pooled forests over t providers."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass

import numpy as np
from scipy import stats

from .. import forest as F
from .data import split


@dataclass
class MergeReplicate:
    silo: float      # mean over providers of the local forest's AUC on its own test split
    merged: float    # merged forest, averaged over the same test splits
    pooled: float    # one forest trained on all training splits


@dataclass
class MergeResult:
    t: int
    trees_per_provider: int
    depth: int
    replicates: list[MergeReplicate]

    def _col(self, name: str) -> np.ndarray:
        return np.array([getattr(r, name) for r in self.replicates])

    def summary(self, confidence: float = 0.95) -> dict[str, tuple[float, float, float]]:
        """name -> (mean, ci_low, ci_high) using a t interval."""
        out = {}
        for name in ("silo", "merged", "pooled"):
            v = self._col(name)
            mean = float(v.mean())
            if len(v) > 1 and v.std() > 0:
                lo, hi = stats.t.interval(confidence, len(v) - 1, loc=mean, scale=stats.sem(v))
            else:
                lo = hi = mean
            out[name] = (mean, float(lo), float(hi))
        return out

    def merged_not_worse(self, slack: float = 0.01) -> float:
        """Fraction of replicates with merged AUC >= silo AUC - slack."""
        return float(np.mean(self._col("merged") >= self._col("silo") - slack))


def merge_replicate(data: F.Dataset, t: int, trees_per_provider: int, depth: int,
                    feature_fraction: float, seed: np.random.SeedSequence) -> MergeReplicate:
    if t < 1 or len(data) < 4 * t:
        raise ValueError(f"dataset of {len(data)} rows cannot be split among {t} providers")
    split_seq, *train_seqs = seed.spawn(1 + t)
    rng = np.random.default_rng(split_seq)
    chunks = np.array_split(rng.permutation(len(data)), t)
    parts = [split(data.subset(c), 0.7, rng) for c in chunks]
    seeds = [int(s.generate_state(1)[0]) for s in train_seqs]
    locals_ = [F.train_forest(tr, trees_per_provider, depth, feature_fraction, rng_seed=s)
               for (tr, _), s in zip(parts, seeds)]
    merged = F.merge_forests(*locals_)
    pooled_train = F.Dataset(np.concatenate([tr.X for tr, _ in parts]), np.concatenate([tr.y for tr, _ in parts]))
    # with t = 1 this is the same data, seed and size as the single local forest
    pooled = F.train_forest(pooled_train, trees_per_provider * t, depth, feature_fraction, rng_seed=seeds[0])
    silo = np.mean([F.auc(F.predict_many(f, te.X), te.y) for f, (_, te) in zip(locals_, parts)])
    mer = np.mean([F.auc(F.predict_many(merged, te.X), te.y) for _, te in parts])
    poo = np.mean([F.auc(F.predict_many(pooled, te.X), te.y) for _, te in parts])
    return MergeReplicate(float(silo), float(mer), float(poo))


def merge_experiment(data: F.Dataset, t: int, trees_per_provider: int = 50, depth: int = 6,
                     replicates: int = 50, feature_fraction: float = 0.1, rng_seed: int = 0) -> MergeResult:
    seqs = np.random.SeedSequence([rng_seed, t]).spawn(replicates)
    reps = [merge_replicate(data, t, trees_per_provider, depth, feature_fraction, s) for s in seqs]
    return MergeResult(t, trees_per_provider, depth, reps)


def results_csv(results: list[MergeResult]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf)
    w.writerow(["providers", "trees_per_provider", "depth", "setting", "auc_mean", "ci_low", "ci_high",
                "merged_not_worse_frac"])
    for res in results:
        frac = res.merged_not_worse()
        for name, (mean, lo, hi) in res.summary().items():
            w.writerow([res.t, res.trees_per_provider, res.depth, name, f"{mean:.6f}", f"{lo:.6f}",
                        f"{hi:.6f}", f"{frac:.3f}"])
    return buf.getvalue()
