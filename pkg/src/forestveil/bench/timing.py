"""Wall-clock timings, mean and standard deviation over repetitions."""

from __future__ import annotations

import csv
import io
import random
import statistics
import time
from dataclasses import dataclass

from .. import forest as F
from .. import lhe
from .. import protocol as P
from .audit import random_tree


@dataclass(frozen=True)
class TimingRow:
    task: str
    scheme: str
    bits: int
    n: int
    m: int
    d: int
    mean_s: float
    std_s: float
    reps: int


def _stats(samples: list[float]) -> tuple[float, float]:
    return statistics.fmean(samples), (statistics.stdev(samples) if len(samples) > 1 else 0.0)


def timing(scheme: str = "paillier", bits: int = 1024, n: int = 8, m: int = 4, d: int = 3,
           reps: int = 5, rng_seed: int | None = None) -> list[TimingRow]:
    rng = random.Random(rng_seed)
    samples: dict[str, list[float]] = {"keygen": [], "encrypt_model": [], "online_predict": [], "pps": []}
    for _ in range(reps):
        t0 = time.perf_counter()
        pk, sk = lhe.keygen(bits, scheme, rng=rng)
        samples["keygen"].append(time.perf_counter() - t0)
        forest = F.RandomForest(tuple(random_tree(n, d, rng) for _ in range(m)), n)
        x = [rng.randint(-1000, 1000) / 1000 for _ in range(n)]
        t0 = time.perf_counter()
        model, _ = P.encrypt_model(forest, pk, rng=rng)
        samples["encrypt_model"].append(time.perf_counter() - t0)
        t0 = time.perf_counter()
        y = P.online_predict(x, [model], sk, rng=rng)
        samples["online_predict"].append(time.perf_counter() - t0)
        t0 = time.perf_counter()
        y2 = P.pps(forest, x, sk, rng=rng)
        samples["pps"].append(time.perf_counter() - t0)
        if not y == y2 == F.forest_predict(forest, x, exact=True):
            raise AssertionError("timed run returned a wrong prediction")
    return [TimingRow(task, scheme, bits, n, m, d, *_stats(v), reps) for task, v in samples.items()]


def rows_csv(rows: list[TimingRow]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf)
    w.writerow(["task", "scheme", "bits", "n", "m", "d", "mean_s", "std_s", "reps"])
    for r in rows:
        w.writerow([r.task, r.scheme, r.bits, r.n, r.m, r.d, f"{r.mean_s:.6f}", f"{r.std_s:.6f}", r.reps])
    return buf.getvalue()
