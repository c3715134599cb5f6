"""Instrumented tree evaluations checked against closed-form counts."""

from __future__ import annotations

import random
from dataclasses import dataclass

from .. import forest as F
from .. import lhe, metrics
from .. import protocol as P
from . import formulas


@dataclass(frozen=True)
class AuditRow:
    n: int
    d: int
    party: str
    phase: str
    item: str
    expected: int
    measured: int

    @property
    def ok(self) -> bool:
        return self.expected == self.measured

    @property
    def name(self) -> str:
        return f"n={self.n} d={self.d} {self.party}/{self.phase}/{self.item}"


def random_tree(n: int, d: int, rng: random.Random) -> F.DecisionTree:
    nodes = tuple(F.SplitNode(rng.randrange(n), rng.randint(-1000, 1000) / 1000) for _ in range(2**d - 1))
    leaves = tuple(rng.randint(0, 1000) / 1000 for _ in range(2**d))
    return F.DecisionTree(d, nodes, leaves, n)


def audit_pte_counts(n: int, d: int, keys=None, rng=None, group=None) -> list[AuditRow]:
    """Run one counted tree evaluation and compare every recorded tally."""
    rng = rng or random.Random()
    pk, sk = keys or lhe.keygen(1024, "joye-libert", rng=rng)
    tree = random_tree(n, d, rng)
    model, seed = P.encrypt_model(F.RandomForest((tree,), n), pk, rng=rng)
    x = [rng.randint(-1000, 1000) / 1000 for _ in range(n)]
    x_grid = P.encode_input(x, pk.M)
    x_ct = [pk.encrypt(v, rng) for v in x_grid]
    transcript = P.Transcript()
    with metrics.counting() as c:
        shares = P.pte(model.trees[0], x_ct, x_grid, sk, seed, rng, group, transcript=transcript)
    if shares.reconstruct(pk.M) != lhe.to_grid(F.evaluate_tree(tree, x)):
        raise AssertionError(f"tree evaluation produced a wrong label for n={n}, d={d}")

    expected = formulas.pte_op_counts(n, d)
    rows = []
    for (party, ph, op), v in expected.items():
        rows.append(AuditRow(n, d, party, ph, op, v, c.get(party, op, ph)))
    # anything recorded outside the closed form must be zero, except OT keystreams
    for (party, ph, op), v in c.ops.items():
        if (party, ph, op) in expected or (ph == "step5" and op == "prf_calls"):
            continue
        rows.append(AuditRow(n, d, party, ph, op, 0, v))
    rows.append(AuditRow(n, d, "server", "*", "decryptions", 0, c.get("server", "decryptions")))
    sent = {}
    for sender, label, k, _ in transcript.messages:
        sent[(sender, label)] = sent.get((sender, label), 0) + k
    for (sender, label), v in formulas.pte_message_counts(d).items():
        rows.append(AuditRow(n, d, sender, label, "ciphertexts_sent", v, sent.get((sender, label), 0)))
    return rows


def audit_grid(ns=(2, 8, 32), ds=(1, 3, 6), keys=None, rng=None) -> list[AuditRow]:
    rng = rng or random.Random()
    keys = keys or lhe.keygen(1024, "joye-libert", rng=rng)
    rows = []
    for n in ns:
        for d in ds:
            rows.extend(audit_pte_counts(n, d, keys, rng))
    return rows


def audit_model(model: P.EncryptedModel) -> dict[str, int]:
    """Item counts found by parsing the serialized model."""
    inv: dict[str, int] = {}
    buf = P.model_to_bytes(model)
    P.model_from_bytes(buf, inv)
    inv["bytes"] = len(buf)
    return inv


def pps_payloads(n: int, d: int, keys=None, rng=None) -> tuple[int, int]:
    """(measured, closed form) ciphertext-sized payloads of one single-tree scoring run."""
    rng = rng or random.Random()
    pk, sk = keys or lhe.keygen(1024, "joye-libert", rng=rng)
    tree = random_tree(n, d, rng)
    x = [rng.randint(-1000, 1000) / 1000 for _ in range(n)]
    tr = P.Transcript()
    y = P.pps(F.RandomForest((tree,), n), x, sk, rng, transcript=tr)
    if y != F.forest_predict(F.RandomForest((tree,), n), x, exact=True):
        raise AssertionError("scoring run returned a wrong prediction")
    return tr.ciphertext_payloads, n + 2**(d + 1)
