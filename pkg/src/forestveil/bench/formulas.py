"""Closed-form operation, item and byte counts."""

from __future__ import annotations

from .. import prims
from ..lhe import PublicKey
from ..protocol import Manifest


def pte_op_counts(n: int, d: int) -> dict[tuple[str, str, str], int]:
    """Expected (party, phase, op) tallies for one tree evaluation."""
    nodes = 2**d - 1
    return {
        ("user", "step1", "encryptions"): nodes,
        ("user", "step1", "prf_calls"): nodes,
        ("server", "step1", "scalar_muls"): n * nodes,
        ("server", "step1", "hom_adds"): (n + 1) * nodes,
        ("server", "step3", "scalar_muls"): nodes,
        ("server", "step3", "plain_adds"): nodes,
        ("user", "step3", "decryptions"): nodes,
        ("server", "step5", "plain_adds"): 2**d,
        ("server", "step5", "ot_base_calls"): d,
        ("user", "step5", "ot_base_calls"): d,
        ("user", "step5", "decryptions"): 1,
    }


def pte_message_counts(d: int) -> dict[tuple[str, str], int]:
    """Ciphertext-sized payloads per (sender, step) in one tree evaluation."""
    return {("user", "step1"): 2**d - 1, ("server", "step3"): 2**d - 1, ("server", "step5"): 2**d}


def pps_ciphertext_payloads(n: int, d: int, m: int = 1) -> int:
    """Input, comparisons, OT strings, and the final share."""
    return n + m * (2**d - 1 + 2**d) + 1


def model_item_counts(n: int, m: int, d: int) -> dict[str, int]:
    """What a serialized model actually holds."""
    return {"ciphertexts": m * (2**(d + 1) - 1), "elements": n * m * (2**d - 1), "seed_ciphertexts": 2}


def model_item_counts_stated(n: int, m: int, d: int) -> dict[str, int]:
    """The rounded counts m*2^(d+1) ciphertexts and n*m*2^d elements."""
    return {"ciphertexts": m * 2**(d + 1), "elements": n * m * 2**d}


def model_bytes(n: int, m: int, d: int, pk: PublicKey) -> int:
    """Exact size of ``protocol.model_to_bytes`` output."""
    header = 4 + 18 + 4 + len(pk.to_bytes())
    c = model_item_counts(n, m, d)
    cb, eb = 4 + pk.ct_bytes, 4 + pk.element_bytes
    return header + (c["ciphertexts"] + c["seed_ciphertexts"]) * cb + c["elements"] * eb


def model_bytes_stated(n: int, m: int, d: int, pk: PublicKey) -> int:
    """m*2^d*n elements plus m*2^(d+1) ciphertexts at the same widths."""
    c = model_item_counts_stated(n, m, d)
    return c["ciphertexts"] * (4 + pk.ct_bytes) + c["elements"] * (4 + pk.element_bytes)


def query_bytes(man: Manifest, group: str = "p256") -> dict[str, dict[str, int]]:
    """Exact payload bytes per direction and message type for one query against ``man``."""
    pk = man.pk
    cb = 4 + pk.ct_bytes
    ge = prims.get_group(group).element_bytes
    trees = list(man.trees())
    nodes = [2**d - 1 for _, _, d in trees]
    manifest = 1 + 4 + len(pk.to_bytes()) + 8 + sum(10 + 2 * cb for _ in man.providers)
    return {
        "user->server": {
            "HELLO": 2,
            "QUERY_INIT": cb * (man.n_features + sum(nodes)),
            "OT_R1": sum(d * (4 + ge) for _, _, d in trees),
            "FINAL_SHARE": 0,
        },
        "server->user": {
            "MANIFEST": manifest,
            "SC_BATCH": 4 + ge + cb * sum(nodes),
            "GAMMA_TILDE": sum((k + 7) // 8 for k in nodes),
            "OT_R2": sum(d * 2 * prims.KEY_BYTES + 2**d * (4 + cb + prims.TAG_BYTES) for _, _, d in trees),
            "FINAL_SHARE": 4 + pk.element_bytes,
        },
    }


def r2_bytes(man: Manifest, group: str = "p256") -> int:
    """Server-to-user bytes of the comparison round."""
    q = query_bytes(man, group)["server->user"]
    return q["SC_BATCH"] + q["GAMMA_TILDE"]
