"""Secure comparison, model encryption, tree evaluation and scoring.

Everything here is honest-but-curious two-party logic with no I/O.  The
server and user halves of a query are split into step methods so the same
code runs in-process (``online_predict``) and over TCP (``transport``).

Tree numbers ``j`` and node numbers ``i`` used as PRF tags are 1-based;
every list index is 0-based.
"""

from __future__ import annotations

import secrets
import struct
import time
from dataclasses import dataclass, field
from fractions import Fraction

from . import forest as F
from . import lhe, metrics, prims
from .lhe import Ciphertext, PublicKey, SecretKey

ELL = 21            # bit budget of a compared value
R_BOUND = 2**42     # Π_SC blinding range, 2^(2*ELL)


class ProtocolError(RuntimeError):
    pass


def _rng(rng):
    return rng if rng is not None else secrets.SystemRandom()


# -- secure comparison --------------------------------------------------------

def sc_budget_ok(M: int, ell: int = ELL, R: int = R_BOUND) -> bool:
    """alpha*(r*a + s) stays inside the signed range of Z_M for |a| < 2^ell."""
    return R * 2**ell <= M // 2


def sc_blind(a_ct: Ciphertext, alpha: int, r: int, s: int, rng=None) -> Ciphertext:
    pk = a_ct.pk
    return pk.add_plain(pk.mul(alpha * r, a_ct), alpha * s, rng)


def sc_party1(a_ct: Ciphertext, pk: PublicKey, ell: int = ELL, R: int = R_BOUND,
              rng=None) -> tuple[int, Ciphertext]:
    """Returns (alpha, c') with c' an encryption of alpha*(r*a + s)."""
    if not sc_budget_ok(pk.M, ell, R):
        raise ProtocolError(f"message space too small for ell={ell}, R=2^{R.bit_length() - 1}")
    rng = _rng(rng)
    r = rng.randint(2, R)
    s = rng.randint(1, r - 1)
    alpha = rng.choice((-1, 1))
    return alpha, sc_blind(a_ct, alpha, r, s, rng)


def sc_party2(c: Ciphertext, sk: SecretKey) -> int:
    return 1 if sk.decrypt_signed(c) >= 0 else -1


# -- encrypted models ---------------------------------------------------------

@dataclass
class EncryptedTree:
    provider: int
    number: int                      # j, 1-based within the provider
    depth: int
    masked: list[list[int]]          # e'_i, one length-n vector per node
    thresholds: list[Ciphertext]     # Enc(-t_i)
    leaves: list[Ciphertext]         # Enc(l_i)

    @property
    def n_features(self) -> int:
        return len(self.masked[0])


@dataclass
class EncryptedModel:
    provider: int
    n_features: int
    depth: int
    trees: list[EncryptedTree]
    seed_ct: tuple[Ciphertext, Ciphertext]
    pk: PublicKey

    @property
    def m(self) -> int:
        return len(self.trees)


def deepen(tree: F.DecisionTree, depth: int) -> F.DecisionTree:
    """Re-complete a plain tree to a larger depth."""
    if tree.depth == depth:
        return tree
    if tree.gamma is not None:
        raise ProtocolError("cannot deepen a randomized tree")

    def partial(pos: int, level: int):
        if level == tree.depth:
            return F.Leaf(tree.leaves[pos - (2**tree.depth - 1)])
        nd = tree.nodes[pos]
        return F.Node(nd.feature, nd.threshold, partial(2 * pos + 1, level + 1), partial(2 * pos + 2, level + 1))

    return F.complete_tree(partial(0, 0), depth, tree.n_features)


def encrypt_model(forest: F.RandomForest, pk: PublicKey, seed: prims.PrfSeed | None = None,
                  provider: int = 1, rng=None) -> tuple[EncryptedModel, prims.PrfSeed]:
    """Off-line model encryption: masked selectors, Enc(-t_i), Enc(l_i)."""
    rng = _rng(rng)
    seed = seed if seed is not None else prims.PrfSeed.random(rng)
    M, n, d = pk.M, forest.n_features, forest.d
    trees = []
    with metrics.acting("provider", "offline"):
        for j, tree in enumerate(forest.trees, start=1):
            tree = deepen(tree, d)
            masked, thresholds = [], []
            for i, nd in enumerate(tree.nodes, start=1):
                e = prims.prf_mask(seed, (j, i), n, M)
                e[nd.feature] = (e[nd.feature] + 1) % M
                masked.append(e)
                thresholds.append(pk.encrypt(-lhe.to_grid(nd.threshold), rng))
            leaves = [pk.encrypt(lhe.to_grid(v), rng) for v in tree.leaves]
            trees.append(EncryptedTree(provider, j, d, masked, thresholds, leaves))
        hi, lo = seed.halves()
        seed_ct = (pk.encrypt(hi, rng), pk.encrypt(lo, rng))
    return EncryptedModel(provider, n, d, trees, seed_ct, pk), seed


_MODEL_MAGIC = b"FVEM"
_MODEL_VERSION = 1


def model_to_bytes(model: EncryptedModel) -> bytes:
    pk = model.pk
    eb = pk.element_bytes
    out = [_MODEL_MAGIC, struct.pack(">HIIII", _MODEL_VERSION, model.provider, model.n_features,
                                     model.m, model.depth)]
    pkb = pk.to_bytes()
    out += [struct.pack(">I", len(pkb)), pkb, model.seed_ct[0].to_bytes(), model.seed_ct[1].to_bytes()]
    for t in model.trees:
        for vec in t.masked:
            out.extend(lhe.int_to_lp(v, eb) for v in vec)
        out.extend(c.to_bytes() for c in t.thresholds)
        out.extend(c.to_bytes() for c in t.leaves)
    return b"".join(out)


def model_from_bytes(buf: bytes, inventory: dict | None = None) -> EncryptedModel:
    """Parse a serialized model; ``inventory`` (if given) receives item counts."""
    if buf[:4] != _MODEL_MAGIC:
        raise lhe.DecodeError("not an encrypted model")
    version, provider, n, m, d = struct.unpack_from(">HIIII", buf, 4)
    if version != _MODEL_VERSION:
        raise lhe.DecodeError(f"unsupported model version {version}")
    off = 22
    (pk_len,) = struct.unpack_from(">I", buf, off)
    pk, end = lhe.public_key_from_bytes(buf[off + 4:off + 4 + pk_len])
    off += 4 + pk_len
    counts = {"ciphertexts": 0, "elements": 0, "seed_ciphertexts": 2}
    s_hi, off = pk.ciphertext_from_bytes(buf, off)
    s_lo, off = pk.ciphertext_from_bytes(buf, off)
    eb = pk.element_bytes
    trees = []
    for j in range(1, m + 1):
        masked = []
        for _ in range(2**d - 1):
            vec = []
            for _ in range(n):
                v, nxt = lhe.lp_to_int(buf, off)
                if nxt - off - 4 != eb or v >= pk.M:
                    raise lhe.DecodeError("bad group element in model")
                vec.append(v)
                off = nxt
            masked.append(vec)
        counts["elements"] += n * (2**d - 1)
        thresholds, leaves = [], []
        for _ in range(2**d - 1):
            c, off = pk.ciphertext_from_bytes(buf, off)
            thresholds.append(c)
        for _ in range(2**d):
            c, off = pk.ciphertext_from_bytes(buf, off)
            leaves.append(c)
        counts["ciphertexts"] += 2**(d + 1) - 1
        trees.append(EncryptedTree(provider, j, d, masked, thresholds, leaves))
    if off != len(buf):
        raise lhe.DecodeError("trailing bytes after model")
    if inventory is not None:
        inventory.update(counts)
    return EncryptedModel(provider, n, d, trees, (s_hi, s_lo), pk)


# -- manifest -----------------------------------------------------------------

@dataclass(frozen=True)
class ProviderEntry:
    provider: int
    m: int
    depth: int
    seed_ct: tuple[Ciphertext, Ciphertext]


@dataclass(frozen=True)
class Manifest:
    pk: PublicKey
    n_features: int
    providers: tuple[ProviderEntry, ...]

    @property
    def m(self) -> int:
        return sum(p.m for p in self.providers)

    def trees(self):
        """(provider, tree number, depth) in evaluation order."""
        for p in self.providers:
            for j in range(1, p.m + 1):
                yield p.provider, j, p.depth

    @classmethod
    def of(cls, models: list[EncryptedModel]) -> "Manifest":
        if not models:
            raise ProtocolError("no models")
        pk = models[0].pk
        n = models[0].n_features
        for mdl in models:
            if mdl.n_features != n:
                raise ProtocolError("providers disagree on the number of features")
            if mdl.pk != pk:
                raise ProtocolError("providers used different public keys")
        entries = tuple(ProviderEntry(mdl.provider, mdl.m, mdl.depth, mdl.seed_ct)
                        for mdl in sorted(models, key=lambda x: x.provider))
        return cls(pk, n, entries)


# -- test-only observation hooks -----------------------------------------------

class Tap:
    """No-op hooks; tests subclass this to decrypt and assert mid-protocol."""

    def node_values(self, key, values: list[Ciphertext]) -> None:
        pass

    def randomized(self, key, gamma, node_src, leaf_src) -> None:
        pass

    def path(self, key, z: list[int], leaf: int) -> None:
        pass


# -- tree evaluation: server half ------------------------------------------------

class TreeEvaluation:
    """Server state for evaluating one encrypted tree within one query."""

    def __init__(self, tree: EncryptedTree, pk: PublicKey, rng=None, tap: Tap | None = None):
        self.tree = tree
        self.pk = pk
        self.rng = _rng(rng)
        self.tap = tap
        self.key = (tree.provider, tree.number)
        self.alphas: list[int] = []
        self.r_share: int | None = None

    def node_values(self, x_ct: list[Ciphertext], b_ct: list[Ciphertext],
                    tables=None) -> list[Ciphertext]:
        """Step 1: N'_i = prod_s Mult(e'_i[s], x'[s]) * t'_i * b'_i.

        ``tables`` are window tables of ``x_ct`` shared across trees.
        """
        t, pk = self.tree, self.pk
        if len(x_ct) != t.n_features or len(b_ct) != len(t.thresholds):
            raise ProtocolError("input does not match the tree shape")
        if tables is None:
            w = pk.window_bits(len(t.masked))
            tables = [pk.window_table(c, w) for c in x_ct]
        out = []
        with metrics.phase("step1"):
            for e, t_ct, b in zip(t.masked, t.thresholds, b_ct):
                acc = pk.multi_mul(e, tables=tables)
                out.append(pk.add(pk.add(acc, t_ct), b))
        if self.tap:
            self.tap.node_values(self.key, out)
        return out

    def compare(self, values: list[Ciphertext]) -> tuple[list[Ciphertext], list[int]]:
        """Steps 2-4: randomize, blind every node, and form gamma-tilde.

        Returns the Π_SC ciphertexts and gamma-tilde, both in randomized order.
        """
        d = self.tree.depth
        with metrics.phase("step2"):
            gamma = [self.rng.choice((-1, 1)) for _ in range(2**d - 1)]
            self.node_src, self.leaf_src = F.randomization_maps(d, gamma)
        if self.tap:
            self.tap.randomized(self.key, gamma, self.node_src, self.leaf_src)
        cts = []
        with metrics.phase("step3"):
            for o in self.node_src:
                alpha, c = sc_party1(values[o], self.pk, rng=self.rng)
                self.alphas.append(alpha)
                cts.append(c)
        return cts, [g * a for g, a in zip(gamma, self.alphas)]

    def masked_leaves(self) -> list[Ciphertext]:
        """Step 5 (sender input): l'_i * Enc(-r) in randomized leaf order."""
        pk = self.pk
        self.r_share = self.rng.randrange(pk.M)
        with metrics.phase("step5"):
            return [pk.add_plain(self.tree.leaves[o], -self.r_share, self.rng) for o in self.leaf_src]


# -- tree evaluation: user half ----------------------------------------------------

def blinding_values(seed: prims.PrfSeed, number: int, depth: int, x_grid: list[int],
                    pk: PublicKey, rng=None) -> list[Ciphertext]:
    """Step 1 (user): b'_i = Enc(-F(seed, (j, i)) . x)."""
    M, n = pk.M, len(x_grid)
    out = []
    with metrics.phase("step1"):
        for i in range(1, 2**depth):
            mask = prims.prf_mask(seed, (number, i), n, M)
            b = sum(f * x for f, x in zip(mask, x_grid)) % M
            out.append(pk.encrypt(-b, rng))
    return out


def comparison_signs(cts: list[Ciphertext], sk: SecretKey) -> list[int]:
    with metrics.phase("step3"):
        return [sc_party2(c, sk) for c in cts]


def locate_leaf(depth: int, gamma_tilde: list[int], betas: list[int]) -> tuple[int, list[int]]:
    """Step 4: the unique leaf with P^{gamma~}(beta) != 0."""
    if len(gamma_tilde) != 2**depth - 1 or len(betas) != 2**depth - 1:
        raise ProtocolError("gamma-tilde / beta length does not match the depth")
    z = [p.evaluate(betas, gamma_tilde) for p in F.path_polynomials(depth)]
    hits = [i for i, v in enumerate(z) if v != 0]
    if len(hits) != 1:
        raise ProtocolError(f"expected exactly one reachable leaf, found {len(hits)}")
    return hits[0], z


@dataclass(frozen=True)
class LabelShares:
    r: int   # server
    s: int   # user

    def reconstruct(self, M: int) -> int:
        return lhe.to_signed(self.r + self.s, M)


def pte(tree: EncryptedTree, x_ct: list[Ciphertext], x_grid: list[int], sk: SecretKey,
        seed: prims.PrfSeed, rng=None, group=None, tap: Tap | None = None,
        transcript: "Transcript | None" = None) -> LabelShares:
    """Run tree evaluation for one tree with both halves in-process."""
    rng = _rng(rng)
    pk = sk.pk
    log = transcript.log if transcript is not None else (lambda *a: None)
    server = TreeEvaluation(tree, pk, rng, tap)
    with metrics.acting("user"):
        b_ct = blinding_values(seed, tree.number, tree.depth, x_grid, pk, rng)
    log("user", "step1", len(b_ct), sum(len(c.to_bytes()) for c in b_ct))
    with metrics.acting("server"):
        cts, gt = server.compare(server.node_values(x_ct, b_ct))
    log("server", "step3", len(cts), sum(len(c.to_bytes()) for c in cts))
    log("server", "step4", 0, (len(gt) + 7) // 8)
    with metrics.acting("user"):
        betas = comparison_signs(cts, sk)
        with metrics.phase("step4"):
            leaf, z = locate_leaf(tree.depth, gt, betas)
    if tap:
        tap.path(server.key, z, leaf)
    with metrics.acting("server"):
        strings = [c.to_bytes() for c in server.masked_leaves()]
        base_s = prims.BaseOTSender(group, rng)
        sender = prims.OTNSender(strings, base_s)
    with metrics.acting("user", "step5"):
        receiver = prims.OTNReceiver(leaf, tree.depth, prims.BaseOTReceiver(base_s.setup, base_s.group, rng))
        choices = receiver.choose()
    log("user", "step5", 0, sum(len(b) for b in choices))
    with metrics.acting("server", "step5"):
        resp = sender.respond(choices)
    log("server", "step5", len(resp[1]), sum(len(b) for b in resp[0] + resp[1]))
    with metrics.acting("user", "step5"):
        c, _ = pk.ciphertext_from_bytes(receiver.finish(*resp))
        s = sk.decrypt(c)
    return LabelShares(server.r_share, s)


# -- on-line phase, batched into four round trips ----------------------------------

def encode_input(x, M: int) -> list[int]:
    return [lhe.to_grid(v) for v in x]


class ServerSession:
    """Server half of one query over every stored tree."""

    def __init__(self, models: list[EncryptedModel], rng=None, group=None, tap: Tap | None = None):
        self.manifest = Manifest.of(models)
        self.pk = self.manifest.pk
        self.rng = _rng(rng)
        self.group = group or prims.P256()
        by_id = {mdl.provider: mdl for mdl in models}
        self.evals = [TreeEvaluation(by_id[k].trees[j - 1], self.pk, self.rng, tap)
                      for k, j, _ in self.manifest.trees()]
        self._senders: list[prims.OTNSender] = []
        self._base: prims.BaseOTSender | None = None

    def evaluate(self, x_ct: list[Ciphertext], b_ct: list[list[Ciphertext]]):
        """R1 -> R2: returns (OT setup, per-tree Π_SC ciphertexts, per-tree gamma-tilde)."""
        if len(x_ct) != self.manifest.n_features:
            raise ProtocolError(f"expected {self.manifest.n_features} encrypted features")
        if len(b_ct) != len(self.evals):
            raise ProtocolError(f"expected blinding values for {len(self.evals)} trees")
        cts, gts = [], []
        with metrics.acting("server"):
            for c in x_ct:
                self.pk._check(c)
            w = self.pk.window_bits(sum(len(ev.tree.masked) for ev in self.evals))
            tables = [self.pk.window_table(c, w) for c in x_ct]
            for ev, b in zip(self.evals, b_ct):
                c, g = ev.compare(ev.node_values(x_ct, b, tables))
                cts.append(c)
                gts.append(g)
            self._base = prims.BaseOTSender(self.group, self.rng)
            offset = 0
            for ev in self.evals:
                strings = [c.to_bytes() for c in ev.masked_leaves()]
                self._senders.append(prims.OTNSender(strings, self._base, offset))
                offset += ev.tree.depth
        return self._base.setup, cts, gts

    def transfer(self, choices: list[list[bytes]]):
        """R3: answer every tree's base-OT choices."""
        if self._base is None or len(choices) != len(self._senders):
            raise ProtocolError("OT request out of order or for the wrong number of trees")
        with metrics.acting("server", "step5"):
            return [s.respond(c) for s, c in zip(self._senders, choices)]

    def final_share(self) -> int:
        """R4: r = sum of the server's label shares."""
        if any(ev.r_share is None for ev in self.evals):
            raise ProtocolError("final share requested before label computation")
        return sum(ev.r_share for ev in self.evals) % self.pk.M


class UserSession:
    """User half of one query."""

    def __init__(self, manifest: Manifest, sk: SecretKey, x, rng=None, group=None,
                 tap: Tap | None = None):
        if sk.pk != manifest.pk:
            raise ProtocolError("secret key does not match the server's public key")
        if len(x) != manifest.n_features:
            raise ProtocolError(f"input has {len(x)} features, models expect {manifest.n_features}")
        self.manifest = manifest
        self.sk = sk
        self.pk = manifest.pk
        self.rng = _rng(rng)
        self.group = group or prims.P256()
        self.tap = tap
        self.x_grid = encode_input(x, self.pk.M)
        self.timings: dict[str, float] = {}
        with metrics.acting("user", "setup"):
            self.seeds = {p.provider: prims.PrfSeed.from_halves(sk.decrypt(p.seed_ct[0]), sk.decrypt(p.seed_ct[1]))
                          for p in manifest.providers}
        self.trees = list(manifest.trees())
        self._receivers: list[prims.OTNReceiver] = []
        self._shares: list[int] = []

    def _timed(self, name, t0):
        self.timings[name] = self.timings.get(name, 0.0) + time.perf_counter() - t0

    def submit(self) -> tuple[list[Ciphertext], list[list[Ciphertext]]]:
        """R1: Enc(x) and every tree's blinding ciphertexts."""
        t0 = time.perf_counter()
        with metrics.acting("user", "input"):
            x_ct = [self.pk.encrypt(v, self.rng) for v in self.x_grid]
        with metrics.acting("user"):
            b_ct = [blinding_values(self.seeds[k], j, d, self.x_grid, self.pk, self.rng)
                    for k, j, d in self.trees]
        self._timed("submit", t0)
        return x_ct, b_ct

    def choose_leaves(self, ot_setup: bytes, cts: list[list[Ciphertext]], gts: list[list[int]]):
        """R2 -> R3: recover betas, find each i*, open the OT requests."""
        t0 = time.perf_counter()
        if len(cts) != len(self.trees) or len(gts) != len(self.trees):
            raise ProtocolError("comparison batch does not match the manifest")
        base = prims.BaseOTReceiver(ot_setup, self.group, self.rng)
        offset = 0
        requests = []
        with metrics.acting("user"):
            for (k, j, d), c, g in zip(self.trees, cts, gts):
                betas = comparison_signs(c, self.sk)
                with metrics.phase("step4"):
                    leaf, z = locate_leaf(d, g, betas)
                if self.tap:
                    self.tap.path((k, j), z, leaf)
                rec = prims.OTNReceiver(leaf, d, base, offset)
                offset += d
                with metrics.phase("step5"):
                    requests.append(rec.choose())
                self._receivers.append(rec)
        self._timed("compare", t0)
        return requests

    def receive_labels(self, responses) -> None:
        t0 = time.perf_counter()
        if len(responses) != len(self._receivers):
            raise ProtocolError("OT responses do not match the requests")
        with metrics.acting("user", "step5"):
            for rec, (base_msgs, blobs) in zip(self._receivers, responses):
                c, _ = self.pk.ciphertext_from_bytes(rec.finish(base_msgs, blobs))
                self._shares.append(self.sk.decrypt(c))
        self._timed("labels", t0)

    def predict(self, r: int) -> Fraction:
        """y = (s + r) / m, exactly."""
        total = lhe.to_signed(sum(self._shares) + r, self.pk.M)
        return Fraction(total, lhe.SCALE * self.manifest.m)


def online_predict(x, models: list[EncryptedModel], sk: SecretKey, rng=None, group=None,
                   tap: Tap | None = None) -> Fraction:
    """Run a whole query in-process and return the user's output y."""
    server = ServerSession(models, rng, group, tap)
    user = UserSession(server.manifest, sk, x, rng, group, tap)
    setup, cts, gts = server.evaluate(*user.submit())
    user.receive_labels(server.transfer(user.choose_leaves(setup, cts, gts)))
    return user.predict(server.final_share())


# -- standalone two-party scoring ---------------------------------------------------

@dataclass
class Transcript:
    """Messages exchanged in-process, with their ciphertext-sized payload counts."""

    messages: list[tuple[str, str, int, int]] = field(default_factory=list)

    def log(self, sender: str, label: str, n_ct: int, nbytes: int) -> None:
        self.messages.append((sender, label, n_ct, nbytes))

    @property
    def ciphertext_payloads(self) -> int:
        return sum(m[2] for m in self.messages)

    @property
    def bytes(self) -> int:
        return sum(m[3] for m in self.messages)


class PPSProvider:
    """Provider with a plaintext forest answering one client."""

    def __init__(self, forest: F.RandomForest, pk: PublicKey, rng=None, group=None):
        self.forest = forest
        self.pk = pk
        self.rng = _rng(rng)
        self.group = group or prims.P256()
        self._r: list[int] = []

    def evaluate(self, x_ct: list[Ciphertext]):
        pk, rng = self.pk, self.rng
        if len(x_ct) != self.forest.n_features:
            raise ProtocolError("input dimension mismatch")
        self._base = prims.BaseOTSender(self.group, rng)
        self._senders = []
        cts, gts = [], []
        offset = 0
        with metrics.acting("provider"):
            for tree in self.forest.trees:
                d = tree.depth
                gamma = [rng.choice((-1, 1)) for _ in range(2**d - 1)]
                rt, leaf_src = F.randomize_tree(tree, gamma)
                alphas, c_tree = [], []
                for nd in rt.nodes:
                    n_ct = pk.add_plain(x_ct[nd.feature], -lhe.to_grid(nd.threshold), rng)
                    alpha, c = sc_party1(n_ct, pk, rng=rng)
                    alphas.append(alpha)
                    c_tree.append(c)
                cts.append(c_tree)
                gts.append([g * a for g, a in zip(gamma, alphas)])
                r = rng.randrange(pk.M)
                self._r.append(r)
                strings = [lhe.int_to_lp((lhe.to_grid(v) - r) % pk.M, pk.ct_bytes) for v in rt.leaves]
                self._senders.append(prims.OTNSender(strings, self._base, offset))
                offset += d
        return self._base.setup, cts, gts

    def transfer(self, choices):
        with metrics.acting("provider"):
            return [s.respond(c) for s, c in zip(self._senders, choices)]

    def final_share(self) -> int:
        return sum(self._r) % self.pk.M


def pps(forest: F.RandomForest, x, sk: SecretKey, rng=None, group=None,
        transcript: Transcript | None = None) -> Fraction:
    """Client-provider scoring: the client holds sk, the provider the plain forest."""
    rng = _rng(rng)
    pk = sk.pk
    log = transcript.log if transcript is not None else (lambda *a: None)
    provider = PPSProvider(forest, pk, rng, group)
    group = provider.group
    x_grid = encode_input(x, pk.M)
    with metrics.acting("client"):
        x_ct = [pk.encrypt(v, rng) for v in x_grid]
    log("client", "input", len(x_ct), sum(len(c.to_bytes()) for c in x_ct))
    setup, cts, gts = provider.evaluate(x_ct)
    log("provider", "comparisons", sum(map(len, cts)),
        len(setup) + sum(len(c.to_bytes()) for cl in cts for c in cl) + sum((len(g) + 7) // 8 for g in gts))
    base = prims.BaseOTReceiver(setup, group, rng)
    receivers, requests = [], []
    offset = 0
    with metrics.acting("client"):
        for tree, c, g in zip(provider.forest.trees, cts, gts):
            betas = [sc_party2(ci, sk) for ci in c]
            leaf, _ = locate_leaf(tree.depth, g, betas)
            rec = prims.OTNReceiver(leaf, tree.depth, base, offset)
            offset += tree.depth
            requests.append(rec.choose())
            receivers.append(rec)
    log("client", "ot_choices", 0, sum(len(b) for req in requests for b in req))
    responses = provider.transfer(requests)
    log("provider", "ot_strings", sum(len(blobs) for _, blobs in responses),
        sum(len(b) for msgs, blobs in responses for b in msgs + blobs))
    shares = []
    for rec, (msgs, blobs) in zip(receivers, responses):
        v, _ = lhe.lp_to_int(rec.finish(msgs, blobs))
        shares.append(v)
    r = provider.final_share()
    log("provider", "final", 1, len(lhe.int_to_lp(r, pk.ct_bytes)))
    total = lhe.to_signed(sum(shares) + r, pk.M)
    return Fraction(total, lhe.SCALE * provider.forest.m)
