import itertools
import random
from fractions import Fraction

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from forestveil import forest as F
from forestveil import lhe, prims
from forestveil import protocol as P
from forestveil.bench.audit import random_tree


def const_tree(v, n=2):
    return F.DecisionTree(1, (F.SplitNode(0, 0.0),), (v, v), n)


class OracleTap(P.Tap):
    """Decrypts server-side values and checks them against plaintext trees."""

    def __init__(self, sk, trees, x):
        self.sk, self.trees, self.x = sk, trees, x
        self.grid = [lhe.to_grid(v) for v in x]
        self.paths = {}
        self.src = {}

    def node_values(self, key, values):
        tree = self.trees[key]
        got = [self.sk.decrypt_signed(c) for c in values]
        assert got == [self.grid[nd.feature] - lhe.to_grid(nd.threshold) for nd in tree.nodes]

    def randomized(self, key, gamma, node_src, leaf_src):
        self.src[key] = (gamma, leaf_src)

    def path(self, key, z, leaf):
        assert sum(1 for v in z if v != 0) == 1
        tree = self.trees[key]
        _, leaf_src = self.src[key]
        assert leaf_src[leaf] == F.leaf_index(tree, self.x)
        self.paths[key] = leaf


class AllPlus(random.Random):
    def choice(self, seq):
        if tuple(seq) == (-1, 1):
            return 1
        return super().choice(seq)


# -- secure comparison

def test_sc_example_five(jl_keys, rng):
    pk, sk = jl_keys
    c = P.sc_blind(pk.encrypt(5, rng), 1, 2, 1, rng)
    assert sk.decrypt_signed(c) == 11
    assert P.sc_party2(c, sk) == 1


def test_sc_zero_sign_is_alpha(keys, rng):
    pk, sk = keys
    for _ in range(20):
        alpha, c = P.sc_party1(pk.encrypt(0, rng), pk, rng=rng)
        assert P.sc_party2(c, sk) == alpha


def test_sc_party2_examples(keys, rng):
    pk, sk = keys
    assert P.sc_party2(pk.encrypt(7, rng), sk) == 1
    assert P.sc_party2(pk.encrypt(pk.M - 3, rng), sk) == -1


@settings(max_examples=60, deadline=None)
@given(st.integers(-(2**20), 2**20), st.integers(0, 2**32))
def test_sc_soundness(jl_keys, a, seed):
    pk, sk = jl_keys
    r = random.Random(seed)
    alpha, c = P.sc_party1(pk.encrypt(a, r), pk, rng=r)
    assert alpha * P.sc_party2(c, sk) == (1 if a >= 0 else -1)


def test_sc_budget_refused(rng):
    small, _ = lhe.keygen(1024, "joye-libert", rng=random.Random(7), k=32)
    assert not P.sc_budget_ok(small.M)
    with pytest.raises(P.ProtocolError):
        P.sc_party1(small.encrypt(1, rng), small, rng=rng)


def test_sc_budget_holds_for_both_backends(keys):
    assert P.sc_budget_ok(keys[0].M)


# -- model encryption

def test_encrypt_model_counts_d1(jl_keys, rng):
    pk, _ = jl_keys
    model, _ = P.encrypt_model(F.RandomForest((const_tree(0.5),), 2), pk, rng=rng)
    t = model.trees[0]
    assert len(t.masked) == 1 and len(t.thresholds) == 1 and len(t.leaves) == 2


def test_unmasking_recovers_unit_vectors(keys, rng):
    pk, sk = keys
    trees = tuple(random_tree(5, 3, rng) for _ in range(3))
    model, seed = P.encrypt_model(F.RandomForest(trees, 5), pk, rng=rng)
    assert P.prims.PrfSeed.from_halves(sk.decrypt(model.seed_ct[0]), sk.decrypt(model.seed_ct[1])) == seed
    for j, (plain, enc) in enumerate(zip(trees, model.trees), start=1):
        for i, (nd, e) in enumerate(zip(plain.nodes, enc.masked), start=1):
            mask = prims.prf_mask(seed, (j, i), 5, pk.M)
            unit = [(a - b) % pk.M for a, b in zip(e, mask)]
            assert unit == [1 if s == nd.feature else 0 for s in range(5)]
            assert sk.decrypt_signed(enc.thresholds[i - 1]) == -lhe.to_grid(nd.threshold)
        assert [sk.decrypt(c) for c in enc.leaves] == [lhe.to_grid(v) for v in plain.leaves]


def test_encrypt_model_completes_shallow_trees(jl_keys, rng):
    pk, sk = jl_keys
    forest = F.RandomForest((random_tree(3, 2, rng), random_tree(3, 4, rng)), 3)
    model, seed = P.encrypt_model(forest, pk, rng=rng)
    assert model.depth == 4 and all(len(t.leaves) == 16 for t in model.trees)
    x = [0.3, -0.2, 0.9]
    assert P.online_predict(x, [model], sk, rng) == forest_mean(forest.trees, x)


def test_model_roundtrip(jl_keys, rng):
    pk, _ = jl_keys
    model, _ = P.encrypt_model(F.RandomForest(tuple(random_tree(4, 3, rng) for _ in range(2)), 4), pk,
                               provider=7, rng=rng)
    buf = P.model_to_bytes(model)
    inv = {}
    back = P.model_from_bytes(buf, inv)
    assert P.model_to_bytes(back) == buf
    assert (back.provider, back.n_features, back.depth, back.m) == (7, 4, 3, 2)
    assert inv == {"ciphertexts": 2 * 15, "elements": 4 * 2 * 7, "seed_ciphertexts": 2}
    with pytest.raises(lhe.DecodeError):
        P.model_from_bytes(buf + b"\0")
    with pytest.raises(lhe.DecodeError):
        P.model_from_bytes(b"XXXX" + buf[4:])
    with pytest.raises(Exception):
        P.model_from_bytes(buf[:-10])


# -- tree evaluation

def test_share_identity_d2():
    for n1, n2, g1, g2, a1, a2 in itertools.product((-1, 1), repeat=6):
        b1, b2 = a1 * n1, a2 * n2
        assert (b1 - g1 * a1) * (b2 + g2 * a2) * a1 * a2 == (n1 - g1) * (n2 + g2)


@pytest.mark.parametrize("d", [1, 2, 3])
def test_share_identity_all_polynomials(d):
    k = 2**d - 1
    polys = F.path_polynomials(d)
    r = random.Random(d)
    for _ in range(200):
        n = [r.choice((-1, 1)) for _ in range(k)]
        g = [r.choice((-1, 1)) for _ in range(k)]
        a = [r.choice((-1, 1)) for _ in range(k)]
        betas = [ai * ni for ai, ni in zip(a, n)]
        gt = [gi * ai for gi, ai in zip(g, a)]
        for p in polys:
            scale = 1
            for i in p.indices:
                scale *= a[i]
            assert p.evaluate(betas, gt) * scale == p.evaluate(n, g)


def test_pte_random_trees(keys, rng):
    pk, sk = keys
    for d in (1, 2, 4):
        tree = random_tree(4, d, rng)
        model, seed = P.encrypt_model(F.RandomForest((tree,), 4), pk, rng=rng)
        for _ in range(3):
            x = [rng.randint(-1000, 1000) / 1000 for _ in range(4)]
            x[tree.nodes[0].feature] = tree.nodes[0].threshold
            tap = OracleTap(sk, {(1, 1): tree}, x)
            x_grid = P.encode_input(x, pk.M)
            x_ct = [pk.encrypt(v, rng) for v in x_grid]
            shares = P.pte(model.trees[0], x_ct, x_grid, sk, seed, rng, tap=tap)
            assert shares.reconstruct(pk.M) == lhe.to_grid(F.evaluate_tree(tree, x))
            assert (1, 1) in tap.paths


def test_pte_degenerate_randomization(jl_keys):
    pk, sk = jl_keys
    r = AllPlus(5)
    tree = random_tree(3, 3, r)
    model, seed = P.encrypt_model(F.RandomForest((tree,), 3), pk, rng=r)
    x = [0.1, -0.5, 0.7]
    tap = OracleTap(sk, {(1, 1): tree}, x)
    x_grid = P.encode_input(x, pk.M)
    P.pte(model.trees[0], [pk.encrypt(v, r) for v in x_grid], x_grid, sk, seed, r, tap=tap)
    assert tap.paths[(1, 1)] == F.leaf_index(tree, x)


def test_locate_leaf_ambiguity_aborts():
    with pytest.raises(P.ProtocolError):
        P.locate_leaf(1, [0], [1])
    with pytest.raises(P.ProtocolError):
        P.locate_leaf(2, [1, 1], [1, 1, 1])


# -- on-line phase

def forest_mean(trees, x):
    return sum((Fraction(lhe.to_grid(F.evaluate_tree(t, x))) for t in trees), Fraction(0)) / (1000 * len(trees))


def test_online_two_providers_mean(jl_keys, rng):
    pk, sk = jl_keys
    a = F.RandomForest(tuple(const_tree(v) for v in (0.2, 0.4, 0.6)), 2)
    b = F.RandomForest(tuple(const_tree(v) for v in (0.1, 0.3, 0.5)), 2)
    models = [P.encrypt_model(a, pk, provider=1, rng=rng)[0], P.encrypt_model(b, pk, provider=2, rng=rng)[0]]
    assert P.online_predict([0.5, -0.5], models, sk, rng) == Fraction(35, 100)


def test_online_single_tree_is_leaf(keys, rng):
    pk, sk = keys
    tree = random_tree(3, 3, rng)
    model, _ = P.encrypt_model(F.RandomForest((tree,), 3), pk, rng=rng)
    x = [0.25, 0.5, -0.75]
    assert P.online_predict(x, [model], sk, rng) == Fraction(lhe.to_grid(F.evaluate_tree(tree, x)), 1000)


def _random_e2e(keys, rng, t_max, m_max, d_max, queries):
    pk, sk = keys
    n = rng.randint(1, 6)
    t = rng.randint(1, t_max)
    models, trees = [], {}
    for k in range(1, t + 1):
        d = rng.randint(1, d_max)
        forest = F.RandomForest(tuple(random_tree(n, d, rng) for _ in range(rng.randint(1, m_max))), n)
        models.append(P.encrypt_model(forest, pk, provider=k, rng=rng)[0])
        trees.update({(k, j): tr for j, tr in enumerate(forest.trees, start=1)})
    for _ in range(queries):
        x = [rng.randint(-1000, 1000) / 1000 for _ in range(n)]
        tap = OracleTap(sk, trees, x)
        assert P.online_predict(x, models, sk, rng, tap=tap) == forest_mean(list(trees.values()), x)
        assert len(tap.paths) == len(trees)


def test_online_random_jl(jl_keys, rng):
    for _ in range(3):
        _random_e2e(jl_keys, rng, 3, 10, 5, 2)


def test_online_random_paillier(paillier_keys, rng):
    _random_e2e(paillier_keys, rng, 2, 3, 3, 1)


def test_online_modp_group(jl_keys, rng):
    pk, sk = jl_keys
    tree = random_tree(2, 2, rng)
    model, _ = P.encrypt_model(F.RandomForest((tree,), 2), pk, rng=rng)
    x = [0.5, 0.5]
    y = P.online_predict(x, [model], sk, rng, group=prims.ModpGroup())
    assert y == forest_mean([tree], x)


def test_mismatch_errors(jl_keys, paillier_keys, rng):
    pk, sk = jl_keys
    m3, _ = P.encrypt_model(F.RandomForest((random_tree(3, 2, rng),), 3), pk, provider=1, rng=rng)
    m4, _ = P.encrypt_model(F.RandomForest((random_tree(4, 2, rng),), 4), pk, provider=2, rng=rng)
    other, _ = P.encrypt_model(F.RandomForest((random_tree(3, 2, rng),), 3), paillier_keys[0], provider=2, rng=rng)
    with pytest.raises(P.ProtocolError):
        P.Manifest.of([m3, m4])
    with pytest.raises(P.ProtocolError):
        P.Manifest.of([m3, other])
    with pytest.raises(P.ProtocolError):
        P.Manifest.of([])
    man = P.Manifest.of([m3])
    with pytest.raises(P.ProtocolError):
        P.UserSession(man, paillier_keys[1], [0, 0, 0])
    with pytest.raises(P.ProtocolError):
        P.UserSession(man, sk, [0, 0])
    server = P.ServerSession([m3], rng)
    with pytest.raises(P.ProtocolError):
        server.transfer([[]])
    with pytest.raises(P.ProtocolError):
        server.final_share()
    user = P.UserSession(man, sk, [0, 0, 0], rng)
    x_ct, b_ct = user.submit()
    with pytest.raises(P.ProtocolError):
        server.evaluate(x_ct[:2], b_ct)
    with pytest.raises(P.ProtocolError):
        server.evaluate(x_ct, b_ct + b_ct)


# -- standalone scoring

def test_pps_depth1_left(jl_keys, rng):
    _, sk = jl_keys
    tree = F.DecisionTree(1, (F.SplitNode(0, 0.5),), (0.25, 0.75), 1)
    assert P.pps(F.RandomForest((tree,), 1), [0.1], sk, rng) == Fraction(1, 4)


def test_pps_random_forests(keys, rng):
    _, sk = keys
    for _ in range(4):
        n, d = rng.randint(1, 5), rng.randint(1, 6)
        forest = F.RandomForest(tuple(random_tree(n, d, rng) for _ in range(rng.randint(1, 5))), n)
        x = [rng.randint(-1000, 1000) / 1000 for _ in range(n)]
        assert P.pps(forest, x, sk, rng) == forest_mean(forest.trees, x)


@pytest.mark.parametrize("n,d", [(1, 1), (5, 3), (10, 5)])
def test_pps_payload_count(jl_keys, rng, n, d):
    _, sk = jl_keys
    tr = P.Transcript()
    P.pps(F.RandomForest((random_tree(n, d, rng),), n), [0.0] * n, sk, rng, transcript=tr)
    assert abs(tr.ciphertext_payloads - (n + 2**(d + 1))) <= 2
