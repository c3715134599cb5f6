import json
import os
import re
import stat
import subprocess
import sys
from fractions import Fraction

import numpy as np
import pytest

from forestveil import forest as F
from forestveil import lhe
from forestveil import transport as T
from forestveil.bench import data


def run(*args, env=None, check=True):
    p = subprocess.run([sys.executable, "-m", "forestveil", *args], capture_output=True, text=True,
                       timeout=600, env=env)
    if check and p.returncode != 0:
        raise AssertionError(p.stderr)
    return p


def write_csv(path, ds, label=True):
    names = [f"f{i}" for i in range(ds.n_features)]
    with open(path, "w") as f:
        f.write(",".join(names + (["label"] if label else [])) + "\n")
        for x, y in zip(ds.X, ds.y):
            vals = [f"{v:.3f}" for v in x] + ([str(int(y))] if label else [])
            f.write(",".join(vals) + "\n")


@pytest.fixture
def server_proc(tmp_path):
    env = dict(os.environ)
    env.pop(T.STORE_ENV, None)
    p = subprocess.Popen([sys.executable, "-m", "forestveil", "server", "--store", str(tmp_path / "store"),
                          "--listen", "127.0.0.1:0"], stdout=subprocess.PIPE, text=True, env=env)
    line = p.stdout.readline()
    addr = re.search(r"on (\S+:\d+)", line).group(1)
    yield addr, p
    p.terminate()
    p.wait(10)


def test_keygen_files(tmp_path):
    run("keygen", "--bits", "1024", "--scheme", "joye-libert", "--out", str(tmp_path), "--name", "k")
    pk = lhe.load_public_key(tmp_path / "k.pk")
    sk = lhe.load_secret_key(tmp_path / "k.sk")
    assert sk.pk == pk and sk.decrypt(pk.encrypt(41)) == 41
    assert stat.S_IMODE((tmp_path / "k.sk").stat().st_mode) == 0o600


def test_keygen_bad_size(tmp_path):
    p = run("keygen", "--bits", "1000", "--out", str(tmp_path), check=False)
    assert p.returncode != 0


def test_all_roles(tmp_path, server_proc):
    addr, _ = server_proc
    run("keygen", "--bits", "1024", "--scheme", "joye-libert", "--out", str(tmp_path), "--name", "k")
    forests = []
    for k, seed in ((0, 1), (0, 2)):
        ds = data.interaction(200, n_features=4, rng_seed=seed)
        write_csv(tmp_path / f"train{seed}.csv", ds)
        out = run("provider", "--train", str(tmp_path / f"train{seed}.csv"), "--trees", "3", "--depth", "3",
                  "--pk", str(tmp_path / "k.pk"), "--server", addr, "--seed", str(seed),
                  "--feature-fraction", "0.5", "--save-forest", str(tmp_path / f"f{seed}.fvrf")).stdout
        assert f"uploaded provider {seed}" in out
        forests.append(F.load_forest(tmp_path / f"f{seed}.fvrf"))
    x = [0.25, -0.5, 0.75, 0.0]
    write_csv(tmp_path / "x.csv", F.Dataset(np.array([x]), np.array([0])), label=False)
    merged = F.merge_forests(*forests)
    expected = F.forest_predict(merged, x, exact=True)

    out = run("user", "--input", str(tmp_path / "x.csv"), "--sk", str(tmp_path / "k.sk"), "--server", addr)
    assert out.stdout.strip() == f"{float(expected):.6f}"
    js = json.loads(run("user", "--input", str(tmp_path / "x.csv"), "--sk", str(tmp_path / "k.sk"),
                        "--server", addr, "--json").stdout)
    assert Fraction(js["y_exact"]) == expected and js["m"] == 6
    assert set(js["bytes_sent"]) == {"HELLO", "QUERY_INIT", "OT_R1", "FINAL_SHARE"}

    # wrong dimension upload is refused with a nonzero exit
    write_csv(tmp_path / "bad.csv", data.blobs(50, 3))
    p = run("provider", "--train", str(tmp_path / "bad.csv"), "--trees", "1", "--depth", "1",
            "--pk", str(tmp_path / "k.pk"), "--server", addr, check=False)
    assert p.returncode == 2 and "dimension mismatch" in p.stderr


def test_user_against_empty_server(tmp_path, server_proc):
    addr, _ = server_proc
    run("keygen", "--bits", "1024", "--scheme", "joye-libert", "--out", str(tmp_path), "--name", "k")
    (tmp_path / "x.csv").write_text("a\n0.5\n")
    p = run("user", "--input", str(tmp_path / "x.csv"), "--sk", str(tmp_path / "k.sk"), "--server", addr,
            check=False)
    assert p.returncode == 2 and "no models" in p.stderr


def test_store_env_overrides_flag(tmp_path):
    env = dict(os.environ)
    env[T.STORE_ENV] = str(tmp_path / "from-env")
    p = subprocess.Popen([sys.executable, "-m", "forestveil", "server", "--store", str(tmp_path / "from-flag"),
                          "--listen", "127.0.0.1:0"], stdout=subprocess.PIPE, text=True, env=env)
    try:
        line = p.stdout.readline()
    finally:
        p.terminate()
        p.wait(10)
    assert str(tmp_path / "from-env") in line
    assert (tmp_path / "from-env").is_dir() and not (tmp_path / "from-flag").exists()


def test_console_script_help():
    p = subprocess.run([sys.executable, "-m", "forestveil", "--help"], capture_output=True, text=True)
    assert p.returncode == 0
    for cmd in ("keygen", "provider", "server", "user", "bench"):
        assert cmd in p.stdout
