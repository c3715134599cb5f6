"""Command-line entry points for every role plus the bench reports."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import forest as F
from . import lhe
from . import protocol as P
from . import transport as T


def _ints(s: str) -> list[int]:
    return [int(v) for v in s.split(",") if v.strip()]


def _write(text: str, out: str | None) -> None:
    if out:
        Path(out).write_text(text)
    else:
        sys.stdout.write(text)


def cmd_keygen(a) -> int:
    pk, sk = lhe.keygen(a.bits, a.scheme)
    out = Path(a.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / f"{a.name}.pk").write_bytes(pk.to_bytes())
    sk_path = out / f"{a.name}.sk"
    sk_path.write_bytes(sk.to_bytes())
    sk_path.chmod(0o600)
    print(f"wrote {out / a.name}.pk and {sk_path} ({a.scheme}, {a.bits} bits)")
    return 0


def cmd_provider(a) -> int:
    data = F.load_csv(a.train)
    forest = F.train_forest(data, a.trees, a.depth, a.feature_fraction, a.seed)
    if a.save_forest:
        F.save_forest(forest, a.save_forest)
    pk = lhe.load_public_key(a.pk)
    model, _ = P.encrypt_model(forest, pk, provider=a.id)
    k = T.upload_model(a.server, model, a.timeout)
    print(f"uploaded provider {k}: m={model.m} d={model.depth} n={model.n_features}")
    return 0


def cmd_server(a) -> int:
    store = T.ModelStore(T.store_path(a.store))
    host, port = T.parse_address(a.listen)
    srv = T.ForestServer(store, (host, port), group=a.group, timeout_s=a.timeout)
    print(f"serving {len(store.snapshot())} models from {store.root} on {srv.address}", flush=True)
    try:
        srv.serve_forever()
    except KeyboardInterrupt:
        pass
    finally:
        srv.server_close()
    return 0


def cmd_user(a) -> int:
    sk = lhe.load_secret_key(a.sk)
    x = F.load_row(a.input)
    res = T.query(a.server, sk, x, timeout=a.timeout)
    if a.json:
        print(json.dumps(res.to_json(), indent=2))
    else:
        print(f"{float(res.y):.6f}")
    return 0


def cmd_bench_audit(a) -> int:
    import csv
    import io

    from .bench import audit

    rows = audit.audit_grid(_ints(a.ns), _ints(a.ds))
    buf = io.StringIO()
    w = csv.writer(buf)
    w.writerow(["n", "d", "party", "phase", "item", "expected", "measured", "ok"])
    for r in rows:
        w.writerow([r.n, r.d, r.party, r.phase, r.item, r.expected, r.measured, int(r.ok)])
    _write(buf.getvalue(), a.out)
    bad = [r.name for r in rows if not r.ok]
    for name in bad:
        print(f"MISMATCH {name}", file=sys.stderr)
    return 1 if bad else 0


def _dataset(a) -> F.Dataset:
    from .bench import data

    if a.data:
        return F.load_csv(a.data)
    if a.synthetic == "interaction":
        return data.interaction(a.rows, rng_seed=a.seed)
    return data.blobs(a.rows, rng_seed=a.seed)


def cmd_bench_sweep(a) -> int:
    from .bench import sweep

    res = sweep.sweep(_dataset(a), _ints(a.depths), _ints(a.trees), a.replicates, a.budget,
                      a.feature_fraction, rng_seed=a.seed)
    _write(res.to_csv(), a.out)
    d, m, v = res.best_unconstrained
    print(f"best: d={d} m={m} auc={v:.4f}", file=sys.stderr)
    if a.budget is not None:
        d, m, v = res.best_constrained
        print(f"best with m*2^d <= {a.budget}: d={d} m={m} auc={v:.4f}", file=sys.stderr)
    if a.fig:
        from .bench import plots
        plots.plot_sweep(res, a.fig)
    return 0


def cmd_bench_merge(a) -> int:
    from .bench import merge

    ds = _dataset(a)
    results = [merge.merge_experiment(ds, t, a.trees, a.depth, a.replicates, a.feature_fraction, a.seed)
               for t in _ints(a.providers)]
    _write(merge.results_csv(results), a.out)
    if a.fig:
        from .bench import plots
        plots.plot_merge(results, a.fig)
    return 0


def cmd_bench_timing(a) -> int:
    from .bench import timing

    rows = timing.timing(a.scheme, a.bits, a.n, a.trees, a.depth, a.reps)
    _write(timing.rows_csv(rows), a.out)
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="forestveil", description="Encrypted random-forest prediction.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="cmd", required=True)

    k = sub.add_parser("keygen", help="generate a key pair (key authority)")
    k.add_argument("--bits", type=int, default=lhe.DEFAULT_BITS, choices=lhe.SUPPORTED_BITS)
    k.add_argument("--out", required=True, help="directory for the .pk/.sk files")
    k.add_argument("--scheme", default="paillier", choices=("paillier", "joye-libert"))
    k.add_argument("--name", default="key")
    k.set_defaults(fn=cmd_keygen)

    pr = sub.add_parser("provider", help="train, encrypt and upload a forest")
    pr.add_argument("--train", required=True, help="CSV with header, last column 0/1 label")
    pr.add_argument("--trees", type=int, required=True)
    pr.add_argument("--depth", type=int, required=True)
    pr.add_argument("--pk", required=True)
    pr.add_argument("--server", required=True, help="host:port")
    pr.add_argument("--id", type=int, default=0, help="provider id (0: let the server assign one)")
    pr.add_argument("--feature-fraction", type=float, default=0.1)
    pr.add_argument("--seed", type=int, default=0)
    pr.add_argument("--save-forest", help="also write the plaintext forest here")
    pr.add_argument("--timeout", type=float, default=T.DEFAULT_TIMEOUT)
    pr.set_defaults(fn=cmd_provider)

    s = sub.add_parser("server", help="store models and answer queries")
    s.add_argument("--store", help=f"model directory ({T.STORE_ENV} overrides)")
    s.add_argument("--listen", default="127.0.0.1:7070", help="host:port")
    s.add_argument("--group", default="p256", choices=sorted(T.GROUP_IDS))
    s.add_argument("--timeout", type=float, default=T.DEFAULT_TIMEOUT)
    s.set_defaults(fn=cmd_server)

    u = sub.add_parser("user", help="query the server with a private input")
    u.add_argument("--input", required=True, help="CSV with one numeric row")
    u.add_argument("--sk", required=True)
    u.add_argument("--server", required=True, help="host:port")
    u.add_argument("--json", action="store_true", help="print timings and byte counts too")
    u.add_argument("--timeout", type=float, default=T.DEFAULT_TIMEOUT)
    u.set_defaults(fn=cmd_user)

    b = sub.add_parser("bench", help="audits and experiments")
    bsub = b.add_subparsers(dest="bench_cmd", required=True)

    ba = bsub.add_parser("audit", help="operation counts against closed forms")
    ba.add_argument("--ns", default="2,8,32")
    ba.add_argument("--ds", default="1,3,6")
    ba.add_argument("--out")
    ba.set_defaults(fn=cmd_bench_audit)

    def data_args(q):
        q.add_argument("--data", help="CSV dataset; default is synthetic")
        q.add_argument("--synthetic", default="interaction", choices=("interaction", "blobs"))
        q.add_argument("--rows", type=int, default=1000)
        q.add_argument("--seed", type=int, default=0)
        q.add_argument("--feature-fraction", type=float, default=0.5)
        q.add_argument("--out")
        q.add_argument("--fig", help="write a PNG figure here")

    bs = bsub.add_parser("sweep", help="depth / size grid search")
    data_args(bs)
    bs.add_argument("--depths", default="2,4,6,8,10,12")
    bs.add_argument("--trees", default="10,50,100,300")
    bs.add_argument("--replicates", type=int, default=3)
    bs.add_argument("--budget", type=int, default=2**15)
    bs.set_defaults(fn=cmd_bench_sweep)

    bm = bsub.add_parser("merge", help="silo / merged / pooled AUC")
    data_args(bm)
    bm.add_argument("--providers", default="1,2,3,4,5,6")
    bm.add_argument("--trees", type=int, default=50, help="trees per provider")
    bm.add_argument("--depth", type=int, default=6)
    bm.add_argument("--replicates", type=int, default=50)
    bm.set_defaults(fn=cmd_bench_merge, synthetic="blobs")

    bt = bsub.add_parser("timing", help="wall-clock mean and std over repetitions")
    bt.add_argument("--scheme", default="paillier", choices=("paillier", "joye-libert"))
    bt.add_argument("--bits", type=int, default=1024, choices=lhe.SUPPORTED_BITS)
    bt.add_argument("--n", type=int, default=8)
    bt.add_argument("--trees", type=int, default=4)
    bt.add_argument("--depth", type=int, default=3)
    bt.add_argument("--reps", type=int, default=5)
    bt.add_argument("--out")
    bt.set_defaults(fn=cmd_bench_timing)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.fn(args)
    except (T.TransportError, P.ProtocolError, lhe.LHEError, F.TreeError, ValueError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
