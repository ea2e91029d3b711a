"""Experiment runner: scenario configs, seeded batches, reports.

A scenario is a flat key=value file naming a protocol, its parameters, an
adversary, a trial count and a seed base.  Running it produces a report
directory: report.json (sorted keys, no timestamps -- reruns with the same
inputs are byte-identical), trials.csv, and per-trial trace logs when
tracing is on.  Every aggregate in the report is recomputable from the
per-trial rows, and the per-trial bit counts are recomputable from the
trace lines; `verify-traces` spot-checks exactly that.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import os
import sys

import numpy as np

from . import ae2e, aeba, coinba, election, sampler
from .netsim import Simulation, builtin_strategies, make_strategy
from .params import ParamError, ProtocolParams, derive_paper_params, desk_params
from .seeding import derive_seed
from .topology import build_topology, random_regular_graph

PROTOCOLS = ("coinba", "aeba", "gcs", "ae2e", "everywhere",
             "sampler-test", "secrets-test")


class ScenarioError(ValueError):
    pass


_DEFAULTS = {
    "protocol": None,
    "n": 64,
    "trials": 5,
    "seed": 1,
    "epsilon": 0.1,
    "adversary": "null",
    "metadata_visible": True,
    "trace": False,
    # coinba extras
    "degree": 24,
    "rounds": 40,
    "coin": "reliable",
    "inputs": "split",
    # ae2e extras
    "knowledgeable_fraction": 0.6,
    "repetitions": 0,  # 0 -> ceil(3 ln n)
    "corrupt_fraction": 0.0,
    "a_scale": 8.0,
    "equivocate": False,
    # gcs
    "gcs_len": 0,
}

_BOOLS = {"true": True, "false": False, "1": True, "0": False,
          "on": True, "off": False}


def parse_scenario(text: str) -> dict:
    """Parse key=value lines; reject unknown keys or bad values with the
    offending line number."""
    sc = dict(_DEFAULTS)
    sc["adversary_args"] = {}
    sc["params_overrides"] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ScenarioError(f"line {lineno}: expected key=value, got {raw!r}")
        key, val = (s.strip() for s in line.split("=", 1))
        try:
            if key.startswith("adversary."):
                sc["adversary_args"][key.split(".", 1)[1]] = _auto(val)
            elif key.startswith("params."):
                sc["params_overrides"][key.split(".", 1)[1]] = _auto(val)
            elif key in ("metadata_visible", "trace", "equivocate"):
                sc[key] = _BOOLS[val.lower()]
            elif key in ("epsilon", "knowledgeable_fraction",
                         "corrupt_fraction", "a_scale"):
                sc[key] = float(val)
            elif key in ("protocol", "adversary", "coin", "inputs"):
                sc[key] = val
            elif key in sc:
                sc[key] = int(val)
            else:
                raise KeyError(key)
        except KeyError:
            raise ScenarioError(f"line {lineno}: unknown key {key!r}") from None
        except ValueError:
            raise ScenarioError(
                f"line {lineno}: bad value for {key!r}: {val!r}") from None
    if sc["protocol"] not in PROTOCOLS:
        raise ScenarioError(
            f"protocol must be one of {PROTOCOLS}, got {sc['protocol']!r}")
    if sc["adversary"] not in builtin_strategies():
        raise ScenarioError(f"unknown adversary {sc['adversary']!r}")
    return sc


def _auto(val: str):
    low = val.lower()
    if low in _BOOLS:
        return _BOOLS[low]
    try:
        return int(val)
    except ValueError:
        try:
            return float(val)
        except ValueError:
            return val


# -- per-protocol trial runners -------------------------------------------------


def _strategy(sc, params):
    return make_strategy(sc["adversary"], **sc["adversary_args"])


def _inputs(sc, n, rng):
    if sc["inputs"] == "split":
        return rng.integers(0, 2, size=n).astype(np.int8)
    if sc["inputs"] in ("zero", "one"):
        return np.full(n, 0 if sc["inputs"] == "zero" else 1, dtype=np.int8)
    raise ScenarioError(f"unknown inputs mode {sc['inputs']!r}")


def _coin_source(sc, seed):
    if sc["coin"] == "reliable":
        return coinba.ReliableCoin(seed)
    if sc["coin"] == "adversarial":
        return coinba.AdversarialCoin("mirror")
    if sc["coin"] == "private":
        return coinba.PrivateCoin()
    raise ScenarioError(f"unknown coin source {sc['coin']!r}")


def _trial_coinba(sc, params, trial_seed, trace):
    n = params.n
    rng = np.random.default_rng(derive_seed(trial_seed, "inputs"))
    inputs = _inputs(sc, n, rng)
    strategy = _strategy(sc, params)
    graph = random_regular_graph(n, sc["degree"],
                                 derive_seed(trial_seed, "graph"))
    from .netsim import Metrics
    metrics = Metrics.for_n(n)
    corrupted = _static_corruption(sc, params, trial_seed)
    cp = coinba.CoinBAParams(epsilon=params.epsilon,
                             epsilon0=params.epsilon / 5,
                             rounds=sc["rounds"])
    ctx = ae2e.AmplifierCtx(params, __import__("random").Random(
        derive_seed(trial_seed, "adv")))
    res = coinba.run(graph, inputs, _coin_source(sc, trial_seed), cp,
                     trial_seed, corrupted=corrupted, strategy=strategy,
                     ctx=ctx, metrics=metrics)
    good = np.ones(n, dtype=bool)
    good[list(corrupted)] = False
    agree = res.good_agreement(good)
    commits = res.commits[good, 0]
    input_bits = set(int(b) for b in inputs[good])
    ones = int((commits == 1).sum())
    winner = 1 if ones >= commits.size - ones else 0
    validity_ok = winner in input_bits
    unanimous = len(set(int(b) for b in inputs[good])) == 1
    if unanimous:
        validity_ok = bool((commits == int(inputs[good][0])).all())
    return {
        "agreement_fraction": round(float(agree), 6),
        "validity_ok": bool(validity_ok),
        "rounds": sc["rounds"],
        "max_bits": metrics.max_honest_bits,
        "mean_bits": round(metrics.total_honest_bits / n, 3),
        "total_bits": metrics.total_honest_bits,
        "flood_bits": metrics.flood_bits,
        "corrupted": len(corrupted),
    }, metrics


def _static_corruption(sc, params, trial_seed):
    """Seeded corrupted set for the graph-only protocols."""
    want = int(sc["corrupt_fraction"] * params.n)
    args = sc["adversary_args"]
    if "fraction" in args:
        want = int(args["fraction"] * params.n)
    if "count" in args:
        want = int(args["count"])
    if sc["adversary"] == "null":
        want = 0
    want = min(want, params.max_corruptions)
    rng = __import__("random").Random(derive_seed(trial_seed, "corrupt"))
    return sorted(rng.sample(range(params.n), want)) if want else []


def _trial_aeba(sc, params, trial_seed, trace, gcs=False):
    n = params.n
    rng = np.random.default_rng(derive_seed(trial_seed, "inputs"))
    inputs = _inputs(sc, n, rng)
    strategy = _strategy(sc, params)
    if gcs:
        res = aeba.run_gcs(params, sc["gcs_len"] or params.q * params.w,
                           strategy, trial_seed)
    else:
        res = aeba.run_aeba(params, inputs, strategy, trial_seed,
                            metadata_visible=sc["metadata_visible"],
                            trace=trace)
    good = np.ones(n, dtype=bool)
    good[list(res.corrupted)] = False
    outs = np.asarray(res.outputs)[good]
    decided = outs[outs >= 0]
    if decided.size:
        ones = int((decided == 1).sum())
        winner = 1 if ones >= decided.size - ones else 0
        agree = int((outs == winner).sum()) / outs.size
        validity_ok = winner in set(int(b) for b in inputs[good])
    else:
        agree, validity_ok = 0.0, False
    m = res.metrics
    row = {
        "agreement_fraction": round(float(agree), 6),
        "validity_ok": bool(validity_ok),
        "rounds": m.rounds,
        "max_bits": m.max_honest_bits,
        "mean_bits": round(m.total_honest_bits / n, 3),
        "total_bits": m.total_honest_bits,
        "flood_bits": m.flood_bits,
        "corrupted": len(res.corrupted),
        "secrecy_violations": len(res.stats.get("secrecy_violations", [])),
        "bad_elections": res.stats.get("bad_elections", 0),
    }
    if gcs:
        entries = res.gcs
        usable = [e for e in entries if e[1] >= 0.9 and e[2]]
        row["gcs_words"] = len(entries)
        row["gcs_usable"] = len(usable)
    return row, m


def _trial_ae2e(sc, params, trial_seed, trace):
    n = params.n
    prng = __import__("random").Random(derive_seed(trial_seed, "setup"))
    corrupt_n = min(int(sc["corrupt_fraction"] * n), params.max_corruptions)
    corrupted = set(prng.sample(range(n), corrupt_n)) if corrupt_n else set()
    know_n = int(sc["knowledgeable_fraction"] * n)
    pool = [p for p in range(n) if p not in corrupted]
    knowledgeable = prng.sample(pool, min(know_n, len(pool)))
    state = ae2e.KnowledgeState.build(n, knowledgeable, message_id=1,
                                      corrupted=corrupted)
    x = sc["repetitions"] or math.ceil(3 * math.log(n))
    rng = np.random.default_rng(derive_seed(trial_seed, "labels"))
    labels = [int(v) for v in rng.integers(1, params.label_space + 1, size=x)]
    strategy = _strategy(sc, params)
    ctx = ae2e.AmplifierCtx(params, __import__("random").Random(
        derive_seed(trial_seed, "adv")))
    from .netsim import Metrics
    metrics = Metrics.for_n(n)
    stats = ae2e.run_ae2e(state, labels, params, trial_seed,
                          adversary=strategy, metrics=metrics,
                          a_scale=sc["a_scale"], equivocate=sc["equivocate"],
                          adv_ctx=ctx)
    good = ~state.corrupted
    holds = state.messages >= 0
    decided = state.decisions >= 0
    final_ok = (holds | decided) & good
    wrong = int(((state.decisions >= 0) & (state.decisions != 1) & good).sum())
    return {
        "agreement_fraction": round(float(final_ok[good].mean()), 6),
        "validity_ok": wrong == 0,
        "wrong_decisions": wrong,
        "rounds": len(labels),
        "max_bits": metrics.max_honest_bits,
        "mean_bits": round(metrics.total_honest_bits / n, 3),
        "total_bits": metrics.total_honest_bits,
        "flood_bits": metrics.flood_bits,
        "corrupted": len(corrupted),
        "overloaded_total": sum(s.overloaded for s in stats),
    }, metrics


def _trial_everywhere(sc, params, trial_seed, trace):
    n = params.n
    rng = np.random.default_rng(derive_seed(trial_seed, "inputs"))
    inputs = _inputs(sc, n, rng)
    strategy = _strategy(sc, params)
    res = ae2e.run_everywhere_ba(params, inputs, strategy, trial_seed,
                                 a_scale=sc["a_scale"])
    m = res.metrics
    return {
        "agreement_fraction": 1.0 if res.agreement else round(float(
            np.mean(res.outputs[~np.isin(np.arange(n),
                                         list(res.aeba_result.corrupted))]
                    >= 0)), 6),
        "agreement_ok": bool(res.agreement),
        "validity_ok": bool(res.validity),
        "rounds": m.rounds,
        "max_bits": m.max_honest_bits,
        "mean_bits": round(m.total_honest_bits / n, 3),
        "total_bits": m.total_honest_bits,
        "flood_bits": m.flood_bits,
        "corrupted": len(res.aeba_result.corrupted),
    }, m


def _trial_sampler(sc, params, trial_seed, trace):
    n = sc["n"]
    smp = sampler.build_random_sampler(n, n, 4, 0.45, 0.7, trial_seed,
                                       allow_infeasible=True)
    res = sampler.verify_exhaustive(smp) if n <= 14 else \
        sampler.verify_statistical(smp, 200, trial_seed)
    return {
        "agreement_fraction": 1.0 if res.ok else 0.0,
        "validity_ok": bool(res.ok),
        "worst_fraction": round(res.worst_fraction, 6),
        "max_bits": 0, "mean_bits": 0, "total_bits": 0, "flood_bits": 0,
        "rounds": 0, "corrupted": 0,
    }, None


def _trial_secrets(sc, params, trial_seed, trace):
    from . import sharing
    import random as _r
    rng = _r.Random(trial_seed)
    spec = sharing.SharingSpec(5, 2, 13)
    ok = True
    for secret in range(13):
        shares = sharing.share(secret, spec, rng)
        got = sharing.reconstruct(shares[:3], spec)
        ok &= got == secret
    return {
        "agreement_fraction": 1.0 if ok else 0.0,
        "validity_ok": bool(ok),
        "max_bits": 0, "mean_bits": 0, "total_bits": 0, "flood_bits": 0,
        "rounds": 0, "corrupted": 0,
    }, None


_RUNNERS = {
    "coinba": _trial_coinba,
    "aeba": _trial_aeba,
    "gcs": lambda sc, p, s, t: _trial_aeba(sc, p, s, t, gcs=True),
    "ae2e": _trial_ae2e,
    "everywhere": _trial_everywhere,
    "sampler-test": _trial_sampler,
    "secrets-test": _trial_secrets,
}


def build_params(sc) -> ProtocolParams:
    over = dict(sc["params_overrides"])
    over.setdefault("epsilon", sc["epsilon"])
    over.setdefault("seed", sc["seed"])
    return desk_params(sc["n"], **over)


def run_scenario(path: str, out_dir: str, seed: int | None = None,
                 trials: int | None = None, trace: bool | None = None,
                 metadata_visible: bool | None = None) -> dict:
    """Run all trials of a scenario file; write report.json and trials.csv
    (plus trace_<i>.log when tracing); return the report dict."""
    with open(path) as fh:
        sc = parse_scenario(fh.read())
    if seed is not None:
        sc["seed"] = seed
    if trials is not None:
        sc["trials"] = trials
    if trace is not None:
        sc["trace"] = trace
    if metadata_visible is not None:
        sc["metadata_visible"] = metadata_visible

    if sc["protocol"] in ("sampler-test", "secrets-test"):
        params = None
    else:
        params = build_params(sc)
    runner = _RUNNERS[sc["protocol"]]
    rows = []
    traces = []
    for t in range(sc["trials"]):
        trial_seed = derive_seed(sc["seed"], "trial", t)
        trace_list = [] if sc["trace"] else None
        row, _metrics = runner(sc, params, trial_seed, trace_list)
        row = {"trial": t, "trial_seed": trial_seed, **row}
        rows.append(row)
        traces.append(trace_list)

    agg = _aggregate(rows)
    report = {
        "scenario": {k: v for k, v in sorted(sc.items())},
        "params": params.to_config().strip().split("\n") if params else [],
        "trials": rows,
        "aggregate": agg,
    }
    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, "report.json"), "w") as fh:
        json.dump(report, fh, sort_keys=True, indent=2)
        fh.write("\n")
    _write_csv(os.path.join(out_dir, "trials.csv"), rows)
    if sc["trace"]:
        for t, lines in enumerate(traces):
            with open(os.path.join(out_dir, f"trace_{t}.log"), "w") as fh:
                fh.write("\n".join(lines or []) + "\n")
    return report


def _aggregate(rows) -> dict:
    if not rows:
        return {"trials": 0}
    agg = {"trials": len(rows)}
    nums = ("agreement_fraction", "max_bits", "mean_bits", "total_bits")
    for key in nums:
        vals = [r[key] for r in rows if key in r]
        if vals:
            agg["mean_" + key] = round(float(np.mean(vals)), 6)
            agg["max_" + key] = float(np.max(vals))
    agg["validity_violations"] = sum(
        1 for r in rows if not r.get("validity_ok", True))
    if any("agreement_ok" in r for r in rows):
        agg["agreement_trials"] = sum(1 for r in rows if r.get("agreement_ok"))
    return agg


def _write_csv(path, rows):
    if not rows:
        with open(path, "w") as fh:
            fh.write("trial\n")
        return
    keys = sorted({k for r in rows for k in r})
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=keys)
    writer.writeheader()
    for r in rows:
        writer.writerow(r)
    with open(path, "w", newline="") as fh:
        fh.write(buf.getvalue())


# -- scaling comparison ---------------------------------------------------------


def compare_scaling(points) -> dict:
    """Least-squares slope of log(max honest bits) against log n.

    points: [(n, max_bits), ...].  The polylog factors at experiment scale
    bias the slope upward; read it as a trend, not an exponent estimate.
    """
    pts = [(n, b) for n, b in points if b > 0]
    if len(pts) < 2:
        raise ScenarioError("need at least two scaling points")
    xs = np.log([p[0] for p in pts])
    ys = np.log([p[1] for p in pts])
    slope, intercept = np.polyfit(xs, ys, 1)
    return {"exponent": round(float(slope), 4),
            "intercept": round(float(intercept), 4),
            "points": [[int(n), int(b)] for n, b in pts],
            "note": "slope of log(max honest bits) vs log n; polylog "
                    "factors inflate it at small n"}


# -- trace verification ----------------------------------------------------------


def verify_traces(report_dir: str) -> list:
    """Recompute per-trial honest bit totals from trace logs and compare
    with the report; returns a list of mismatch strings (empty = ok)."""
    with open(os.path.join(report_dir, "report.json")) as fh:
        report = json.load(fh)
    problems = []
    for row in report["trials"]:
        t = row["trial"]
        path = os.path.join(report_dir, f"trace_{t}.log")
        if not os.path.exists(path):
            problems.append(f"trial {t}: no trace file")
            continue
        per_proc = {}
        rounds = 0
        with open(path) as fh:
            for line in fh:
                parts = line.split()
                if len(parts) != 5:
                    continue
                rnd, kind, snd, _rcv, bits = parts
                rounds = max(rounds, int(rnd) + 1)
                if kind in ("corrupt", "budget-reject"):
                    continue
                if kind.endswith("-flood"):
                    continue
                snd = int(snd)
                per_proc[snd] = per_proc.get(snd, 0) + int(bits)
        total = sum(per_proc.values())
        max_bits = max(per_proc.values(), default=0)
        if total != row["total_bits"]:
            problems.append(f"trial {t}: total bits {total} != report "
                            f"{row['total_bits']}")
        if max_bits != row["max_bits"]:
            problems.append(f"trial {t}: max bits {max_bits} != report "
                            f"{row['max_bits']}")
    return problems


# -- CLI --------------------------------------------------------------------------


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(
        prog="sqrtba",
        description="Scalable agreement protocol stack: experiment runner")
    sub = ap.add_subparsers(dest="cmd", required=True)

    runp = sub.add_parser("run", help="run a scenario file")
    runp.add_argument("scenario")
    runp.add_argument("--out", default="out")
    runp.add_argument("--seed", type=int)
    runp.add_argument("--trials", type=int)
    runp.add_argument("--trace", action="store_true", default=None)
    runp.add_argument("--metadata-visibility", choices=("on", "off"))

    ver = sub.add_parser("verify-traces", help="recompute report numbers "
                                               "from trace logs")
    ver.add_argument("report_dir")

    cmp_ = sub.add_parser("compare-scaling",
                          help="growth exponent across report files")
    cmp_.add_argument("reports", nargs="+")

    pp = sub.add_parser("print-params", help="show a validated parameter set")
    pp.add_argument("--n", type=int, default=512)
    pp.add_argument("--paper", action="store_true",
                    help="use the asymptotic derivation")
    pp.add_argument("--epsilon", type=float, default=0.1)
    pp.add_argument("--delta", type=float, default=5.0)
    pp.add_argument("overrides", nargs="*", metavar="key=value")

    args = ap.parse_args(argv)
    try:
        if args.cmd == "run":
            mv = None if args.metadata_visibility is None else \
                args.metadata_visibility == "on"
            report = run_scenario(args.scenario, args.out, seed=args.seed,
                                  trials=args.trials, trace=args.trace,
                                  metadata_visible=mv)
            print(json.dumps(report["aggregate"], sort_keys=True, indent=2))
        elif args.cmd == "verify-traces":
            problems = verify_traces(args.report_dir)
            for p in problems:
                print(p)
            print("verify-traces:", "FAIL" if problems else "OK")
            return 1 if problems else 0
        elif args.cmd == "compare-scaling":
            pts = []
            for path in args.reports:
                with open(path) as fh:
                    rep = json.load(fh)
                pts.append((rep["scenario"]["n"],
                            rep["aggregate"].get("max_max_bits", 0)))
            print(json.dumps(compare_scaling(pts), sort_keys=True, indent=2))
        elif args.cmd == "print-params":
            over = {}
            for item in args.overrides:
                k, v = item.split("=", 1)
                over[k] = float(v) if k == "epsilon" else int(v)
            if args.paper:
                p = derive_paper_params(args.n, args.epsilon, delta=args.delta)
            else:
                p = desk_params(args.n, epsilon=args.epsilon, **over)
            print(p.to_config(), end="")
    except (ParamError, ScenarioError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
