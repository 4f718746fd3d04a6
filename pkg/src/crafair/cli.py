"""Command-line front end.

    crafair gen       synthetic populations and biased samples
    crafair diagnose  structural unfairness diagnosis of a diagram
    crafair bound     consistent range of the fairness query
    crafair train     fair logistic regression, with tau/lambda/aux-rate sweeps
    crafair eval      score a model on a dataset
    crafair audit     fairness of supplied predictions
    crafair verify    brute-force containment check on tiny universes

Parameters come from ``--config`` (JSON or TOML, optionally nested under the
command name) and from command-line flags, which take precedence.  Every
output file embeds the resolved parameters and the tool version and carries
no timestamps, so reruns with the same inputs are byte-identical.

Exit codes: 0 success, 1 failed verification, 2 bad input.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import sys
import warnings
from pathlib import Path
from typing import Optional

import numpy as np

from . import __version__
from .causal_graph import DataCollectionDiagram, diagnose, load_diagram, save_diagram
from .cra import (
    AuxKind,
    ExternalSample,
    Strategy,
    choose_strategy,
    compute_range,
    estimate_aux,
    load_aux,
    select_strategy,
)
from .data import Dataset, load_csv
from .errors import CraError
from .fairness import FairnessSpec, empirical_fairness, soft_fairness
from .synth import (
    MECHANISMS,
    ScmSpec,
    SelectionSpec,
    apply_selection,
    sample_population,
    scenario_check,
)
from .train import TrainConfig, evaluate, load_model, predict, save_model, train_fair

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

log = logging.getLogger("crafair")

EXIT_OK, EXIT_FAIL, EXIT_INPUT = 0, 1, 2


class InputError(Exception):
    """Bad command-line or configuration input."""


PATH_KEYS = {"diagram", "data", "schema", "model", "preds", "aux", "external", "test", "external_schema",
             "test_schema"}

DEFAULTS = {
    "gen": {"n": 100000, "test_n": None, "mechanisms": list(MECHANISMS), "scenario": "S1", "seed": 0,
            "scm": {}, "selection_tables": {}},
    "diagnose": {"diagram": None},
    "bound": {"diagram": None, "data": None, "schema": None, "model": None, "preds": None,
              "pred_column": None, "aux": [], "admissible": None, "s0": "0", "s1": "1",
              "strategy": None, "strict_strata": False, "soft": False},
    "train": {"data": None, "schema": None, "diagram": None, "aux": [], "external": None,
              "external_schema": None, "aux_kind": None, "aux_rates": [1.0], "aux_seeds": [0],
              "test": None, "test_schema": None, "tau": [0.0], "lambda": [0.0], "eta": 0.1,
              "max_epochs": 2000, "tol": 1e-7, "seed": 0, "init_scale": 0.01,
              "use_protected_feature": False, "admissible": None, "s0": "0", "s1": "1",
              "strategy": None, "strict_strata": False},
    "eval": {"model": None, "data": None, "schema": None, "admissible": None, "s0": "0", "s1": "1",
             "diagram": None},
    "audit": {"data": None, "schema": None, "preds": None, "pred_column": None, "model": None,
              "admissible": None, "s0": "0", "s1": "1", "diagram": None, "soft": False},
    "verify": {"instances": 200, "k": 4, "seed": 0, "strategies": [s.value for s in Strategy]},
}
REQUIRED = {
    "diagnose": ("diagram",),
    "bound": ("diagram", "data"),
    "train": ("data",),
    "eval": ("model", "data"),
    "audit": ("data",),
}


# -- parameter plumbing --

def _read_config(path: Path) -> dict:
    try:
        text = path.read_bytes()
    except OSError as exc:
        raise InputError(f"{path}: {exc.strerror}") from None
    try:
        if path.suffix.lower() == ".toml":
            return tomllib.loads(text.decode())
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise InputError(f"{path}: invalid JSON: {exc.msg} (line {exc.lineno}, column {exc.colno})") from None
    except tomllib.TOMLDecodeError as exc:
        raise InputError(f"{path}: invalid TOML: {exc}") from None


def _resolve(command: str, args: argparse.Namespace) -> dict:
    params = json.loads(json.dumps(DEFAULTS[command]))
    base = Path.cwd()
    if args.config:
        cfg_path = Path(args.config)
        cfg = _read_config(cfg_path)
        if not isinstance(cfg, dict):
            raise InputError("config must be a table/object")
        if command in cfg and isinstance(cfg[command], dict):
            cfg = cfg[command]
        unknown = sorted(set(cfg) - set(params))
        if unknown:
            raise InputError(f"unknown config keys for {command}: {unknown}")
        for k, v in cfg.items():
            params[k] = _rebase(k, v, cfg_path.parent)
    for k in params:
        v = getattr(args, k, None)
        if v is not None and v != []:
            params[k] = v
    if getattr(args, "seed_flag", None) is not None and "seed" in params:
        params["seed"] = args.seed_flag
    if getattr(args, "strategy_flag", None) is not None and "strategy" in params:
        params["strategy"] = args.strategy_flag
    if getattr(args, "strict_flag", False) and "strict_strata" in params:
        params["strict_strata"] = True
    for k in REQUIRED.get(command, ()):
        if params.get(k) in (None, "", []):
            raise InputError(f"{command} needs '{k}' (flag --{k.replace('_', '-')} or config key)")
    for k in ("tau", "lambda", "aux_rates", "aux_seeds", "aux", "mechanisms", "strategies"):
        if k in params and not isinstance(params[k], list):
            params[k] = [params[k]]
    del base
    return params


def _rebase(key, value, root: Path):
    if key not in PATH_KEYS or value is None:
        return value
    if isinstance(value, list):
        return [_rebase(key, v, root) for v in value]
    p = Path(value)
    return str(p if p.is_absolute() else root / p)


def _check_paths(params: dict):
    for k in PATH_KEYS:
        v = params.get(k)
        for p in (v if isinstance(v, list) else [v]):
            if p is not None and not Path(p).exists():
                raise InputError(f"{k}: file {p} does not exist")


def _header(command: str, params: dict) -> dict:
    return {"tool": {"name": "crafair", "version": __version__}, "command": command, "config": params}


def _dump(doc) -> str:
    return json.dumps(doc, indent=2, sort_keys=True, default=_json_default) + "\n"


def _json_default(o):
    if isinstance(o, (np.integer,)):
        return int(o)
    if isinstance(o, (np.floating,)):
        return float(o)
    if isinstance(o, (set, frozenset, tuple)):
        return sorted(o) if isinstance(o, (set, frozenset)) else list(o)
    raise TypeError(f"cannot serialise {type(o).__name__}")


def _write(out: Optional[Path], name: str, text: str):
    if out is None:
        return
    out.mkdir(parents=True, exist_ok=True)
    tmp = out / (name + ".tmp")
    tmp.write_text(text)
    tmp.replace(out / name)


def _csv_text(rows: list, meta: dict) -> str:
    buf = io.StringIO()
    cols = sorted({k for r in rows for k in r})
    buf.write(f"# crafair {__version__} {json.dumps(meta, sort_keys=True, default=_json_default)}\n")
    w = csv.DictWriter(buf, fieldnames=cols, lineterminator="\n")
    w.writeheader()
    for r in rows:
        w.writerow({k: ("" if r.get(k) is None else r.get(k)) for k in cols})
    return buf.getvalue()


def _load_dataset(path, schema, diagram=None, params=None, provenance="unknown") -> Dataset:
    if schema:
        return load_csv(path, schema, provenance=provenance)
    if diagram is None:
        raise InputError("without a schema sidecar a diagram is needed to infer column roles")
    roles = dict(outcome=diagram.outcome, protected=diagram.protected, s0=params["s0"], s1=params["s1"],
                 admissible=tuple(sorted(diagram.admissible)))
    return load_csv(path, None, provenance=provenance, **roles)


def _spec(d: Dataset, params) -> FairnessSpec:
    return FairnessSpec.from_schema(d.schema, params.get("admissible"))


def _predictions(params: dict, d: Dataset, soft: bool = False) -> np.ndarray:
    if params.get("model"):
        m = load_model(params["model"])
        return predict(m, d, "proba" if soft else "hard")
    col = params.get("pred_column") or "pred"
    src = params.get("preds") or params.get("data")
    with open(src, newline="") as fh:
        rows = [r for r in csv.reader(fh) if r and not r[0].startswith("#")]
    header, body = rows[0], rows[1:]
    if col not in header:
        if params.get("preds") and len(header) == 1:
            col = header[0]
        else:
            raise InputError(f"{src}: no prediction column {col!r}")
    j = header.index(col)
    try:
        vals = np.array([float(r[j]) for r in body])
    except ValueError:
        raise InputError(f"{src}: non-numeric prediction in column {col!r}") from None
    if len(vals) != d.n_rows:
        raise InputError(f"{src}: {len(vals)} predictions for {d.n_rows} rows")
    return vals


# -- commands --

def cmd_gen(params: dict, out: Optional[Path]) -> int:
    scm = ScmSpec.default(seed=int(params["seed"]))
    if params["scm"]:
        scm = scm.with_overrides(params["scm"])
    n = int(params["n"])
    test_n = int(params["test_n"] or n)
    seeds = np.random.SeedSequence(int(params["seed"])).generate_state(2 + len(params["mechanisms"]))
    train = sample_population(scm, n, seed=int(seeds[0]))
    test = sample_population(scm, test_n, seed=int(seeds[1]))
    header = _header("gen", params)
    if out is None:
        raise InputError("gen needs --out")
    out.mkdir(parents=True, exist_ok=True)
    train.to_csv(out / "train_unbiased.csv")
    test.to_csv(out / "test_unbiased.csv")
    _write(out, "schema.json", _dump(train.schema.to_dict()))
    manifest = dict(header, scm=scm.to_dict(), rows={"train_unbiased": n, "test_unbiased": test_n}, scenarios={})
    for i, mech in enumerate(params["mechanisms"]):
        table = params["selection_tables"].get(mech)
        if table is not None:
            table = {tuple(int(c) for c in k): v for k, v in table.items()}
        sel = SelectionSpec(mech, params["scenario"], table)
        biased, g = apply_selection(train, sel, seed=int(seeds[2 + i]))
        biased.to_csv(out / f"biased_{mech}.csv")
        save_diagram(g, out / f"diagram_{mech}.json")
        check = scenario_check(train, biased, sel)
        manifest["rows"][f"biased_{mech}"] = biased.n_rows
        manifest["scenarios"][mech] = {"selection": sel.to_dict(), "check": check}
    _write(out, "manifest.json", _dump(manifest))
    print(f"wrote {len(params['mechanisms'])} scenarios to {out}")
    return EXIT_OK


def cmd_diagnose(params: dict, out: Optional[Path]) -> int:
    g = load_diagram(params["diagram"])
    if not isinstance(g, DataCollectionDiagram):
        raise InputError("diagnose needs a diagram with a selection node")
    dg = diagnose(g)
    print(dg.explain())
    doc = dict(_header("diagnose", params), diagnosis=dg.to_dict())
    text = _dump(doc)
    _write(out, "diagnosis.json", text)
    if out is None:
        print(text, end="")
    return EXIT_OK


def _aux_list(params) -> list:
    return [load_aux(p) for p in params.get("aux", [])]


def cmd_bound(params: dict, out: Optional[Path]) -> int:
    g = load_diagram(params["diagram"])
    if not isinstance(g, DataCollectionDiagram):
        raise InputError("bound needs a diagram with a selection node")
    d = _load_dataset(params["data"], params["schema"], g, params, "biased")
    spec = _spec(d, params)
    preds = _predictions(params, d, soft=params["soft"])
    aux = _aux_list(params)
    if params["strategy"]:
        choice = choose_strategy(g, aux, spec, Strategy.parse(params["strategy"]))
    else:
        choice = select_strategy(g, aux, spec)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        r = compute_range(d, preds, spec, choice, diagram=g, strict=params["strict_strata"])
    doc = dict(_header("bound", params), range=r.to_dict(), choice=choice.to_dict())
    text = _dump(doc)
    _write(out, "bound.json", text)
    print(text, end="")
    return EXIT_OK


def _train_aux(params, spec, g, seed_rate):
    """Aux tables for one sweep point: explicit files or estimates from an external sample."""
    aux = _aux_list(params)
    if params["external"] is None:
        return aux
    schema = params["external_schema"] or params["schema"]
    ext = load_csv(params["external"], schema, provenance="unbiased") if schema else \
        _load_dataset(params["external"], None, g, params, "unbiased")
    rate, seed = seed_rate
    sample = ExternalSample.from_dataset(ext, rate=rate, seed=seed)
    kind = AuxKind(params["aux_kind"] or "u_given_sa")
    if g is None:
        raise InputError("estimating aux tables needs a diagram to pick U")
    probe = select_strategy(g, [], spec)
    U = probe.U if probe.U else tuple(sorted(g.selection_parents - {g.protected} - set(g.admissible)))
    if kind is AuxKind.SU_JOINT:
        U = tuple(sorted(g.selection_parents - {g.protected}))
    return aux + [estimate_aux(sample, kind, U, spec)]


def cmd_train(params: dict, out: Optional[Path]) -> int:
    g = load_diagram(params["diagram"]) if params["diagram"] else None
    if g is not None and not isinstance(g, DataCollectionDiagram):
        raise InputError("train needs a diagram with a selection node")
    d = _load_dataset(params["data"], params["schema"], g, params, "biased")
    spec = _spec(d, params)
    test = None
    if params["test"]:
        test = _load_dataset(params["test"], params["test_schema"] or params["schema"], g, params, "unbiased")
    points = []
    rates = params["aux_rates"] if params["external"] else [None]
    aux_seeds = params["aux_seeds"] if params["external"] else [None]
    for rate in rates:
        for aseed in aux_seeds:
            aux = _train_aux(params, spec, g, (rate, aseed)) if params["external"] else _aux_list(params)
            for lam in params["lambda"]:
                for tau in params["tau"]:
                    points.append((rate, aseed, float(lam), float(tau), aux))
    rows = []
    header = _header("train", params)
    for i, (rate, aseed, lam, tau, aux) in enumerate(points):
        choice = None
        if lam > 0 and g is not None:
            choice = choose_strategy(g, aux, spec, Strategy.parse(params["strategy"])) if params["strategy"] \
                else select_strategy(g, aux, spec)
        cfg = TrainConfig(tau=tau, lam=lam, eta=float(params["eta"]), max_epochs=int(params["max_epochs"]),
                          tol=float(params["tol"]), seed=int(params["seed"]), init_scale=float(params["init_scale"]),
                          use_protected_feature=bool(params["use_protected_feature"]),
                          strict_strata=bool(params["strict_strata"]), admissible=params["admissible"],
                          diagram=g, aux=tuple(aux), choice=choice)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            model, rep = train_fair(d, cfg)
        model = type(model)(model.encoder, model.weights, model.bias, dict(header, train=model.config_echo))
        name = "model.json" if len(points) == 1 else f"model_{i:03d}.json"
        if out is not None:
            out.mkdir(parents=True, exist_ok=True)
            save_model(model, out / name)
        row = {"point": i, "tau": tau, "lambda": lam, "aux_rate": rate, "aux_seed": aseed, "model": name,
               "train_f1": rep.f1, "train_accuracy": rep.accuracy, "train_fairness": rep.fairness_hard.value,
               "cub_final": rep.cub_final, "epochs_run": rep.epochs_run,
               "final_loss": rep.loss_trace[-1], "strategy": rep.strategy}
        if test is not None:
            with warnings.catch_warnings():
                warnings.simplefilter("ignore")
                ev = evaluate(model, test, spec)
            row.update(test_f1=ev.f1, test_accuracy=ev.accuracy, test_fairness=ev.fairness_hard.value)
        rows.append(row)
    text = _csv_text(rows, header)
    _write(out, "train_report.csv", text)
    if out is None:
        print(text, end="")
    else:
        print(f"trained {len(rows)} model(s) into {out}")
    return EXIT_OK


def cmd_eval(params: dict, out: Optional[Path]) -> int:
    g = load_diagram(params["diagram"]) if params["diagram"] else None
    d = _load_dataset(params["data"], params["schema"], g, params, "unbiased")
    spec = _spec(d, params)
    m = load_model(params["model"])
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        ev = evaluate(m, d, spec, require_unbiased=False)
    row = {"f1": ev.f1, "accuracy": ev.accuracy, "fairness": ev.fairness_hard.value}
    header = _header("eval", params)
    doc = dict(header, report=row, fairness=ev.fairness_hard.to_dict())
    _write(out, "eval.json", _dump(doc))
    _write(out, "eval.csv", _csv_text([row], header))
    print(_dump(doc), end="")
    return EXIT_OK


def cmd_audit(params: dict, out: Optional[Path]) -> int:
    g = load_diagram(params["diagram"]) if params["diagram"] else None
    d = _load_dataset(params["data"], params["schema"], g, params)
    spec = _spec(d, params)
    preds = _predictions(params, d, soft=params["soft"])
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        fv = soft_fairness(d, preds, spec) if params["soft"] else empirical_fairness(d, preds, spec)
    doc = dict(_header("audit", params), spec=spec.to_dict(), fairness=fv.to_dict())
    _write(out, "audit.json", _dump(doc))
    print(_dump(doc), end="")
    return EXIT_OK


def cmd_verify(params: dict, out: Optional[Path]) -> int:
    from .oracle import check_containment, random_instance

    rng = np.random.default_rng(int(params["seed"]))
    rows = []
    failures = 0
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        for name in params["strategies"]:
            st = Strategy.parse(name)
            bad = 0
            for _ in range(int(params["instances"])):
                ok, _, _ = check_containment(random_instance(rng, st, k=int(params["k"])))
                bad += not ok
            failures += bad
            rows.append({"strategy": st.value, "instances": int(params["instances"]), "violations": bad})
            print(f"{st.value:12s} {params['instances']} instances, {bad} violations")
    _write(out, "verify.csv", _csv_text(rows, _header("verify", params)))
    return EXIT_FAIL if failures else EXIT_OK


COMMANDS = {"gen": cmd_gen, "diagnose": cmd_diagnose, "bound": cmd_bound, "train": cmd_train,
            "eval": cmd_eval, "audit": cmd_audit, "verify": cmd_verify}


def _common(p: argparse.ArgumentParser, suppress: bool):
    d = argparse.SUPPRESS if suppress else None
    p.add_argument("--config", default=d, help="JSON or TOML parameter file")
    p.add_argument("--seed", dest="seed_flag", type=int, default=d, help="random seed")
    p.add_argument("--out", default=d, help="output directory")
    p.add_argument("--strategy", dest="strategy_flag", default=d,
                   help="force a strategy: " + ", ".join(s.value for s in Strategy))
    p.add_argument("--strict-strata", dest="strict_flag", action="store_true",
                   default=argparse.SUPPRESS if suppress else False,
                   help="fail when target mass falls on strata absent from the biased data")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="crafair", description=__doc__.split("\n\n")[0])
    parser.add_argument("--version", action="version", version=f"crafair {__version__}")
    _common(parser, suppress=False)
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, help_):
        p = sub.add_parser(name, help=help_)
        _common(p, suppress=True)
        return p

    p = add("gen", "generate synthetic train/test populations and biased samples")
    p.add_argument("--n", type=int)
    p.add_argument("--test-n", dest="test_n", type=int)
    p.add_argument("--mechanisms", nargs="+", choices=sorted(MECHANISMS))
    p.add_argument("--scenario", choices=["S1", "S2"])

    p = add("diagnose", "diagnose a data-collection diagram")
    p.add_argument("--diagram")

    for name, help_ in (("bound", "consistent range of the fairness query"),
                        ("audit", "fairness of supplied predictions")):
        p = add(name, help_)
        p.add_argument("--diagram")
        p.add_argument("--data")
        p.add_argument("--schema")
        p.add_argument("--model")
        p.add_argument("--preds")
        p.add_argument("--pred-column", dest="pred_column")
        p.add_argument("--admissible", nargs="*")
        p.add_argument("--soft", action="store_true", default=None, help="treat predictions as probabilities")
        if name == "bound":
            p.add_argument("--aux", nargs="+", default=[])

    p = add("train", "train fair logistic regression")
    for flag in ("data", "schema", "diagram", "external", "test"):
        p.add_argument(f"--{flag}")
    p.add_argument("--external-schema", dest="external_schema")
    p.add_argument("--test-schema", dest="test_schema")
    p.add_argument("--aux", nargs="+", default=[])
    p.add_argument("--aux-kind", dest="aux_kind", choices=[k.value for k in AuxKind])
    p.add_argument("--aux-rates", dest="aux_rates", nargs="+", type=float)
    p.add_argument("--aux-seeds", dest="aux_seeds", nargs="+", type=int)
    p.add_argument("--tau", nargs="+", type=float)
    p.add_argument("--lambda", dest="lambda", nargs="+", type=float)
    p.add_argument("--eta", type=float)
    p.add_argument("--max-epochs", dest="max_epochs", type=int)
    p.add_argument("--tol", type=float)
    p.add_argument("--use-protected-feature", dest="use_protected_feature", action="store_true", default=None)
    p.add_argument("--admissible", nargs="*")

    p = add("eval", "evaluate a model")
    for flag in ("model", "data", "schema", "diagram"):
        p.add_argument(f"--{flag}")
    p.add_argument("--admissible", nargs="*")

    p = add("verify", "oracle containment suite on tiny universes")
    p.add_argument("--instances", type=int)
    p.add_argument("--k", type=int)
    p.add_argument("--strategies", nargs="+")
    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_INPUT if exc.code not in (0, None) else EXIT_OK
    try:
        params = _resolve(args.command, args)
        _check_paths(params)
        out = Path(args.out) if args.out else None
        return COMMANDS[args.command](params, out)
    except (InputError, CraError, OSError) as exc:
        print(f"crafair {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
