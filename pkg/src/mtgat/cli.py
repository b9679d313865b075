"""Command-line entry point.

Subcommands: gen, inspect-graph, train, eval, params, export-attn, ablate.

Run settings come from an optional JSON file (``--config``) shaped like::

    {"dataset": "d.json", "out": "runs/a", "seed": 1,
     "model": {"d_emb": 32, "heads": 4, "layers": 3},
     "train": {"epochs": 30, "batch_size": 16}}

Flags override file values.  Exit codes: 0 success, 1 usage error,
2 data error, 3 numerical failure.
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import logging
import sys
import time
from dataclasses import dataclass, field
from functools import lru_cache
from importlib import resources
from pathlib import Path
from typing import Optional, Sequence

import jsonschema
import numpy as np

from . import autodiff as ad
from .graphbuild import PHI_LABELS, Temporal, build_graph
from .model import (EDGE_TYPE_MODES, PRUNING_MODES, ConfigError, ModelConfig, forward, param_breakdown, param_count,
                    param_shapes)
from .seqdata import MODALITIES, DataError, Dataset, Modality, SyntheticSpec, gen_synthetic, load_dataset, save_dataset
from .training import TrainConfig, TrainingError, evaluate, train

log = logging.getLogger("mtgat")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERICAL = 0, 1, 2, 3
PARAMS_FORMAT = "mtgat-params/1"

MODALITY_SETS = ("A", "V", "T", "AV", "AT", "VT", "AVT")
ABLATION_FAMILIES = ("edge_types", "pruning", "modalities")
ABLATION_COLUMNS = ["family", "setting", "edge_type_mode", "pruning_mode", "keep_percent", "modalities",
                    "seeds", "acc2", "acc7", "f1", "mae", "corr"]


class UsageError(Exception):
    pass


# -- schemas ----------------------------------------------------------------

@lru_cache(maxsize=None)
def schema(name: str) -> dict:
    text = resources.files("mtgat").joinpath("schemas", f"{name}.schema.json").read_text(encoding="utf-8")
    return json.loads(text)


def validate_output(obj, name: str) -> None:
    jsonschema.validate(obj, schema(name))


def write_json(obj, path: Path, schema_name: Optional[str] = None) -> None:
    if schema_name:
        validate_output(obj, schema_name)
    path.write_text(json.dumps(obj, indent=1, allow_nan=False) + "\n", encoding="utf-8")


# -- run configuration ------------------------------------------------------

@dataclass
class RunConfig:
    dataset: Optional[str] = None
    out: Optional[str] = None
    seed: int = 0
    model: dict = field(default_factory=dict)
    train: dict = field(default_factory=dict)
    ablate: dict = field(default_factory=dict)

    def to_json(self) -> dict:
        return {"dataset": self.dataset, "out": self.out, "seed": self.seed,
                "model": self.model, "train": self.train, "ablate": self.ablate}


MODEL_FLAGS = {
    "d_emb": "d_emb", "heads": "heads", "layers": "layers", "keep": "keep_percent",
    "edge_types": "edge_type_mode", "pruning": "pruning_mode", "head_hidden": "head_hidden",
    "leaky_slope": "leaky_slope",
}
TRAIN_FLAGS = {"epochs": "epochs", "lr": "lr0", "batch_size": "batch_size", "patience": "plateau_patience",
               "halvings": "lr_halvings_max"}


def parse_modalities(text: str) -> tuple:
    """Accepts ``"AT"``, ``"audio,text"`` and mixes of the two."""
    parts = [p for p in text.replace("+", ",").split(",") if p]
    out = []
    for p in parts:
        if p.lower() in {m.key for m in MODALITIES}:
            out.append(p.lower())
        else:
            for ch in p:
                out.append(Modality.parse(ch).key)
    if not out:
        raise ValueError(f"no modalities in {text!r}")
    return tuple(sorted(set(out), key=lambda k: Modality.parse(k)))


def load_run_config(args) -> RunConfig:
    rc = RunConfig()
    if getattr(args, "config", None):
        try:
            obj = json.loads(Path(args.config).read_text(encoding="utf-8"))
        except FileNotFoundError as exc:
            raise UsageError(f"config file not found: {args.config}") from exc
        except json.JSONDecodeError as exc:
            raise UsageError(f"config file {args.config}: malformed JSON ({exc})") from exc
        if not isinstance(obj, dict):
            raise UsageError("config file must hold a JSON object")
        extra = set(obj) - set(RunConfig.__dataclass_fields__)
        if extra:
            raise UsageError(f"unknown config keys: {sorted(extra)}")
        rc = RunConfig(**obj)
    if getattr(args, "dataset", None):
        rc.dataset = args.dataset
    if getattr(args, "out", None):
        rc.out = args.out
    if getattr(args, "seed", None) is not None:
        rc.seed = args.seed
    model, tr = dict(rc.model), dict(rc.train)
    for flag, key in MODEL_FLAGS.items():
        v = getattr(args, flag, None)
        if v is not None:
            model[key] = v
    if getattr(args, "modalities", None):
        model["enabled_modalities"] = list(parse_modalities(args.modalities))
    if getattr(args, "input_dims", None):
        try:
            model["input_dims"] = [int(x) for x in args.input_dims.split(",")]
        except ValueError as exc:
            raise UsageError("--input-dims needs comma-separated integers") from exc
    if getattr(args, "drop_future", False):
        model["drop_future_edges"] = True
    for flag, key in TRAIN_FLAGS.items():
        v = getattr(args, flag, None)
        if v is not None:
            tr[key] = v
    rc.model, rc.train = model, tr
    return rc


def model_config_for(rc: RunConfig, dataset: Optional[Dataset] = None) -> ModelConfig:
    model = dict(rc.model)
    if dataset is not None:
        dims = [dataset.dims[m] for m in MODALITIES]
        if "input_dims" in model and list(model["input_dims"]) != dims:
            raise DataError(f"configured input_dims {list(model['input_dims'])} do not match dataset dims {dims}")
        model["input_dims"] = dims
        model["task"] = dataset.task.to_json()
    try:
        return ModelConfig.from_json(model)
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc


def train_config_for(rc: RunConfig) -> TrainConfig:
    tr = dict(rc.train)
    tr["seed"] = rc.seed
    try:
        return TrainConfig(**tr)
    except TypeError as exc:
        raise ConfigError(f"bad train config: {exc}") from exc


def require_dataset(rc: RunConfig) -> Dataset:
    if not rc.dataset:
        raise UsageError("a dataset path is required (--dataset or config 'dataset')")
    try:
        return load_dataset(rc.dataset)
    except FileNotFoundError as exc:
        raise DataError(f"dataset not found: {rc.dataset}") from exc


def out_dir(rc: RunConfig) -> Path:
    if not rc.out:
        raise UsageError("an output directory is required (--out or config 'out')")
    p = Path(rc.out)
    p.mkdir(parents=True, exist_ok=True)
    return p


# -- params files -----------------------------------------------------------

def params_to_json(params: dict, config: ModelConfig, seed: int) -> dict:
    return {"format": PARAMS_FORMAT, "model": config.to_json(), "seed": int(seed),
            "params": {k: v.tolist() for k, v in params.items()}}


def load_params(path) -> tuple:
    """Returns ``(params, ModelConfig, seed)``; any defect is a data error."""
    try:
        obj = json.loads(Path(path).read_text(encoding="utf-8"))
        validate_output(obj, "params")
        config = ModelConfig.from_json(obj["model"])
        params = {k: np.array(v, dtype=np.float64) for k, v in obj["params"].items()}
    except FileNotFoundError as exc:
        raise DataError(f"params file not found: {path}") from exc
    except (json.JSONDecodeError, jsonschema.ValidationError, ConfigError, TypeError, ValueError) as exc:
        raise DataError(f"params file {path} is corrupted: {exc}") from exc
    shapes = param_shapes(config)
    if set(shapes) != set(params) or any(params[k].shape != tuple(s) for k, s in shapes.items()):
        raise DataError(f"params file {path} does not match its model config")
    if not all(np.all(np.isfinite(v)) for v in params.values()):
        raise DataError(f"params file {path} holds non-finite values")
    return params, config, int(obj["seed"])


def sample_by_id(ds: Dataset, sample_id: str):
    try:
        return ds.get(sample_id)
    except KeyError:
        raise DataError(f"no sample with id {sample_id!r}") from None


def metrics_json(metrics, split: str) -> dict:
    return {"split": split, **metrics.to_json()}


# -- commands ---------------------------------------------------------------

def cmd_gen(args) -> int:
    spec = SyntheticSpec(dim=args.dim, min_len=args.min_len, max_len=args.max_len, n_samples=args.samples,
                         trigger_scale=args.trigger_scale)
    if not args.out:
        raise UsageError("gen needs --out FILE")
    ds = gen_synthetic(spec, args.seed or 0)
    out = Path(args.out)
    if out.parent and not out.parent.exists():
        out.parent.mkdir(parents=True)
    save_dataset(ds, out)
    log.info("wrote %d samples to %s", len(ds), out)
    return EXIT_OK


def cmd_inspect_graph(args) -> int:
    ds = require_dataset(load_run_config(args))
    sample = sample_by_id(ds, args.sample_id)
    mods = parse_modalities(args.modalities) if args.modalities else None
    dump = {"sample_id": sample.id, **build_graph(sample, mods).to_json()}
    validate_output(dump, "graph")
    if args.out:
        write_json(dump, Path(args.out))
    else:
        print(json.dumps(dump, indent=1))
    return EXIT_OK


def cmd_train(args) -> int:
    rc = load_run_config(args)
    ds = require_dataset(rc)
    mc, tc = model_config_for(rc, ds), train_config_for(rc)
    out = out_dir(rc)
    effective = rc.to_json()
    effective["model"], effective["train"] = mc.to_json(), tc.to_json()
    write_json(effective, out / "config.json")
    params, history = train(ds, mc, tc)
    write_json(params_to_json(params, mc, tc.seed), out / "params.json", "params")
    (out / "history.csv").write_text(history.to_csv(), encoding="utf-8")
    write_json(metrics_json(evaluate(params, ds, "val", mc, tc.seed), "val"), out / "metrics.json", "metrics")
    log.info("artifacts written to %s", out)
    return EXIT_OK


def cmd_eval(args) -> int:
    params, mc, seed = load_params(args.params)
    rc = load_run_config(args)
    ds = require_dataset(rc)
    if [ds.dims[m] for m in MODALITIES] != list(mc.input_dims):
        raise DataError("dataset dims do not match the model's input dims")
    samples = ds.split(args.split)
    if not samples:
        raise DataError(f"split {args.split!r} has no samples")
    m = metrics_json(evaluate(params, ds, args.split, mc, seed), args.split)
    validate_output(m, "metrics")
    print(json.dumps(m, indent=1))
    return EXIT_OK


def cmd_params(args) -> int:
    rc = load_run_config(args)
    mc = model_config_for(rc)
    parts = param_breakdown(mc)
    total = param_count(mc)
    if sum(parts.values()) != total:
        raise ad.NumericalError("parameter breakdown does not sum to the total")
    if args.json:
        print(json.dumps({**parts, "total": total}))
    else:
        width = max(len(k) for k in parts)
        for k, v in parts.items():
            print(f"{k:<{width}}  {v:>10,d}")
        print(f"{'total':<{width}}  {total:>10,d}")
    return EXIT_OK


def attention_export(out, sample_id: str) -> dict:
    nodes = out.graph.nodes()
    layers = []
    for i, rec in enumerate(out.attention):
        e = rec.edges
        layers.append({"layer": i, "edges": [
            {"src": int(s), "dst": int(d), "phi": PHI_LABELS[p], "tau": Temporal(int(t)).label,
             "alpha": [float(a) for a in al], "alpha_avg": float(aa), "kept": bool(k)}
            for s, d, p, t, al, aa, k in zip(e.src, e.dst, e.phi, e.tau, rec.alpha, rec.alpha_avg, rec.kept)]})
    return {
        "sample_id": sample_id,
        "heads": int(out.attention[0].alpha.shape[1]),
        "nodes": [{"id": n.id, "modality": n.modality.key, "position": n.position} for n in nodes],
        "layers": layers,
        "surviving_nodes": [int(v) for v in out.surviving_nodes],
    }


def attention_dot(export: dict, layer: int) -> str:
    """Graphviz digraph of one layer; edge opacity follows the averaged weight."""
    if not 0 <= layer < len(export["layers"]):
        raise UsageError(f"layer {layer} out of range (model has {len(export['layers'])})")
    colors = {"audio": "#1f77b4", "video": "#2ca02c", "text": "#d62728"}
    lines = [f'digraph "{export["sample_id"]}_layer{layer}" {{', "  rankdir=LR;", "  node [shape=circle];"]
    for n in export["nodes"]:
        code = Modality.parse(n["modality"]).code
        lines.append(f'  n{n["id"]} [label="{code}{n["position"]}", color="{colors[n["modality"]]}"];')
    for e in export["layers"][layer]["edges"]:
        alpha = int(round(255 * e["alpha_avg"]))
        style = "solid" if e.get("kept", True) else "dashed"
        lines.append(f'  n{e["src"]} -> n{e["dst"]} [color="#000000{alpha:02x}", style={style}, '
                     f'label="{e["phi"]}/{e["tau"]}", tooltip="{e["alpha_avg"]:.6f}"];')
    lines.append("}")
    return "\n".join(lines) + "\n"


def cmd_export_attn(args) -> int:
    params, mc, seed = load_params(args.params)
    rc = load_run_config(args)
    ds = require_dataset(rc)
    sample = sample_by_id(ds, args.sample_id)
    export = attention_export(forward(params, sample, mc, "eval", seed), sample.id)
    validate_output(export, "attention")
    if args.format == "dot":
        text = attention_dot(export, mc.layers - 1 if args.layer is None else args.layer)
    else:
        text = json.dumps(export, indent=1) + "\n"
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)
    return EXIT_OK


# -- ablation ---------------------------------------------------------------

@dataclass(frozen=True)
class AblationSetting:
    family: str
    setting: str
    config: ModelConfig


def ablation_settings(base: ModelConfig, families: Sequence[str], edge_types: Sequence[str],
                      pruning: Sequence[str], modality_sets: Sequence[str]) -> list:
    """One row per requested setting; each varies a single knob of ``base``."""
    out = []
    if "edge_types" in families:
        for mode in edge_types:
            out.append(AblationSetting("edge_types", mode, base.with_(edge_type_mode=mode)))
    if "pruning" in families:
        for mode in pruning:
            label = mode if mode == "none" else f"{mode}@{base.keep_percent:g}"
            out.append(AblationSetting("pruning", label, base.with_(pruning_mode=mode)))
    if "modalities" in families:
        for ms in modality_sets:
            out.append(AblationSetting("modalities", ms, base.with_(enabled_modalities=parse_modalities(ms))))
    return out


@lru_cache(maxsize=1)
def code_digest() -> str:
    """Hash of the modules that determine training results, so cached runs
    die with code changes."""
    h = hashlib.sha256()
    for name in ("autodiff", "seqdata", "graphbuild", "model", "training"):
        h.update((Path(__file__).parent / f"{name}.py").read_bytes())
    return h.hexdigest()


def run_key(mc: ModelConfig, tc: TrainConfig, dataset_digest: str) -> str:
    blob = json.dumps({"model": mc.to_json(), "train": tc.to_json(), "data": dataset_digest,
                       "code": code_digest()}, sort_keys=True)
    return hashlib.sha256(blob.encode()).hexdigest()[:20]


def dataset_digest(ds: Dataset) -> str:
    h = hashlib.sha256()
    for s in ds.samples:
        h.update(s.id.encode())
        h.update(ds.splits[s.id].encode())
        h.update(repr(s.label).encode())
        for m in MODALITIES:
            h.update(s.sequences[m].tobytes())
    return h.hexdigest()


def run_once(ds: Dataset, mc: ModelConfig, tc: TrainConfig, split: str, cache: dict,
             cache_dir: Optional[Path], digest: str) -> dict:
    key = run_key(mc, tc, digest)
    if key in cache:
        return cache[key]
    path = cache_dir / f"{key}.json" if cache_dir else None
    if path is not None and path.exists():
        cache[key] = json.loads(path.read_text(encoding="utf-8"))
        return cache[key]
    start = time.perf_counter()
    params, history = train(ds, mc, tc)
    result = {
        "metrics": evaluate(params, ds, split, mc, tc.seed).to_json(),
        "best_val_loss": min(history.val_loss),
        "epochs": len(history.epoch),
        "seconds": time.perf_counter() - start,
    }
    cache[key] = result
    if path is not None:
        path.write_text(json.dumps(result), encoding="utf-8")
    return result


def run_ablation(ds: Dataset, settings: Sequence[AblationSetting], tc: TrainConfig, seeds: Sequence[int],
                 split: str = "test", cache_dir: Optional[Path] = None) -> tuple:
    """Train every setting once per seed.  Returns ``(summary rows, per-run rows)``;
    settings that coincide (e.g. full27 and top-k pruning) are trained once."""
    cache, digest = {}, dataset_digest(ds)
    summary, runs = [], []
    for st in settings:
        per_seed = []
        for seed in seeds:
            res = run_once(ds, st.config, TrainConfig(**{**tc.to_json(), "seed": seed}), split, cache,
                           cache_dir, digest)
            per_seed.append(res["metrics"])
            runs.append({**describe(st), "seed": seed, "best_val_loss": res["best_val_loss"],
                         "seconds": res["seconds"],
                         **{k: res["metrics"].get(k) for k in ("acc2", "acc7", "f1", "mae", "corr")}})
            log.info("%s %s seed %d acc2 %.3f", st.family, st.setting, seed, res["metrics"]["acc2"])
        row = {**describe(st), "seeds": " ".join(str(s) for s in seeds)}
        for k in ("acc2", "acc7", "f1", "mae", "corr"):
            row[k] = float(np.mean([m[k] for m in per_seed]))
        summary.append(row)
    return summary, runs


def describe(st: AblationSetting) -> dict:
    c = st.config
    return {"family": st.family, "setting": st.setting, "edge_type_mode": c.edge_type_mode,
            "pruning_mode": c.pruning_mode, "keep_percent": c.keep_percent,
            "modalities": "".join(Modality.parse(m).code for m in c.enabled_modalities)}


def rows_to_csv(rows: list, columns: list) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=columns, lineterminator="\n", extrasaction="ignore")
    w.writeheader()
    for r in rows:
        w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in r.items()})
    return buf.getvalue()


def split_list(text: Optional[str], allowed: Sequence[str], what: str) -> Optional[list]:
    if text is None:
        return None
    items = [t.strip() for t in text.split(",") if t.strip()]
    bad = [t for t in items if t not in allowed]
    if bad or not items:
        raise UsageError(f"unknown {what}: {bad or text!r}; choose from {', '.join(allowed)}")
    return items


def cmd_ablate(args) -> int:
    rc = load_run_config(args)
    ds = require_dataset(rc)
    base, tc = model_config_for(rc, ds), train_config_for(rc)
    ab = dict(rc.ablate)
    edge_types = split_list(args.edge_type_list, list(EDGE_TYPE_MODES), "edge type mode") or ab.get("edge_types")
    pruning = split_list(args.pruning_list, list(PRUNING_MODES), "pruning mode") or ab.get("pruning")
    mod_sets = split_list(args.modality_sets, MODALITY_SETS, "modality set") or ab.get("modalities")
    families = split_list(args.families, ABLATION_FAMILIES, "family") or ab.get("families")
    if families is None:
        picked = [f for f, v in zip(ABLATION_FAMILIES, (edge_types, pruning, mod_sets)) if v is not None]
        families = picked or list(ABLATION_FAMILIES)
    seeds = [int(s) for s in args.seeds.split(",")] if args.seeds else ab.get("seeds", [rc.seed])
    settings = ablation_settings(base, families, edge_types or list(EDGE_TYPE_MODES),
                                 pruning or list(PRUNING_MODES), mod_sets or list(MODALITY_SETS))
    out = out_dir(rc)
    effective = rc.to_json()
    effective["model"], effective["train"] = base.to_json(), tc.to_json()
    effective["ablate"] = {"families": families, "seeds": seeds, "split": args.split,
                           "settings": [f"{s.family}:{s.setting}" for s in settings]}
    write_json(effective, out / "config.json")
    cache_dir = Path(args.cache_dir) if args.cache_dir else None
    if cache_dir:
        cache_dir.mkdir(parents=True, exist_ok=True)
    summary, runs = run_ablation(ds, settings, tc, seeds, args.split, cache_dir)
    (out / "ablation.csv").write_text(rows_to_csv(summary, ABLATION_COLUMNS), encoding="utf-8")
    run_cols = [c for c in ABLATION_COLUMNS if c != "seeds"] + ["seed", "best_val_loss"]
    (out / "ablation_runs.csv").write_text(rows_to_csv(runs, run_cols), encoding="utf-8")
    sys.stdout.write(rows_to_csv(summary, ABLATION_COLUMNS))
    return EXIT_OK


# -- argument parsing -------------------------------------------------------

class Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def add_common(p, out_help="output directory"):
    p.add_argument("--config", help="JSON run config; flags override its values")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", help=out_help)


def add_model_flags(p):
    g = p.add_argument_group("model")
    g.add_argument("--d-emb", type=int)
    g.add_argument("--heads", type=int)
    g.add_argument("--layers", type=int)
    g.add_argument("--keep", type=float, help="edge pruning keep percentage")
    g.add_argument("--edge-types", choices=sorted(EDGE_TYPE_MODES))
    g.add_argument("--pruning", choices=PRUNING_MODES)
    g.add_argument("--modalities", help="e.g. AVT, AT or audio,text")
    g.add_argument("--head-hidden", type=int)
    g.add_argument("--leaky-slope", type=float)
    g.add_argument("--drop-future", action="store_true")


def add_train_flags(p):
    g = p.add_argument_group("training")
    g.add_argument("--epochs", type=int)
    g.add_argument("--lr", type=float)
    g.add_argument("--batch-size", type=int)
    g.add_argument("--patience", type=int)
    g.add_argument("--halvings", type=int)


def build_parser() -> argparse.ArgumentParser:
    parser = Parser(prog="mtgat", description="Multimodal temporal graph attention networks")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=Parser)

    p = sub.add_parser("gen", help="write a synthetic trigger-order dataset")
    add_common(p, "output dataset file")
    p.add_argument("--samples", type=int, default=1000)
    p.add_argument("--dim", type=int, default=8)
    p.add_argument("--min-len", type=int, default=8)
    p.add_argument("--max-len", type=int, default=16)
    p.add_argument("--trigger-scale", type=float, default=SyntheticSpec.trigger_scale)
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("inspect-graph", help="dump one sample's typed graph as JSON")
    add_common(p, "output file (stdout if omitted)")
    p.add_argument("--dataset")
    p.add_argument("--sample-id", required=True)
    p.add_argument("--modalities")
    p.set_defaults(func=cmd_inspect_graph)

    p = sub.add_parser("train", help="train and write params.json, history.csv, metrics.json")
    add_common(p)
    p.add_argument("--dataset")
    add_model_flags(p)
    add_train_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="print metrics JSON for one split")
    add_common(p)
    p.add_argument("--params", required=True)
    p.add_argument("--dataset")
    p.add_argument("--split", default="test")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("params", help="print the parameter count per block")
    add_common(p)
    add_model_flags(p)
    p.add_argument("--input-dims", help="audio,video,text feature sizes")
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_params)

    p = sub.add_parser("export-attn", help="export attention weights as JSON or DOT")
    add_common(p, "output file (stdout if omitted)")
    p.add_argument("--params", required=True)
    p.add_argument("--dataset")
    p.add_argument("--sample-id", required=True)
    p.add_argument("--format", choices=("json", "dot"), default="json")
    p.add_argument("--layer", type=int, help="layer drawn in DOT output (default: last)")
    p.set_defaults(func=cmd_export_attn)

    p = sub.add_parser("ablate", help="train across ablation settings and write a metrics CSV")
    add_common(p)
    p.add_argument("--dataset")
    add_model_flags(p)
    add_train_flags(p)
    p.add_argument("--families", help=f"comma list of {', '.join(ABLATION_FAMILIES)}")
    p.add_argument("--edge-type-list", help="comma list of edge type modes")
    p.add_argument("--pruning-list", help="comma list of pruning modes")
    p.add_argument("--modality-sets", help=f"comma list from {','.join(MODALITY_SETS)}")
    p.add_argument("--seeds", help="comma list of training seeds")
    p.add_argument("--split", default="test")
    p.add_argument("--cache-dir", help="reuse finished runs stored here")
    p.set_defaults(func=cmd_ablate)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(None if argv is None else [str(a) for a in argv])
    except SystemExit as exc:  # --help or a usage error
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (DataError, TrainingError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (UsageError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ad.NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
