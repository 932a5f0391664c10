"""Command-line runs: ``verify-theory``, ``train`` and ``eval``.

Each command reads a JSON config, writes its outputs into ``--out`` and a
``meta.json`` holding the fully resolved config. ``--seed`` replaces the
config's ``seed``. Stage seeds are derived from the global seed by adding a
fixed offset (see ``SEED_OFFSETS``), so any stage can be rerun on its own.

Exit codes:
  0  success
  1  a certified property failed (verify-theory)
  2  unreadable or invalid config, or unusable input files
  3  the evaluation protocol has no impostor pairs
  4  training diverged
"""

import argparse
import math
import sys
import warnings
from dataclasses import fields
from pathlib import Path

import numpy as np

from . import io, theory
from .errors import ConfigurationError, DegenerateAggregationError, DomainError, TrainingDivergence
from .evaluation import (
    PairProtocol,
    QualityScores,
    aggregate_templates,
    ahc,
    build_templates,
    clustering_report,
    dbscan,
    error_versus_reject,
    kmeans,
    pair_scores,
    tar_at_far,
    template_protocol,
    verification_table,
)
from .losses import VARIANTS
from .magparams import JSON_KEYS, MagParams, lambda_lower_bound
from .toy import SyntheticSpec, TrainConfig, generate_dataset, train

SEED_OFFSETS = {"data": 0, "train": 1000, "theory": 2000, "eval": 3000}
U64 = 2**64

EXIT_OK, EXIT_FAILED, EXIT_CONFIG, EXIT_NO_IMPOSTORS, EXIT_DIVERGED = 0, 1, 2, 3, 4


class ConfigError(Exception):
    """Invalid config; the message names the offending field."""


class NoImpostorPairs(Exception):
    pass


def derive_seeds(seed):
    return {stage: (seed + off) % U64 for stage, off in SEED_OFFSETS.items()}


# --- config validation ----------------------------------------------------

def _is_num(v):
    return isinstance(v, (int, float)) and not isinstance(v, bool)


def _is_int(v):
    return isinstance(v, int) and not isinstance(v, bool)


def _check_keys(section, where, allowed):
    if not isinstance(section, dict):
        raise ConfigError(f"{where}: expected a JSON object")
    for k in section:
        if k not in allowed:
            raise ConfigError(f"{where}.{k}: unknown field" if where else f"{k}: unknown field")


def _get(section, key, where, kind, default):
    name = f"{where}.{key}" if where else key
    if key not in section:
        return default
    v = section[key]
    if kind == "int" and not _is_int(v):
        raise ConfigError(f"{name}: expected an integer, got {v!r}")
    if kind == "num" and not (_is_num(v) and math.isfinite(v)):
        raise ConfigError(f"{name}: expected a finite number, got {v!r}")
    if kind == "str" and not isinstance(v, str):
        raise ConfigError(f"{name}: expected a string, got {v!r}")
    if kind == "nums":
        if not isinstance(v, list) or not v or not all(_is_num(x) for x in v):
            raise ConfigError(f"{name}: expected a nonempty list of numbers")
    if kind == "strs":
        if not isinstance(v, list) or not v or not all(isinstance(x, str) for x in v):
            raise ConfigError(f"{name}: expected a nonempty list of strings")
    return v


def _seed(raw, override):
    seed = override if override is not None else _get(raw, "seed", "", "int", 0)
    if not 0 <= seed < U64:
        raise ConfigError(f"seed: must lie in [0, 2**64), got {seed}")
    return seed


def _mag_params(raw, where):
    _check_keys(raw, where, JSON_KEYS)
    d = MagParams().to_dict()
    for k in JSON_KEYS:
        d[k] = _get(raw, k, where, "num", d[k])
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            return MagParams(**d)
    except DomainError as exc:
        raise ConfigError(f"{where}: {exc}") from exc


def _dataclass_section(cls, raw, where, skip=(), handled=()):
    """Validate ``raw`` against the scalar fields of ``cls`` (by default type).

    ``skip`` fields are rejected; ``handled`` fields are allowed but left to
    the caller.
    """
    proto = cls()
    allowed = [f.name for f in fields(cls) if f.name not in skip and f.name not in handled]
    _check_keys(raw, where, allowed + list(handled))
    out = {}
    for name in allowed:
        default = getattr(proto, name)
        if name not in raw:
            continue
        if isinstance(default, bool):
            kind = None
        elif isinstance(default, int):
            kind = "int"
        elif isinstance(default, float):
            kind = "num"
        elif isinstance(default, str):
            kind = "str"
        else:
            kind = None
        out[name] = _get(raw, name, where, kind, default)
    return out


def parse_theory_config(raw, seed_override=None):
    allowed = ["seed", "params", "variants", "n_configs", "convexity_grid_points",
               "optimum_grid_points", "thetas", "Bs", "theta_fixed", "B_fixed", "tolerance"]
    _check_keys(raw, "", allowed)
    variants = _get(raw, "variants", "", "strs", list(theory.SCALAR_VARIANTS))
    for v in variants:
        if v not in theory.SCALAR_VARIANTS:
            raise ConfigError(f"variants: unknown variant {v!r}")
    cfg = {
        "seed": _seed(raw, seed_override),
        "params": _mag_params(raw.get("params", {}), "params"),
        "variants": variants,
        "n_configs": _get(raw, "n_configs", "", "int", 200),
        "convexity_grid_points": _get(raw, "convexity_grid_points", "", "int", 1024),
        "optimum_grid_points": _get(raw, "optimum_grid_points", "", "int", 100_000),
        "thetas": [float(x) for x in _get(raw, "thetas", "", "nums", [0.1, 0.3, 0.5, 0.7])],
        "Bs": [float(x) for x in _get(raw, "Bs", "", "nums", [1.0, 10.0, 100.0, 1000.0])],
        "theta_fixed": float(_get(raw, "theta_fixed", "", "num", 0.5)),
        "B_fixed": float(_get(raw, "B_fixed", "", "num", 100.0)),
        "tolerance": float(_get(raw, "tolerance", "", "num", 1e-6)),
    }
    if cfg["n_configs"] < 1:
        raise ConfigError("n_configs: must be at least 1")
    if cfg["convexity_grid_points"] < 64:
        raise ConfigError("convexity_grid_points: must be at least 64")
    if cfg["optimum_grid_points"] < 2:
        raise ConfigError("optimum_grid_points: must be at least 2")
    return cfg


def _train_params(variant, raw):
    if variant in ("magface", "magcosface"):
        return _mag_params(raw if raw is not None else {}, "train.params")
    if variant in ("arcface", "cosface"):
        if raw is None:
            return (64.0, 0.5) if variant == "arcface" else (64.0, 0.35)
        if isinstance(raw, dict):
            _check_keys(raw, "train.params", ["s", "m"])
            if set(raw) != {"s", "m"}:
                raise ConfigError("train.params: needs both s and m")
            raw = [raw["s"], raw["m"]]
        if not (isinstance(raw, list) and len(raw) == 2 and all(_is_num(v) for v in raw)):
            raise ConfigError("train.params: expected {\"s\": ..., \"m\": ...}")
        return tuple(float(v) for v in raw)
    return None


def parse_train_config(raw, seed_override=None):
    _check_keys(raw, "", ["seed", "data", "train"])
    seed = _seed(raw, seed_override)
    seeds = derive_seeds(seed)
    data_raw = raw.get("data", {})
    data = _dataclass_section(SyntheticSpec, data_raw, "data", skip=("seed",))
    try:
        spec = SyntheticSpec(**data, seed=seeds["data"])
    except DomainError as exc:
        raise ConfigError(f"data: {exc}") from exc

    train_raw = raw.get("train", {})
    tr = _dataclass_section(TrainConfig, train_raw, "train", skip=("seed",),
                            handled=("params", "lr_decay_epochs"))
    variant = tr.get("loss_variant", "magface")
    if variant not in VARIANTS:
        raise ConfigError(f"train.loss_variant: unknown variant {variant!r}; expected one of {list(VARIANTS)}")
    if "lr_decay_epochs" in train_raw:
        ep = train_raw["lr_decay_epochs"]
        if not isinstance(ep, list) or not all(_is_int(e) and e >= 0 for e in ep):
            raise ConfigError("train.lr_decay_epochs: expected a list of nonnegative integers")
        tr["lr_decay_epochs"] = tuple(ep)
    tr["params"] = _train_params(variant, train_raw.get("params"))
    try:
        tcfg = TrainConfig(**tr, seed=seeds["train"])
    except ConfigurationError as exc:
        raise ConfigError(f"train: {exc}") from exc
    return {"seed": seed, "data": spec, "train": tcfg}


def parse_eval_config(raw, base_dir, seed_override=None):
    allowed = ["seed", "model_dir", "embeddings_csv", "split", "far_targets", "fmr_target",
               "reject_fractions", "quality_source", "aggregation", "clustering"]
    _check_keys(raw, "", allowed)
    has_model = "model_dir" in raw
    has_csv = "embeddings_csv" in raw
    if has_model == has_csv:
        raise ConfigError("model_dir/embeddings_csv: exactly one input source is required")

    def resolve(key):
        p = Path(_get(raw, key, "", "str", None))
        return p if p.is_absolute() else (base_dir / p)

    cfg = {
        "seed": _seed(raw, seed_override),
        "model_dir": resolve("model_dir") if has_model else None,
        "embeddings_csv": resolve("embeddings_csv") if has_csv else None,
        "split": _get(raw, "split", "", "int", 1),
        "far_targets": [float(x) for x in _get(raw, "far_targets", "", "nums", [0.1, 0.01, 0.001])],
        "fmr_target": float(_get(raw, "fmr_target", "", "num", 0.01)),
        "reject_fractions": [float(x) for x in _get(raw, "reject_fractions", "", "nums",
                                                      [0.0, 0.1, 0.2, 0.3, 0.4, 0.5])],
        "quality_source": _get(raw, "quality_source", "", "str", "magnitude"),
    }
    if cfg["split"] < 1:
        raise ConfigError("split: evaluation split must be at least 1 (split 0 is training data)")
    for t in cfg["far_targets"] + [cfg["fmr_target"]]:
        if not 0 < t <= 1:
            raise ConfigError(f"far_targets/fmr_target: {t} must lie in (0, 1]")
    fr = cfg["reject_fractions"]
    if any(b <= a for a, b in zip(fr, fr[1:])) or fr[0] < 0 or fr[-1] >= 1:
        raise ConfigError("reject_fractions: must be strictly ascending within [0, 1)")
    if cfg["quality_source"] not in ("magnitude", "csv"):
        raise ConfigError(f"quality_source: expected 'magnitude' or 'csv', got {cfg['quality_source']!r}")
    if cfg["quality_source"] == "csv" and not has_csv:
        raise ConfigError("quality_source: 'csv' requires embeddings_csv")

    agg = raw.get("aggregation", {})
    _check_keys(agg, "aggregation", ["template_size", "far_target"])
    cfg["aggregation"] = {
        "template_size": _get(agg, "template_size", "aggregation", "int", 4),
        "far_target": float(_get(agg, "far_target", "aggregation", "num", 0.01)),
    }
    if cfg["aggregation"]["template_size"] < 1:
        raise ConfigError("aggregation.template_size: must be at least 1")

    cl = raw.get("clustering", {})
    _check_keys(cl, "clustering", ["k", "dbscan_eps", "dbscan_min_pts"])
    k = cl.get("k")
    if k is not None and not (_is_int(k) and k >= 1):
        raise ConfigError("clustering.k: expected a positive integer or null")
    cfg["clustering"] = {
        "k": k,
        "dbscan_eps": float(_get(cl, "dbscan_eps", "clustering", "num", 0.1)),
        "dbscan_min_pts": _get(cl, "dbscan_min_pts", "clustering", "int", 5),
    }
    if not cfg["clustering"]["dbscan_eps"] > 0 or cfg["clustering"]["dbscan_min_pts"] < 1:
        raise ConfigError("clustering: dbscan_eps must be positive and dbscan_min_pts at least 1")
    return cfg


# --- meta -------------------------------------------------------------------

def _meta(command, seed, resolved):
    return {
        "command": command,
        "seed": seed,
        "derived_seeds": derive_seeds(seed),
        "seed_offsets": SEED_OFFSETS,
        "config": resolved,
    }


def _train_resolved(cfg):
    return {"seed": cfg["seed"], "data": _spec_dict(cfg["data"]), "train": cfg["train"].to_dict()}


def _spec_dict(spec):
    return {f.name: getattr(spec, f.name) for f in fields(spec)}


# --- commands ---------------------------------------------------------------

def cmd_verify_theory(raw, out, seed_override=None):
    cfg = parse_theory_config(raw, seed_override)
    p = cfg["params"]
    resolved = dict(cfg, params=p.to_dict())
    meta = _meta("verify-theory", cfg["seed"], resolved)
    io.write_json(out / "meta.json", meta)

    if not p.guarantees_hold:
        report = {
            "status": "skipped",
            "reason": "parameters outside the guaranteed regime",
            "guarantees_hold": False,
            "lambda_lower_bound": lambda_lower_bound(p),
            "lambda_g": p.lambda_g,
            "suites": [],
            "meta": meta,
        }
        io.write_json(out / "certificates.json", report)
        return EXIT_OK

    seed = derive_seeds(cfg["seed"])["theory"]
    suites = []
    for i, variant in enumerate(cfg["variants"]):
        cfgs = theory.random_configs(cfg["n_configs"], [seed, i], p, variant)
        suites.append(theory.convexity_suite(cfgs, cfg["convexity_grid_points"]))
        suites.append(theory.optimum_suite(cfgs, cfg["optimum_grid_points"]))
        suites.append(theory.monotonicity_suite(p, variant, cfg["thetas"], cfg["Bs"],
                                                cfg["theta_fixed"], cfg["B_fixed"], cfg["tolerance"]))
    suites.append(theory.cap_probability_suite())
    passed = all(not s["failures"] for s in suites)
    report = {
        "status": "passed" if passed else "failed",
        "guarantees_hold": True,
        "lambda_lower_bound": lambda_lower_bound(p),
        "lambda_g": p.lambda_g,
        "suites": suites,
        "meta": meta,
    }
    io.write_json(out / "certificates.json", report)
    return EXIT_OK if passed else EXIT_FAILED


def cmd_train(raw, out, seed_override=None):
    cfg = parse_train_config(raw, seed_override)
    meta = _meta("train", cfg["seed"], _train_resolved(cfg))
    io.write_json(out / "meta.json", meta)
    dataset = generate_dataset(cfg["data"], split=0)
    rep = train(dataset, cfg["train"])
    io.write_samples_csv(out / "samples.csv", rep.stats)
    io.write_model(out, rep.model, meta=meta)
    io.write_json(out / "report.json", dict(rep.summary(), meta=meta))
    return EXIT_OK


def _load_eval_inputs(cfg):
    """Returns ``(embeddings, labels, csv_qualities_or_None, source_description)``."""
    if cfg["embeddings_csv"] is not None:
        path = cfg["embeddings_csv"]
        if not path.is_file():
            raise ConfigError(f"embeddings_csv: no such file {str(path)!r}")
        try:
            data = io.read_embeddings_csv(path)
        except (DomainError, ValueError) as exc:
            raise ConfigError(f"embeddings_csv: {exc}") from exc
        return data["embeddings"], data["labels"], data["qualities"], {"embeddings_csv": str(path)}

    mdir = cfg["model_dir"]
    if not (mdir / "meta.json").is_file() or not (mdir / "model.bin").is_file():
        raise ConfigError(f"model_dir: {str(mdir)!r} does not hold a train run")
    train_meta = io.read_json(mdir / "meta.json")
    try:
        spec = SyntheticSpec(**train_meta["config"]["data"])
        model = io.read_model(mdir)
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"model_dir: unreadable train run ({exc})") from exc
    test = generate_dataset(spec, split=cfg["split"])
    return model.embed(test.inputs), test.labels, test.qualities, {
        "model_dir": str(mdir), "split": cfg["split"], "data": _spec_dict(spec)}


def cmd_eval(raw, out, base_dir, seed_override=None):
    cfg = parse_eval_config(raw, base_dir, seed_override)
    resolved = dict(cfg, model_dir=str(cfg["model_dir"]) if cfg["model_dir"] else None,
                    embeddings_csv=str(cfg["embeddings_csv"]) if cfg["embeddings_csv"] else None)
    meta = _meta("eval", cfg["seed"], resolved)
    io.write_json(out / "meta.json", meta)
    seed = derive_seeds(cfg["seed"])["eval"]

    E, labels, csv_q, source = _load_eval_inputs(cfg)
    if E.shape[0] == 0 or np.any(np.linalg.norm(E, axis=1) == 0):
        raise ConfigError("embeddings: need at least one embedding and no zero vectors")
    protocol = PairProtocol.all_pairs(labels)
    if protocol.n_impostor == 0:
        raise NoImpostorPairs("protocol has no impostor pairs")

    if cfg["model_dir"] is not None:
        io.write_embeddings_csv(out / "embeddings.csv", E, labels, csv_q)

    scores = pair_scores(protocol, E)
    gen, imp = scores[protocol.is_genuine], scores[~protocol.is_genuine]
    verification = {
        "n_genuine": protocol.n_genuine,
        "n_impostor": protocol.n_impostor,
        "tar_at_far": None if gen.size == 0 else
        [{"far": t, "tar": v} for t, v in verification_table(gen, imp, cfg["far_targets"]).items()],
        "meta": meta,
    }
    io.write_json(out / "verification.json", verification)

    if cfg["quality_source"] == "csv":
        quality = QualityScores(csv_q, "external")
    else:
        quality = QualityScores.from_magnitudes(E)
    curve = error_versus_reject(protocol, E, quality, cfg["reject_fractions"], cfg["fmr_target"])
    io.write_reject_curve_csv(out / "reject_curve.csv", curve)
    io.write_json(out / "reject_curve.json", {
        **curve.header(),
        "quality_source": quality.source,
        "thresholds": curve.thresholds,
        "n_rejected": curve.n_rejected,
        "meta": meta,
    })

    io.write_json(out / "aggregation.json", dict(_aggregation(E, labels, cfg["aggregation"], seed), meta=meta))

    cl = cfg["clustering"]
    k = cl["k"] if cl["k"] is not None else int(np.unique(labels).size)
    k = min(k, E.shape[0])
    results = [
        clustering_report("kmeans", {"k": k, "seed": seed}, kmeans(E, k, seed=seed), labels),
        clustering_report("ahc", {"k": k, "linkage": "average", "metric": "cosine"}, ahc(E, k), labels),
        clustering_report("dbscan", {"eps": cl["dbscan_eps"], "min_pts": cl["dbscan_min_pts"],
                                     "metric": "cosine"},
                          dbscan(E, cl["dbscan_eps"], cl["dbscan_min_pts"]), labels),
    ]
    io.write_json(out / "clustering.json", {"results": results, "meta": meta})
    io.write_json(out / "eval_report.json", {"source": source, "verification": verification["tar_at_far"],
                                             "reject_curve": {"reject_fraction": curve.reject_fractions,
                                                              "fnmr": curve.fnmr_values,
                                                              "valid": curve.valid},
                                             "meta": meta})
    return EXIT_OK


def _aggregation(E, labels, acfg, seed):
    templates = build_templates(labels, acfg["template_size"], seed)
    tp = template_protocol(templates)
    base = {"template_size": acfg["template_size"], "far_target": acfg["far_target"],
            "n_templates": len(templates)}
    if tp.n_genuine == 0 or tp.n_impostor == 0:
        return dict(base, status="skipped", reason="templates give no genuine or no impostor pairs")
    out = dict(base, status="ok")
    for rule in ("mean", "magface_plus"):
        try:
            T = aggregate_templates(E, templates, rule)
        except DegenerateAggregationError as exc:
            out[rule] = {"error": str(exc)}
            continue
        s = pair_scores(tp, T)
        out[rule] = {"tar": tar_at_far(s[tp.is_genuine], s[~tp.is_genuine], acfg["far_target"])}
    return out


# --- entry point --------------------------------------------------------------

def build_parser():
    parser = argparse.ArgumentParser(prog="magface-lab", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_ in (("verify-theory", "certify the scalar-loss properties"),
                        ("train", "train a toy embedding model"),
                        ("eval", "evaluate a trained model or an embeddings CSV")):
        p = sub.add_parser(name, help=help_)
        p.add_argument("--config", required=True, type=Path)
        p.add_argument("--out", required=True, type=Path)
        p.add_argument("--seed", type=int, default=None, help="overrides the config seed")
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        try:
            raw = io.read_json(args.config)
        except FileNotFoundError as exc:
            raise ConfigError(f"config: no such file {str(args.config)!r}") from exc
        except ValueError as exc:
            raise ConfigError(f"config: not valid JSON ({exc})") from exc
        if not isinstance(raw, dict):
            raise ConfigError("config: top level must be a JSON object")
        args.out.mkdir(parents=True, exist_ok=True)
        if args.command == "verify-theory":
            return cmd_verify_theory(raw, args.out, args.seed)
        if args.command == "train":
            return cmd_train(raw, args.out, args.seed)
        return cmd_eval(raw, args.out, args.config.resolve().parent, args.seed)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NoImpostorPairs as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NO_IMPOSTORS
    except TrainingDivergence as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DIVERGED


if __name__ == "__main__":
    sys.exit(main())
