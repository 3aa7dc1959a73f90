"""Command-line entry point: corpus validation, splits, fingerprints, training,
sampling, screening and metric reports.

Settings resolve as flag > config file > default. Logs go to stderr as one
JSON object per line; reports go to stdout or ``--out``.
"""

from __future__ import annotations

import argparse
import configparser
import json
import logging
import sys
import zlib
from dataclasses import asdict
from pathlib import Path
from typing import Any, Callable, Sequence

import numpy as np

EXIT_CONFIG, EXIT_IO, EXIT_DATA, EXIT_NUMERICAL = 2, 3, 4, 5

log = logging.getLogger("txdiff")


class ConfigError(ValueError):
    pass


# ---------------------------------------------------------------------------
# settings registry: section -> key -> (type, default, help)

SETTINGS: dict[str, dict[str, tuple[Callable, Any, str]]] = {
    "run": {
        "seed": (int, 0, "root seed; subsystems derive named sub-seeds"),
    },
    "diffusion": {
        "T": (int, 500, "number of diffusion steps"),
        "schedule": (str, "uniform", "transition family: uniform or marginal"),
    },
    "condition": {
        "p_drop": (float, 0.1, "condition-drop probability during training"),
        "noise_sigma": (float, 0.1, "std of the noise added to the condition during training"),
    },
    "sampling": {
        "guidance_scale": (float, 1.0, "classifier-free guidance scale s"),
        "guidance": (str, "transition", "where guidance acts: transition or clean"),
        "num_samples": (int, 100, "molecules to sample"),
        "num_atoms_from": (str, "histogram", "node counts: histogram or fixed:N"),
    },
    "tfe": {
        "N": (int, 128, "representative rows per aggregated profile"),
        "gamma": (float, 1.0, "weight of the local loss"),
        "lambda_kl": (float, 0.1, "KL weight inside the ELBO"),
        "tau": (float, 0.1, "contrastive temperature"),
        "lambda": (float, 0.15, "sparse penalty weight"),
        "alpha": (float, 0.4, "negative-term weight of the regression loss"),
        "lr": (float, 1e-4, "Adam learning rate"),
        "batch_size": (int, 64, "batch size"),
        "steps": (int, 30_000, "optimisation steps"),
        "d_model": (int, 128, "attention width"),
        "heads": (int, 4, "attention heads"),
        "d_z": (int, 128, "perturbation embedding size"),
        "n_blocks": (int, 3, "interaction blocks"),
    },
    "denoiser": {
        "lr": (float, 2e-4, "Adam learning rate"),
        "lr_decay": (str, "constant", "constant or cosine"),
        "batch_size": (int, 32, "batch size"),
        "steps": (int, 2000, "optimisation steps"),
        "d": (int, 128, "node width"),
        "n_blocks": (int, 2, "transformer blocks"),
        "heads": (int, 4, "attention heads"),
        "d_pair": (int, 64, "edge-stream width"),
    },
    "screen": {
        "top_k": (int, 10, "results per query"),
        "ks": (str, "5,10,15,20", "comma-separated k values for evaluation"),
    },
    "split": {
        "trivial_max_atoms": (int, 6, "scaffolds this small (or empty) are forced into train"),
    },
    "sweep": {
        "scales": (str, "0,1,2,3,5", "comma-separated guidance scales"),
    },
}


def _flag(section: str, key: str) -> str:
    prefix = {"tfe": "tfe-", "denoiser": "denoiser-"}.get(section, "")
    return "--" + prefix + key.replace("_", "-").lower()


def _dest(section: str, key: str) -> str:
    return f"{section}__{key}"


def read_config(path: str | Path | None) -> dict[str, dict[str, Any]]:
    """Parse an INI file against ``SETTINGS``; unknown sections or keys are errors."""
    if path is None:
        return {}
    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str
    try:
        with open(path, encoding="utf-8") as fh:
            parser.read_file(fh)
    except configparser.Error as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    out: dict[str, dict[str, Any]] = {}
    for section in parser.sections():
        if section not in SETTINGS:
            raise ConfigError(f"unknown config section [{section}]")
        for key, raw in parser.items(section):
            if key not in SETTINGS[section]:
                raise ConfigError(f"unknown config key {section}.{key}")
            kind = SETTINGS[section][key][0]
            try:
                out.setdefault(section, {})[key] = kind(raw)
            except ValueError as exc:
                raise ConfigError(f"{section}.{key}: cannot read {raw!r} as {kind.__name__}") from exc
    return out


class Settings:
    """Resolved values for the settings a command declared."""

    def __init__(self, args: argparse.Namespace, config: dict[str, dict[str, Any]]):
        self._values = {}
        for section, keys in SETTINGS.items():
            for key, (_, default, _) in keys.items():
                flag = getattr(args, _dest(section, key), None)
                if flag is not None:
                    value = flag
                elif key in config.get(section, {}):
                    value = config[section][key]
                else:
                    value = default
                self._values[(section, key)] = value

    def __call__(self, section: str, key: str):
        return self._values[(section, key)]


def sub_seed(root: int, name: str) -> int:
    """Deterministic per-subsystem seed derived from the root seed and a name."""
    return int(np.random.SeedSequence([int(root), zlib.crc32(name.encode())]).generate_state(1)[0])


# ---------------------------------------------------------------------------
# logging and output


class _JsonLines(logging.Formatter):
    def format(self, record: logging.LogRecord) -> str:
        entry = {"level": record.levelname.lower(), "logger": record.name, "event": record.getMessage()}
        entry.update(getattr(record, "fields", {}))
        return json.dumps(entry, sort_keys=True, default=str)


def _setup_logging(level: str) -> None:
    handler = logging.StreamHandler(sys.stderr)
    handler.setFormatter(_JsonLines())
    root = logging.getLogger("txdiff")
    root.handlers[:] = [handler]
    root.setLevel(level.upper())
    root.propagate = False


def _event(name: str, **fields) -> None:
    log.info(name, extra={"fields": fields})


def _emit(text: str, out: str | None) -> None:
    if out:
        Path(out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)


def _ints(text: str, what: str) -> list[int]:
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError as exc:
        raise ConfigError(f"{what}: expected comma-separated integers, got {text!r}") from exc


def _floats(text: str, what: str) -> list[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError as exc:
        raise ConfigError(f"{what}: expected comma-separated numbers, got {text!r}") from exc


# ---------------------------------------------------------------------------
# shared loaders


def load_pairs(path: str | Path) -> dict[str, np.ndarray]:
    """Paired-profile archive: ``pre`` and ``post`` (n, N, d) or (n, d), and ``smiles`` (n,)."""
    with np.load(path, allow_pickle=False) as data:
        missing = {"pre", "post", "smiles"} - set(data.files)
        if missing:
            raise ValueError(f"{path}: missing arrays {sorted(missing)}")
        pairs = {k: data[k] for k in data.files}
    for key in ("pre", "post"):
        if pairs[key].ndim == 2:
            pairs[key] = pairs[key][:, None, :]
    if pairs["pre"].shape != pairs["post"].shape or len(pairs["pre"]) != len(pairs["smiles"]):
        raise ValueError(f"{path}: pre {pairs['pre'].shape}, post {pairs['post'].shape}, "
                         f"{len(pairs['smiles'])} smiles")
    return pairs


def save_pairs(path: str | Path, pre: np.ndarray, post: np.ndarray, smiles: Sequence[str]) -> None:
    np.savez(path, pre=np.asarray(pre, dtype=np.float64), post=np.asarray(post, dtype=np.float64),
             smiles=np.asarray(list(smiles), dtype=str))


def _read_smiles(path: str) -> list[tuple[str, str]]:
    from .molgraph import iter_smiles_file

    return [(r.smiles, r.id) for r in iter_smiles_file(path)]


def _graphs(path: str):
    from .molgraph import parse_smiles

    return [parse_smiles(s) for s, _ in _read_smiles(path)]


def _pair_embeddings(tfe_model, pairs) -> np.ndarray:
    from . import autodiff as ad

    with ad.no_grad():
        return tfe_model.interact(pairs["pre"], pairs["post"]).data


# ---------------------------------------------------------------------------
# commands


def cmd_validate(args, cfg: Settings) -> int:
    from .molgraph import SmilesError, is_valid, iter_smiles_file, parse_smiles

    total = parsed = valid = 0
    failures = []
    for rec in iter_smiles_file(args.smiles):
        total += 1
        try:
            g = parse_smiles(rec.smiles)
        except SmilesError as exc:
            failures.append({"line": rec.line, "id": rec.id, "error": type(exc).__name__, "offset": exc.offset})
            continue
        parsed += 1
        valid += bool(g.atoms) and is_valid(g)
    report = {
        "records": total,
        "parsed": parsed,
        "valid": valid,
        "parse_rate": parsed / total if total else 0.0,
        "valid_rate": valid / total if total else 0.0,
        "failures": failures,
    }
    _emit(json.dumps(report, indent=2, sort_keys=True) + "\n", args.out)
    return 0


def cmd_split(args, cfg: Settings) -> int:
    from . import splits as sp

    ds = sp.read_index(args.index)
    seed = sub_seed(cfg("run", "seed"), "split")
    if args.protocol == "random":
        split = sp.random_split(ds, seed)
    elif args.protocol == "scaffold":
        split = sp.scaffold_split(ds, seed, cfg("split", "trivial_max_atoms"))
    elif args.protocol == "cell":
        split = sp.cell_split(ds, args.hold_out_tissue or (), seed, args.hold_out_tumor or ())
    else:
        split = sp.read_split(args.split, args.audit_protocol)
        report = sp.leakage_audit(ds, split)
        _emit(report.summary() + "\n", args.out)
        for axis, ids in report.offending.items():
            if ids and axis in report.guarded:
                _event("leakage", axis=axis, ids=ids[:20], count=len(ids))
        return 0 if report.passed else EXIT_DATA
    sp.write_split(args.out, split)
    report = sp.leakage_audit(ds, split)
    _event("split", protocol=split.protocol, counts=split.counts(), dropped=len(split.dropped), flags=split.flags)
    sys.stdout.write(report.summary() + "\n")
    return 0


def cmd_fp_build(args, cfg: Settings) -> int:
    from .chem import morgan_fingerprint
    from .molgraph import SmilesError, parse_smiles

    ids, smiles, fps = [], [], []
    for text, ident in _read_smiles(args.smiles):
        try:
            g = parse_smiles(text)
        except SmilesError as exc:
            _event("skip", id=ident, error=str(exc))
            continue
        ids.append(ident)
        smiles.append(text)
        fps.append(morgan_fingerprint(g, check=False).astype(np.uint16))
    if not ids:
        raise ValueError("no parsable molecules")
    np.savez(args.out, ids=np.asarray(ids, dtype=str), smiles=np.asarray(smiles, dtype=str), fps=np.stack(fps))
    _event("fp_build", records=len(ids))
    return 0


def _tfe_config(cfg: Settings, d_in: int):
    from .tfe import TFEConfig

    return TFEConfig(d_in=d_in, d_model=cfg("tfe", "d_model"), heads=cfg("tfe", "heads"), d_z=cfg("tfe", "d_z"),
                     n_blocks=cfg("tfe", "n_blocks"))


def cmd_train_tfe(args, cfg: Settings) -> int:
    from .chem import morgan_fingerprint
    from .denoiser import Checkpoint, save_checkpoint
    from .diffusion import build_schedule
    from .molgraph import parse_smiles
    from .tfe import TFE, TFETrainConfig, VAEStub, train_tfe

    pairs = load_pairs(args.pairs)
    smiles = [str(s) for s in pairs["smiles"]]
    fps = np.stack([morgan_fingerprint(parse_smiles(s), check=False) for s in smiles])
    seed = sub_seed(cfg("run", "seed"), "tfe")
    model = TFE(_tfe_config(cfg, pairs["pre"].shape[-1]), seed=seed)
    vae = VAEStub(d_in=fps.shape[1], seed=seed)
    train_cfg = TFETrainConfig(
        steps=cfg("tfe", "steps"), batch_size=cfg("tfe", "batch_size"), lr=cfg("tfe", "lr"),
        gamma=cfg("tfe", "gamma"), lambda_kl=cfg("tfe", "lambda_kl"), tau=cfg("tfe", "tau"),
        sparse_weight=cfg("tfe", "lambda"), neg_weight=cfg("tfe", "alpha"), seed=seed,
    )
    train_tfe(model, vae, pairs["pre"], pairs["post"], fps, smiles, train_cfg,
              log=lambda **kw: _event("tfe_step", **kw))
    tensors = {f"tfe.{k}": v for k, v in model.state_dict().items()}
    meta = {"tfe_config": asdict(model.config), "step": train_cfg.steps, "seed": cfg("run", "seed")}
    save_checkpoint(args.out, Checkpoint(build_schedule(1), tensors, meta))
    return 0


def cmd_train_diffusion(args, cfg: Settings) -> int:
    from .denoiser import Denoiser, DenoiserConfig, TrainConfig, load_checkpoint, model_checkpoint, save_checkpoint
    from .denoiser import tfe_from_checkpoint, train
    from .diffusion import K_ATOM, K_BOND, build_schedule, graph_to_state, size_histogram
    from .molgraph import parse_smiles

    tfe_model = None
    if args.pairs:
        pairs = load_pairs(args.pairs)
        graphs = [parse_smiles(str(s)) for s in pairs["smiles"]]
        if not args.tfe:
            raise ConfigError("--pairs needs --tfe to embed the profiles")
        tfe_model = tfe_from_checkpoint(load_checkpoint(args.tfe))
        if tfe_model is None:
            raise ValueError(f"{args.tfe} holds no feature extractor")
        z = _pair_embeddings(tfe_model, pairs)
    elif args.smiles:
        graphs = _graphs(args.smiles)
        z = None
    else:
        raise ConfigError("give --smiles or --pairs")
    T = cfg("diffusion", "T")
    kind = cfg("diffusion", "schedule")
    if kind == "marginal":
        node_m, edge_m = np.ones(K_ATOM), np.ones(K_BOND)
        for g in graphs:
            st = graph_to_state(g)
            node_m += st.node_probs.sum(0)
            edge_m += st.edge_probs[np.triu_indices(st.n, 1)].sum(0)
        sched = build_schedule(T, "marginal", node_marginal=node_m / node_m.sum(), edge_marginal=edge_m / edge_m.sum())
    elif kind == "uniform":
        sched = build_schedule(T)
    else:
        raise ConfigError(f"unknown schedule {kind!r}")
    seed = sub_seed(cfg("run", "seed"), "denoiser")
    d_z = z.shape[1] if z is not None else cfg("tfe", "d_z")
    model = Denoiser(DenoiserConfig(T=T, d=cfg("denoiser", "d"), n_blocks=cfg("denoiser", "n_blocks"),
                                    heads=cfg("denoiser", "heads"), d_z=d_z, d_pair=cfg("denoiser", "d_pair")),
                     seed=seed)
    train_cfg = TrainConfig(steps=cfg("denoiser", "steps"), batch_size=cfg("denoiser", "batch_size"),
                            lr=cfg("denoiser", "lr"), p_drop=cfg("condition", "p_drop"),
                            noise_sigma=cfg("condition", "noise_sigma"), lr_decay=cfg("denoiser", "lr_decay"),
                            seed=seed)
    train(model, graphs, z, sched, train_cfg, log=lambda **kw: _event("denoiser_step", **kw))
    hist = size_histogram([len(g.atoms) for g in graphs])
    meta = {"step": train_cfg.steps, "seed": cfg("run", "seed"), "size_histogram": hist.tolist()}
    save_checkpoint(args.out, model_checkpoint(model, sched, tfe_model, meta))
    return 0


def _load_model(path: str):
    from .denoiser import denoiser_from_checkpoint, load_checkpoint, tfe_from_checkpoint

    ck = load_checkpoint(path)
    if "denoiser_config" not in ck.metadata:
        raise ValueError(f"{path} holds no denoiser")
    return ck, denoiser_from_checkpoint(ck), tfe_from_checkpoint(ck)


def _sizes(source: str, ck, count: int, seed: int) -> list[int]:
    from .diffusion import draw_sizes

    if source == "histogram":
        if "size_histogram" not in ck.metadata:
            raise ValueError("checkpoint has no size histogram; use fixed:N")
        return draw_sizes(np.asarray(ck.metadata["size_histogram"]), count, seed)
    if source.startswith("fixed:"):
        try:
            n = int(source[6:])
        except ValueError as exc:
            raise ConfigError(f"bad --num-atoms-from {source!r}") from exc
        if n < 1:
            raise ConfigError("fixed atom count must be >= 1")
        return [n] * count
    raise ConfigError(f"--num-atoms-from must be histogram or fixed:N, got {source!r}")


def _conditions(args, tfe_model, count: int, seed: int) -> tuple[np.ndarray | None, np.ndarray | None]:
    """Condition rows and the pair index behind each, or ``(None, None)`` when unconditional."""
    if not args.pairs:
        return None, None
    if tfe_model is None:
        raise ValueError("model checkpoint holds no feature extractor; cannot embed --pairs")
    pairs = load_pairs(args.pairs)
    z = _pair_embeddings(tfe_model, pairs)
    if args.pair_index is not None:
        if not 0 <= args.pair_index < len(z):
            raise ValueError(f"--pair-index {args.pair_index} outside 0..{len(z) - 1}")
        idx = np.full(count, args.pair_index)
    else:
        idx = np.random.default_rng(seed).integers(0, len(z), size=count)
    return z[idx], idx


def _check_steps(args, T: int) -> None:
    if args.steps is not None and args.steps != T:
        raise ConfigError(f"--steps {args.steps} differs from the checkpoint schedule T={T}")


def cmd_sample(args, cfg: Settings) -> int:
    from .diffusion import sample_batch
    from .molgraph import write_smiles

    ck, model, tfe_model = _load_model(args.model)
    _check_steps(args, ck.schedule.T)
    count = cfg("sampling", "num_samples")
    root = cfg("run", "seed")
    sizes = _sizes(cfg("sampling", "num_atoms_from"), ck, count, sub_seed(root, "sizes"))
    cond, _ = _conditions(args, tfe_model, count, sub_seed(root, "conditions"))
    graphs = sample_batch(ck.schedule, model, cond, sizes, s=cfg("sampling", "guidance_scale"),
                          seed=sub_seed(root, "sampling"), guidance=cfg("sampling", "guidance"))
    lines = [f"{write_smiles(g)}\tS{k:05d}\n" for k, g in enumerate(graphs)]
    _emit("".join(lines), args.out)
    _event("sample", count=count)
    return 0


def _metric_report(samples, reference, pairs=None):
    from .chem import graphs_from_smiles, metric_suite, scaffold_from_smiles

    scaffolds = {scaffold_from_smiles(s) for s in reference}
    return metric_suite(graphs_from_smiles(samples), graphs_from_smiles(reference), scaffolds, pairs)


def cmd_eval_metrics(args, cfg: Settings) -> int:
    samples = [s for s, _ in _read_smiles(args.samples)]
    reference = [s for s, _ in _read_smiles(args.reference)]
    _emit(_metric_report(samples, reference).to_text(), args.out)
    return 0


def cmd_cfg_sweep(args, cfg: Settings) -> int:
    from .diffusion import sample_batch
    from .molgraph import write_smiles

    ck, model, tfe_model = _load_model(args.model)
    _check_steps(args, ck.schedule.T)
    if not args.pairs:
        raise ConfigError("cfg-sweep needs --pairs for conditions")
    count = cfg("sampling", "num_samples")
    root = cfg("run", "seed")
    sizes = _sizes(cfg("sampling", "num_atoms_from"), ck, count, sub_seed(root, "sizes"))
    cond, idx = _conditions(args, tfe_model, count, sub_seed(root, "conditions"))
    reference = [str(s) for s in load_pairs(args.pairs)["smiles"]]
    rows = ["s\tvalidity\tmorgan_sim\tuniqueness\tscaffold_novelty\tinternal_diversity"]
    for s in _floats(cfg("sweep", "scales"), "scales"):
        graphs = sample_batch(ck.schedule, model, cond, sizes, s=s, seed=sub_seed(root, "sampling"),
                              guidance=cfg("sampling", "guidance"))
        rep = _metric_report([write_smiles(g) for g in graphs], reference, [int(i) for i in idx])
        rows.append(f"{s:g}\t{rep.validity:.4f}\t{rep.morgan_sim:.4f}\t{rep.uniqueness:.4f}\t"
                    f"{rep.scaffold_novelty:.4f}\t{rep.internal_diversity:.4f}")
        _event("sweep_point", s=s, validity=rep.validity, morgan_sim=rep.morgan_sim)
    _emit("\n".join(rows) + "\n", args.out)
    return 0


def cmd_screen(args, cfg: Settings) -> int:
    from . import screener as sc
    from .chem import morgan_fingerprint
    from .molgraph import parse_smiles

    if args.action == "build":
        db = sc.build_db(args.smiles)
        sc.save_db(args.out, db)
        _event("screen_build", records=len(db), skipped=db.skipped)
        return 0
    db = sc.load_db(args.db)
    if args.action == "query":
        if args.query_smiles:
            query = morgan_fingerprint(parse_smiles(args.query_smiles), check=False)
        elif args.query_vector:
            query = np.load(args.query_vector)
        else:
            raise ConfigError("give --query-smiles or --query-vector")
        hits = sc.query_topk(db, query, cfg("screen", "top_k"))
        _emit("".join(f"{rank}\t{ident}\t{score:.6f}\n" for rank, (ident, score) in enumerate(hits, 1)), args.out)
        return 0
    queries = []
    for text, truth in _read_smiles(args.queries):
        queries.append((morgan_fingerprint(parse_smiles(text), check=False), truth))
    rows = sc.screen_eval(db, queries, _ints(cfg("screen", "ks"), "ks"))
    lines = ["k\tmean_similarity\thit_rate"] + [f"{r.k}\t{r.mean_similarity:.6f}\t{r.hit_rate:.6f}" for r in rows]
    _emit("\n".join(lines) + "\n", args.out)
    return 0


# ---------------------------------------------------------------------------
# parser


def _add_settings(p: argparse.ArgumentParser, keys: Sequence[tuple[str, str]]) -> None:
    group = p.add_argument_group("settings (flag > config > default)")
    for section, key in keys:
        kind, default, text = SETTINGS[section][key]
        group.add_argument(_flag(section, key), dest=_dest(section, key), type=kind, default=None,
                           help=f"{text} (default: {default}; config [{section}] {key})")


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="INI config file with sections per module")
    p.add_argument("--log-level", default="info", choices=["debug", "info", "warning", "error"],
                   help="stderr log level (default: info)")
    _add_settings(p, [("run", "seed")])


DENOISER_KEYS = [("diffusion", "T"), ("diffusion", "schedule"), ("condition", "p_drop"),
                 ("condition", "noise_sigma")] + [("denoiser", k) for k in SETTINGS["denoiser"]]
SAMPLING_KEYS = [("sampling", k) for k in SETTINGS["sampling"]]


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="txdiff", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("validate", help="parse a SMILES file and report parse/validity rates")
    p.add_argument("smiles")
    p.add_argument("--out")
    _common(p)
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("split", help="partition a dataset index or audit a split")
    psub = p.add_subparsers(dest="protocol", required=True)
    for name in ("random", "scaffold", "cell"):
        q = psub.add_parser(name, help=f"{name} split")
        q.add_argument("index", help="CSV with id,smiles,cell_line,tissue,tumor_type")
        q.add_argument("--out", required=True, help="id,partition CSV")
        if name == "scaffold":
            _add_settings(q, [("split", "trivial_max_atoms")])
        if name == "cell":
            q.add_argument("--hold-out-tissue", action="append", help="tissue to place in test (repeatable)")
            q.add_argument("--hold-out-tumor", action="append", help="tumor type to place in test (repeatable)")
        _common(q)
        q.set_defaults(func=cmd_split)
    q = psub.add_parser("audit", help="leakage audit of an existing split")
    q.add_argument("index")
    q.add_argument("split")
    q.add_argument("--audit-protocol", default="scaffold", choices=["random", "scaffold", "cell"],
                   help="axes to guard (default: scaffold)")
    q.add_argument("--out")
    _common(q)
    q.set_defaults(func=cmd_split)

    p = sub.add_parser("fp", help="fingerprint utilities")
    fsub = p.add_subparsers(dest="action", required=True)
    q = fsub.add_parser("build", help="Morgan count fingerprints of a SMILES file")
    q.add_argument("smiles")
    q.add_argument("--out", required=True, help=".npz with ids, smiles, fps")
    _common(q)
    q.set_defaults(func=cmd_fp_build)

    p = sub.add_parser("train-tfe", help="train the transcriptome feature extractor")
    p.add_argument("--pairs", required=True, help=".npz with pre, post, smiles")
    p.add_argument("--out", required=True, help="checkpoint path")
    _common(p)
    _add_settings(p, [("tfe", k) for k in SETTINGS["tfe"] if k != "N"])
    p.set_defaults(func=cmd_train_tfe)

    p = sub.add_parser("train-diffusion", help="train the graph denoiser")
    p.add_argument("--smiles", help="SMILES file for unconditional training")
    p.add_argument("--pairs", help=".npz with pre, post, smiles for conditional training")
    p.add_argument("--tfe", help="checkpoint holding the feature extractor")
    p.add_argument("--out", required=True, help="checkpoint path")
    _common(p)
    _add_settings(p, DENOISER_KEYS + [("tfe", "d_z")])
    p.set_defaults(func=cmd_train_diffusion)

    for name, func, help_text in (("sample", cmd_sample, "sample molecules from a checkpoint"),
                                  ("cfg-sweep", cmd_cfg_sweep, "sample and score across guidance scales")):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--model", required=True)
        p.add_argument("--pairs", help=".npz of profiles used as conditions")
        p.add_argument("--pair-index", type=int, help="condition every sample on this pair")
        p.add_argument("--steps", type=int, help="must equal the checkpoint's T when given")
        p.add_argument("--out")
        _common(p)
        _add_settings(p, SAMPLING_KEYS + ([("sweep", "scales")] if name == "cfg-sweep" else []))
        p.set_defaults(func=func)

    p = sub.add_parser("screen", help="fingerprint database screening")
    ssub = p.add_subparsers(dest="action", required=True)
    q = ssub.add_parser("build", help="build an FPDB file from SMILES")
    q.add_argument("smiles")
    q.add_argument("--out", required=True)
    _common(q)
    q.set_defaults(func=cmd_screen)
    q = ssub.add_parser("query", help="Top-K search")
    q.add_argument("--db", required=True)
    q.add_argument("--query-smiles")
    q.add_argument("--query-vector", help=".npy non-negative 2048-vector")
    q.add_argument("--out")
    _common(q)
    _add_settings(q, [("screen", "top_k")])
    q.set_defaults(func=cmd_screen)
    q = ssub.add_parser("eval", help="hit rate and mean similarity over k")
    q.add_argument("--db", required=True)
    q.add_argument("--queries", required=True, help="SMILES<TAB>ground-truth id lines")
    q.add_argument("--out")
    _common(q)
    _add_settings(q, [("screen", "ks")])
    q.set_defaults(func=cmd_screen)

    p = sub.add_parser("eval-metrics", help="generation metrics of a sample file against a reference")
    p.add_argument("--samples", required=True)
    p.add_argument("--reference", required=True)
    p.add_argument("--out")
    _common(p)
    p.set_defaults(func=cmd_eval_metrics)
    return parser


def exit_code(exc: BaseException) -> int:
    from .autodiff import NonFiniteInput
    from .binio import CorruptFile, VersionMismatch
    from .tfe import NonPositiveVariance

    if isinstance(exc, ConfigError):
        return EXIT_CONFIG
    if isinstance(exc, (OSError, CorruptFile, VersionMismatch, UnicodeDecodeError)):
        return EXIT_IO
    if isinstance(exc, (ArithmeticError, NonFiniteInput, NonPositiveVariance)):
        return EXIT_NUMERICAL
    if isinstance(exc, (ValueError, KeyError)):
        return EXIT_DATA
    raise exc


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    _setup_logging(args.log_level)
    try:
        settings = Settings(args, read_config(args.config))
        return args.func(args, settings)
    except Exception as exc:  # mapped to exit codes; unexpected types re-raise
        code = exit_code(exc)
        log.error(type(exc).__name__, extra={"fields": {"detail": str(exc), "exit_code": code}})
        return code


if __name__ == "__main__":
    sys.exit(main())
