"""Command line driver for the discovery pipeline.

Every stage reads and writes fixed file names under an output directory and
records itself in ``manifest.json`` (configuration, its hash, the seed and
SHA-256 digests of the outputs). A stage whose configuration hash and outputs
are unchanged is skipped, so an interrupted ``run-all`` resumes where it
stopped.

Exit status: 0 success, 1 invalid configuration or input, 2 stage failure.
"""

import argparse
import hashlib
import json
import logging
import os
import sys
from dataclasses import dataclass

import numpy as np

from . import __version__, alignment, evaluation, pipeline
from .corpus import Corpus, CorpusError, inject_supervision, load_parallel, split_train_dev
from .model import PRESETS, ModelConfig, Seq2SeqModel
from .synthcorpus import SynthSpec, generate
from .training import TrainConfig, TrainingDiverged, extract_alignments, train, write_trace

log = logging.getLogger("attnseg")

OUT_ENV = "ATTNSEG_OUT"

DEFAULTS = {
    "source": "",
    "target": "",
    "gold": "",
    "inventory": "",
    "synthetic": False,
    "preset": "reverse",
    "temperature": 1.0,
    "smooth": False,
    "smooth_axis": "symbols",
    "fuse_with": "",
    "smooth_after_fusion": False,
    "supervise_k": 0,
    "dev_fraction": 0.0,
    "seed": 0,
    "batch_size": 32,
    "lr": 0.001,
    "patience": 3,
    "min_delta": 1e-4,
    "max_epochs": 200,
    "evaluate": True,
    "exclude_supervised": True,
    "eval_tokens": True,
    "gold_types": "train",
    "out": "",
}

# configuration keys each stage depends on (besides its upstream stage)
STAGE_KEYS = {
    "prepare": ["source", "target", "gold", "inventory", "synthetic", "supervise_k", "dev_fraction", "seed"],
    "train": ["preset", "temperature", "seed", "batch_size", "lr", "patience", "min_delta", "max_epochs"],
    "extract": [],
    "segment": ["smooth", "smooth_axis", "fuse_with", "smooth_after_fusion"],
    "evaluate": ["exclude_supervised", "eval_tokens", "gold_types"],
    "analyze": [],
}
UPSTREAM = {"prepare": None, "train": "prepare", "extract": "train", "segment": "extract",
            "evaluate": "segment", "analyze": "segment"}
OUTPUTS = {
    "prepare": ["corpus.json"],
    "train": ["model.npz", "trace.tsv"],
    "extract": ["matrices.txt"],
    "segment": ["segmentation.txt", "lexicon.tsv"],
    "evaluate": ["report.txt", "report.kv"],
    "analyze": ["rank_frequency.tsv", "type_lengths.tsv", "gold_rank_frequency.tsv", "gold_type_lengths.tsv"],
}


class ConfigError(ValueError):
    """Invalid configuration or missing input (exit status 1)."""


class StageError(RuntimeError):
    """A stage failed while running (exit status 2)."""


# ---------------------------------------------------------------------------
# configuration
# ---------------------------------------------------------------------------


def _coerce(key, value):
    default = DEFAULTS[key]
    if isinstance(value, str):
        text = value.strip()
        if isinstance(default, bool):
            low = text.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ConfigError(f"{key}: expected a boolean, got {value!r}")
        try:
            if isinstance(default, int):
                return int(text)
            if isinstance(default, float):
                return float(text)
        except ValueError:
            raise ConfigError(f"{key}: expected a number, got {value!r}") from None
        return text
    return value


def read_config(path):
    """``key = value`` lines; ``#`` starts a comment."""
    cfg = {}
    try:
        with open(path, encoding="utf-8") as fh:
            lines = fh.read().splitlines()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    for n, line in enumerate(lines, 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        key = key.strip().replace("-", "_")
        if not sep:
            raise ConfigError(f"{path}:{n}: expected key = value")
        if key not in DEFAULTS:
            raise ConfigError(f"{path}:{n}: unknown key {key!r}")
        cfg[key] = _coerce(key, value)
    return cfg


def resolve_config(args):
    cfg = dict(DEFAULTS)
    cfg["out"] = os.environ.get(OUT_ENV, "attnseg-out")
    if args.config:
        cfg.update(read_config(args.config))
    for key in DEFAULTS:
        value = getattr(args, key, None)
        if value is not None:
            cfg[key] = _coerce(key, value)
    return cfg


def validate(cfg, stages):
    """Check everything that can be checked before any stage runs."""
    if cfg["preset"] not in PRESETS:
        raise ConfigError(f"preset must be one of {sorted(PRESETS)}, not {cfg['preset']!r}")
    if not cfg["temperature"] > 0:
        raise ConfigError("temperature must be positive")
    if cfg["supervise_k"] < 0:
        raise ConfigError("supervise_k must be >= 0")
    if not 0 <= cfg["dev_fraction"] < 1:
        raise ConfigError("dev_fraction must be in [0, 1)")
    if cfg["smooth_axis"] not in ("symbols", "row", "column"):
        raise ConfigError("smooth_axis must be symbols, row or column")
    if cfg["gold_types"] not in ("train", "full"):
        raise ConfigError("gold_types must be train or full")
    try:
        TrainConfig(batch_size=cfg["batch_size"], patience=cfg["patience"], max_epochs=cfg["max_epochs"])
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    if "prepare" in stages and not cfg["synthetic"]:
        for key in ("source", "target"):
            if not cfg[key]:
                raise ConfigError(f"no {key} file given")
        needs_gold = cfg["supervise_k"] > 0 or ("evaluate" in stages and cfg["evaluate"])
        if needs_gold and not cfg["gold"]:
            raise ConfigError("evaluation or supervision requested but no gold file given")
        for key in ("source", "target", "gold", "inventory"):
            if cfg[key] and not os.path.isfile(cfg[key]):
                raise ConfigError(f"{key} file not found: {cfg[key]}")
    if "segment" in stages and cfg["fuse_with"] and not os.path.isfile(cfg["fuse_with"]):
        raise ConfigError(f"fuse_with file not found: {cfg['fuse_with']}")


# ---------------------------------------------------------------------------
# manifest
# ---------------------------------------------------------------------------


def _digest(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def config_hash(cfg, keys=None):
    keys = sorted(cfg if keys is None else keys)
    blob = json.dumps({k: cfg[k] for k in keys}, sort_keys=True)
    return hashlib.sha256(blob.encode()).hexdigest()


@dataclass
class Run:
    cfg: dict
    out: str
    force: bool = False

    @property
    def manifest_path(self):
        return os.path.join(self.out, "manifest.json")

    def path(self, name):
        return os.path.join(self.out, name)

    def manifest(self):
        if not os.path.exists(self.manifest_path):
            return {"stages": {}}
        with open(self.manifest_path, encoding="utf-8") as fh:
            return json.load(fh)

    def stage_hash(self, stage):
        keys = STAGE_KEYS[stage]
        parts = [stage, config_hash(self.cfg, keys)]
        if stage == "segment" and self.cfg["fuse_with"]:
            parts.append(_digest(self.cfg["fuse_with"]))
        if stage == "prepare":
            for key in ("source", "target", "gold", "inventory"):
                if self.cfg[key] and os.path.isfile(self.cfg[key]):
                    parts.append(_digest(self.cfg[key]))
        up = UPSTREAM[stage]
        if up is not None:
            parts.append(self.manifest()["stages"].get(up, {}).get("hash", "missing"))
        return hashlib.sha256("|".join(parts).encode()).hexdigest()

    def up_to_date(self, stage):
        entry = self.manifest()["stages"].get(stage)
        if self.force or entry is None or entry.get("hash") != self.stage_hash(stage):
            return False
        for name, digest in entry.get("outputs", {}).items():
            p = self.path(name)
            if not os.path.exists(p) or _digest(p) != digest:
                return False
        return True

    def record(self, stage):
        m = self.manifest()
        m["version"] = __version__
        m["config"] = self.cfg
        m["config_hash"] = config_hash(self.cfg)
        m["seed"] = self.cfg["seed"]
        m["stages"][stage] = {
            "hash": self.stage_hash(stage),
            "keys": {k: self.cfg[k] for k in STAGE_KEYS[stage]},
            "outputs": {n: _digest(self.path(n)) for n in OUTPUTS[stage]},
        }
        # downstream entries are stale once an upstream stage reran
        for later, up in UPSTREAM.items():
            if up == stage:
                m["stages"].pop(later, None)
        tmp = self.manifest_path + ".tmp"
        with open(tmp, "w", encoding="utf-8") as fh:
            json.dump(m, fh, indent=1, sort_keys=True)
        os.replace(tmp, self.manifest_path)

    def require(self, *names):
        for n in names:
            if not os.path.exists(self.path(n)):
                raise ConfigError(f"missing {self.path(n)}: run the producing stage first")


# ---------------------------------------------------------------------------
# stages
# ---------------------------------------------------------------------------


def stage_prepare(run):
    cfg = run.cfg
    if cfg["synthetic"]:
        paths = generate(SynthSpec()).write(run.path("synthetic"))
        corpus = load_parallel(paths["source"], paths["target"], paths["gold"])
    else:
        corpus = load_parallel(cfg["source"], cfg["target"], cfg["gold"] or None, cfg["inventory"] or None)
    if corpus.has_gold:
        corpus.meta["full_gold_types"] = sorted(evaluation.vocabulary(pipeline.gold_segmentations(corpus)))
    if cfg["supervise_k"]:
        corpus = inject_supervision(corpus, cfg["supervise_k"])
    if cfg["dev_fraction"] > 0:
        corpus, dev = split_train_dev(corpus, cfg["dev_fraction"], seed=cfg["seed"])
        dev.save(run.path("dev.json"))
    corpus.save(run.path("corpus.json"))


def _load_corpus(run):
    run.require("corpus.json")
    return Corpus.load(run.path("corpus.json"))


def stage_train(run):
    cfg = run.cfg
    corpus = _load_corpus(run)
    mc = ModelConfig.for_corpus(corpus, cfg["preset"], temperature=cfg["temperature"])
    tc = TrainConfig(batch_size=cfg["batch_size"], lr=cfg["lr"], patience=cfg["patience"],
                     min_delta=cfg["min_delta"], max_epochs=cfg["max_epochs"], seed=cfg["seed"])
    try:
        result = train(corpus, tc, mc)
    except TrainingDiverged as exc:
        write_trace(run.path("trace.tsv"), exc.trace)
        raise
    result.model.save(run.path("model.npz"))
    write_trace(run.path("trace.tsv"), result.trace)


def stage_extract(run):
    corpus = _load_corpus(run)
    run.require("model.npz")
    model = Seq2SeqModel.load(run.path("model.npz"))
    alignment.write_matrices(run.path("matrices.txt"), extract_alignments(model, corpus))


def stage_segment(run):
    cfg = run.cfg
    corpus = _load_corpus(run)
    run.require("matrices.txt")
    matrices = alignment.read_matrices(run.path("matrices.txt"))
    other = alignment.read_matrices(cfg["fuse_with"]) if cfg["fuse_with"] else None
    processed = pipeline.postprocess(matrices, smooth=cfg["smooth"], fuse_with=other,
                                     smooth_after_fusion=cfg["smooth_after_fusion"], axis=cfg["smooth_axis"])
    segs = pipeline.segment_corpus(corpus, processed)
    alignment.write_segmentation(run.path("segmentation.txt"), segs, run.path("lexicon.tsv"))


def respan(symbols, tokens, line=None):
    """Rebuild a Segmentation over ``symbols`` from its token strings."""
    spans, i = [], 0
    for tok in tokens:
        start, text = i, ""
        while len(text) < len(tok) and i < len(symbols):
            text += symbols[i]
            i += 1
        if text != tok:
            raise ConfigError(f"segmentation line {line}: token {tok!r} does not match the corpus symbols")
        spans.append((start, i))
    if i != len(symbols):
        raise ConfigError(f"segmentation line {line}: tokens do not cover the sentence")
    return alignment.Segmentation(tuple(symbols), tuple(spans))


def _hypothesis(run, corpus, path=None):
    path = path or run.path("segmentation.txt")
    lines = alignment.read_segmentation(path)
    if len(lines) != len(corpus):
        raise ConfigError(f"{path}: {len(lines)} lines for {len(corpus)} sentences")
    return [respan(corpus.symbol_surface(p), toks, n + 1) for n, (p, toks) in enumerate(zip(corpus.pairs, lines))]


def stage_evaluate(run):
    cfg = run.cfg
    corpus = _load_corpus(run)
    if not corpus.has_gold:
        raise ConfigError("the prepared corpus has no gold segmentation")
    run.require("segmentation.txt")
    hyp = _hypothesis(run, corpus)
    gold = pipeline.gold_segmentations(corpus)
    supervised = corpus.meta.get("supervised_types") or []
    exclude = supervised if cfg["exclude_supervised"] else ()
    gold_types = corpus.meta.get("full_gold_types") if cfg["gold_types"] == "full" else None
    # token scores are over-optimistic once gold words were injected; off by default then
    tokens = cfg["eval_tokens"] and not supervised
    report = evaluation.evaluate(hyp, gold, exclude_types=exclude, tokens=tokens, gold_types=gold_types)
    with open(run.path("report.txt"), "w", encoding="utf-8", newline="\n") as fh:
        fh.write(report.to_text())
    with open(run.path("report.kv"), "w", encoding="utf-8", newline="\n") as fh:
        fh.write(report.to_kv())
    sys.stdout.write(report.to_text())


def _write_distributions(run, segs, prefix):
    table = evaluation.rank_frequency(segs)
    evaluation.write_table(run.path(f"{prefix}rank_frequency.tsv"), ["rank", "type", "count"], table)
    # type length in symbols, which differs from characters under a multi-character inventory
    sizes = {"".join(s.symbols[a:b]): b - a for s in segs for a, b in s.spans}
    hist, mean = evaluation.length_histogram(sizes, length=sizes.get)
    rows = [(k, repr(v)) for k, v in hist.items()] + [("mean", repr(mean))]
    evaluation.write_table(run.path(f"{prefix}type_lengths.tsv"), ["length", "fraction"], rows)


def stage_analyze(run):
    corpus = _load_corpus(run)
    run.require("segmentation.txt")
    _write_distributions(run, _hypothesis(run, corpus), "")
    if corpus.has_gold:
        _write_distributions(run, pipeline.gold_segmentations(corpus), "gold_")
    else:
        for name in ("gold_rank_frequency.tsv", "gold_type_lengths.tsv"):
            evaluation.write_table(run.path(name), ["empty"], [])


STAGES = {
    "prepare": stage_prepare,
    "train": stage_train,
    "extract": stage_extract,
    "segment": stage_segment,
    "evaluate": stage_evaluate,
    "analyze": stage_analyze,
}


def run_stages(cfg, stages, force=False):
    validate(cfg, stages)
    os.makedirs(cfg["out"], exist_ok=True)
    run = Run(cfg, cfg["out"], force)
    for stage in stages:
        if stage == "evaluate" and not cfg["evaluate"]:
            continue
        if run.up_to_date(stage):
            log.info("%s: up to date, skipped", stage)
            continue
        log.info("%s: running", stage)
        try:
            STAGES[stage](run)
        except ConfigError:
            raise
        except (CorpusError, FileNotFoundError) as exc:
            raise ConfigError(f"{stage}: {exc}") from exc
        except Exception as exc:  # any other failure is a runtime failure of this stage
            raise StageError(f"stage {stage} failed: {type(exc).__name__}: {exc}") from exc
        run.record(stage)
    return run


# ---------------------------------------------------------------------------
# standalone tools
# ---------------------------------------------------------------------------


def export_heatmap(matrix, path, levels=255):
    """Write ``path.pgm`` (dark = high probability) and ``path.tsv`` (labelled values)."""
    base = str(path)
    for suffix in (".pgm", ".tsv"):
        if base.endswith(suffix):
            base = base[: -len(suffix)]
    p = np.clip(matrix.probs, 0.0, 1.0)
    gray = np.rint(levels * (1.0 - p)).astype(int)
    rows, cols = gray.shape
    try:
        with open(base + ".pgm", "w", encoding="ascii", newline="\n") as fh:
            fh.write(f"P2\n{cols} {rows}\n{levels}\n")
            for r in gray:
                fh.write(" ".join(str(v) for v in r) + "\n")
        with open(base + ".tsv", "w", encoding="utf-8", newline="\n") as fh:
            fh.write("\t" + "\t".join(matrix.col_tokens) + "\n")
            for label, r in zip(matrix.row_tokens, matrix.probs):
                fh.write(label + "\t" + "\t".join(format(float(x), ".17g") for x in r) + "\n")
    except OSError as exc:
        raise StageError(f"cannot write heatmap {base}: {exc}") from None
    return base + ".pgm", base + ".tsv"


def read_heatmap_table(path):
    with open(path, encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    cols = lines[0].split("\t")[1:]
    rows, values = [], []
    for ln in lines[1:]:
        parts = ln.split("\t")
        rows.append(parts[0])
        values.append([float(x) for x in parts[1:]])
    return rows, cols, np.array(values)


def read_pgm(path):
    with open(path, encoding="ascii") as fh:
        tokens = fh.read().split()
    if tokens[0] != "P2":
        raise ValueError("not a plain PGM file")
    cols, rows, _ = int(tokens[1]), int(tokens[2]), int(tokens[3])
    return np.array([int(t) for t in tokens[4:]]).reshape(rows, cols)


def _cmd_stage(name):
    def cmd(args):
        cfg = resolve_config(args)
        run_stages(cfg, [name], force=args.force)
    return cmd


def cmd_run_all(args):
    cfg = resolve_config(args)
    run_stages(cfg, ["prepare", "train", "extract", "segment", "evaluate", "analyze"], force=args.force)


def cmd_smooth(args):
    try:
        mats = alignment.read_matrices(args.input)
    except OSError as exc:
        raise ConfigError(str(exc)) from None
    alignment.write_matrices(args.output, [alignment.smooth(m, args.axis) for m in mats])


def cmd_fuse(args):
    try:
        a, b = alignment.read_matrices(args.first), alignment.read_matrices(args.second)
    except OSError as exc:
        raise ConfigError(str(exc)) from None
    if len(a) != len(b):
        raise ConfigError(f"{len(a)} matrices against {len(b)}")
    try:
        fused = [alignment.fuse(x, y) for x, y in zip(a, b)]
    except alignment.AlignmentError as exc:
        raise ConfigError(str(exc)) from None
    alignment.write_matrices(args.output, fused)


def cmd_heatmap(args):
    cfg = resolve_config(args)
    source = args.matrices or os.path.join(cfg["out"], "matrices.txt")
    try:
        mats = alignment.read_matrices(source)
    except OSError as exc:
        raise ConfigError(str(exc)) from None
    if not 0 <= args.index < len(mats):
        raise ConfigError(f"sentence index {args.index} out of range (0..{len(mats) - 1})")
    prefix = args.prefix or os.path.join(cfg["out"], f"heatmap_{args.index}")
    for p in export_heatmap(mats[args.index], prefix):
        print(p)


def _common(parser):
    g = parser.add_argument_group("configuration (flags override the config file)")
    g.add_argument("--config", help="key = value configuration file")
    g.add_argument("--seed", type=int)
    g.add_argument("--preset", choices=sorted(PRESETS))
    g.add_argument("--temperature", type=float)
    g.add_argument("--smooth", action=argparse.BooleanOptionalAction, default=None)
    g.add_argument("--smooth-axis", dest="smooth_axis", choices=["symbols", "row", "column"])
    g.add_argument("--supervise-k", dest="supervise_k", type=int)
    g.add_argument("--out", help=f"output directory (default ${OUT_ENV} or ./attnseg-out)")
    g.add_argument("--source")
    g.add_argument("--target")
    g.add_argument("--gold")
    g.add_argument("--inventory")
    g.add_argument("--synthetic", action=argparse.BooleanOptionalAction, default=None,
                   help="generate the default synthetic corpus instead of reading files")
    g.add_argument("--fuse-with", dest="fuse_with", help="matrices file of the other direction")
    g.add_argument("--max-epochs", dest="max_epochs", type=int)
    g.add_argument("--dev-fraction", dest="dev_fraction", type=float)
    g.add_argument("--force", action="store_true", help="rerun stages even if up to date")


def build_parser():
    parser = argparse.ArgumentParser(prog="attnseg", description=__doc__.split("\n")[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_text in (
        ("prepare", "read (or generate) the corpus"),
        ("train", "train the encoder-decoder"),
        ("extract", "force-decode the corpus into alignment matrices"),
        ("segment", "post-process matrices and cut the symbol sequences"),
        ("evaluate", "score the segmentation against the gold standard"),
        ("analyze", "frequency and type-length tables"),
    ):
        p = sub.add_parser(name, help=help_text)
        _common(p)
        p.set_defaults(func=_cmd_stage(name))
    p = sub.add_parser("run-all", help="every stage in order, resuming finished ones")
    _common(p)
    p.set_defaults(func=cmd_run_all)

    p = sub.add_parser("smooth", help="smooth a matrices file")
    p.add_argument("input")
    p.add_argument("output")
    p.add_argument("--axis", choices=["symbols", "row", "column"], default="symbols")
    p.set_defaults(func=cmd_smooth)

    p = sub.add_parser("fuse", help="average base and reverse matrices files")
    p.add_argument("first")
    p.add_argument("second")
    p.add_argument("output")
    p.set_defaults(func=cmd_fuse)

    p = sub.add_parser("heatmap", help="export one matrix as PGM image and TSV table")
    _common(p)
    p.add_argument("--matrices", help="matrices file (default: OUT/matrices.txt)")
    p.add_argument("--index", type=int, default=0)
    p.add_argument("--prefix", help="output path without extension")
    p.set_defaults(func=cmd_heatmap)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        args.func(args)
    except ConfigError as exc:
        print(f"attnseg: error: {exc}", file=sys.stderr)
        return 1
    except StageError as exc:
        print(f"attnseg: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
