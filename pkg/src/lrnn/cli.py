"""``lrnn`` command line: parse, ground, compile, export-dot, train, cv.

Exit status: 0 success, 1 usage error, 2 data/template error.
"""
from __future__ import annotations

import argparse
import logging
import os
import sys
from typing import Any, Dict, List, Optional, Sequence

from . import __version__
from .autodiff import checkpoint_bytes, init_params
from .errors import LrnnError, TemplateError
from .graph import compile_graph, export_dot, to_json
from .grounder import dump_derivations, ground
from .molecules import RING_SIZES, guess_format, load_corpus, resolve_template
from .parser import Example, parse_atom, render
from .train import READOUTS, TrainConfig, cross_validate, history_csv, train

log = logging.getLogger("lrnn")

SUBCOMMANDS = ("parse", "ground", "compile", "export-dot", "train", "cv")
# structure inspection defaults to one layer (the two-rule picture); learning to three
_INSPECT_LAYERS = 1


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message: str):  # exit 1 on usage errors, not argparse's 2
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def read_config(path: str) -> Dict[str, Any]:
    """``key = value`` lines (TOML subset: ints, floats, bools, quoted strings, lists)."""
    out: Dict[str, Any] = {}
    try:
        with open(path, encoding="utf-8") as fh:
            lines = fh.readlines()
    except OSError as exc:
        raise UsageError(f"config {path}: {exc.strerror}") from None
    for n, raw in enumerate(lines, 1):
        line = raw.split("#", 1)[0].strip()
        if not line or line.startswith("["):
            continue
        if "=" not in line:
            raise UsageError(f"config {path}:{n}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        out[key.replace("-", "_")] = _config_value(value)
    return out


def _config_value(text: str) -> Any:
    if text.startswith(("'", '"')) and text.endswith(text[0]):
        return text[1:-1]
    if text.lower() in ("true", "false"):
        return text.lower() == "true"
    if text.startswith("[") and text.endswith("]"):
        return [_config_value(t.strip()) for t in text[1:-1].split(",") if t.strip()]
    for cast in (int, float):
        try:
            return cast(text)
        except ValueError:
            pass
    return text


def _ring_sizes(text: str) -> List[int]:
    try:
        sizes = [int(t) for t in str(text).replace(" ", "").split(",") if t]
    except ValueError:
        raise argparse.ArgumentTypeError(f"invalid ring sizes {text!r}") from None
    if not sizes or any(k not in RING_SIZES for k in sizes):
        raise argparse.ArgumentTypeError(f"ring sizes must be drawn from {RING_SIZES}")
    return sizes


def _common() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    g = p.add_argument_group("common options")
    g.add_argument("--template", help="builtin name (gnn, rings, rings+gnn) or .tmpl path")
    g.add_argument("--corpus", help="corpus file (.mol.txt native or .facts)")
    g.add_argument("--format", choices=("native", "fact-file"), help="corpus format (default: by extension)")
    g.add_argument("--example", help="example id (default: first example)")
    g.add_argument("--query", help="query atom (default: q)")
    g.add_argument("--out", help="output directory (default: .)")
    g.add_argument("--config", help="key = value defaults file; flags override it")
    g.add_argument("--steps", type=int, help="ADAM steps (default 2000)")
    g.add_argument("--folds", type=int, help="cross-validation folds (default 5)")
    g.add_argument("--seed", type=int, help="random seed (default 42)")
    g.add_argument("--d", type=int, help="representation dimension (default 3)")
    g.add_argument("--layers", type=int,
                   help="layers to unroll (default 3 for train/cv, 1 otherwise)")
    g.add_argument("--ring-sizes", type=_ring_sizes, help="comma list from {5,6} (default 5,6)")
    g.add_argument("--readout", choices=READOUTS, help="readout map (default mean-component)")
    g.add_argument("--lr", type=float, help="ADAM step size (default 0.001)")
    g.add_argument("--jobs", type=int, help="worker threads (default 1)")
    g.add_argument("--bias", action="store_true", default=None, help="add per-rule bias vectors")
    g.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    return p


def build_parser() -> argparse.ArgumentParser:
    common = _common()
    flags = sorted({s for a in common._actions for s in a.option_strings if s.startswith("--")})
    parser = _Parser(
        prog="lrnn",
        description="Lifted relational neural networks over weighted Datalog templates.",
        epilog="subcommand flags: " + " ".join(flags),
    )
    parser.add_argument("--version", action="version", version=f"lrnn {__version__}")
    sub = parser.add_subparsers(dest="command", metavar="{" + ",".join(SUBCOMMANDS) + "}",
                                parser_class=_Parser)
    helps = {
        "parse": "validate and pretty-print a (layer-expanded) template",
        "ground": "dump every derivation of one example's least model",
        "compile": "write the JSON computation graph of one example (graph.json)",
        "export-dot": "write a Graphviz DOT file per example",
        "train": "train on the corpus; write checkpoint.bin and history.csv",
        "cv": "k-fold cross-validation; write metrics.csv and metrics.json",
    }
    for name in SUBCOMMANDS:
        sub.add_parser(name, parents=[common], help=helps[name], description=helps[name])
    return parser


def _settings(args: argparse.Namespace) -> Dict[str, Any]:
    cfg: Dict[str, Any] = {
        "steps": 2000, "folds": 5, "seed": 42, "d": 3,
        "layers": 3 if args.command in ("train", "cv") else _INSPECT_LAYERS,
        "ring_sizes": list(RING_SIZES), "readout": "mean-component", "lr": 1e-3,
        "jobs": 1, "bias": False, "query": "q", "out": ".", "template": None,
        "corpus": None, "format": None, "example": None,
    }
    if args.config:
        file_cfg = read_config(args.config)
        unknown = sorted(set(file_cfg) - set(cfg))
        if unknown:
            raise UsageError(f"config {args.config}: unknown key(s) {', '.join(unknown)}")
        if "ring_sizes" in file_cfg and not isinstance(file_cfg["ring_sizes"], list):
            file_cfg["ring_sizes"] = _ring_sizes(file_cfg["ring_sizes"])
        cfg.update(file_cfg)
    for key in cfg:
        value = getattr(args, key, None)
        if value is not None:
            cfg[key] = value
    return cfg


def _need(cfg: Dict[str, Any], *keys: str) -> None:
    for k in keys:
        if not cfg.get(k):
            raise UsageError(f"--{k.replace('_', '-')} is required")


def _corpus(cfg: Dict[str, Any]) -> List[Example]:
    path = cfg["corpus"]
    return load_corpus(path, cfg["format"] or guess_format(path))


def _select(corpus: List[Example], ex_id: Optional[str]) -> List[Example]:
    if not corpus:
        raise LrnnError("corpus contains no examples")
    if ex_id is None:
        return corpus
    chosen = [e for e in corpus if e.id == ex_id]
    if not chosen:
        raise LrnnError(f"no example with id {ex_id!r}")
    return chosen


def _config(cfg: Dict[str, Any]) -> TrainConfig:
    try:
        return TrainConfig(steps=cfg["steps"], d=cfg["d"], folds=cfg["folds"], seed=cfg["seed"],
                           layers=cfg["layers"], readout=cfg["readout"], lr=cfg["lr"],
                           jobs=cfg["jobs"], bias=cfg["bias"], query=cfg["query"])
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def _write(out_dir: str, name: str, data, binary: bool = False) -> str:
    os.makedirs(out_dir, exist_ok=True)
    path = os.path.join(out_dir, name)
    with open(path, "wb" if binary else "w", encoding=None if binary else "utf-8", newline=None if binary else "") as fh:
        fh.write(data)
    return path


def _safe(name: str) -> str:
    return "".join(ch if ch.isalnum() or ch in "-_." else "_" for ch in name)


def run(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command is None:
        parser.print_help()
        return 1
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = _settings(args)
        _need(cfg, "template")
        if cfg["layers"] < 1:
            raise UsageError("--layers must be positive")
        template = resolve_template(cfg["template"], cfg["layers"], cfg["ring_sizes"])
        if args.command == "parse":
            sys.stdout.write(render(template))
            return 0
        _need(cfg, "corpus")
        config = _config(cfg)
        corpus = _corpus(cfg)
        if args.command == "ground":
            ex = _select(corpus, cfg["example"])[0]
            sys.stdout.write(dump_derivations(ground(template, ex)))
            return 0
        if args.command in ("compile", "export-dot"):
            params = init_params(template, config.d, config.seed, bias=config.bias)
            query = parse_atom(config.query)
            chosen = _select(corpus, cfg["example"])
            if args.command == "compile":
                chosen = chosen[:1]
            for ex in chosen:
                graph = compile_graph(ground(template, ex), template, query, params, bias=config.bias)
                if args.command == "compile":
                    path = _write(cfg["out"], "graph.json", to_json(graph, params) + "\n")
                else:
                    path = _write(cfg["out"], f"{_safe(ex.id)}.dot", export_dot(graph))
                log.info("wrote %s (%d nodes)", path, len(graph))
            return 0
        if args.command == "train":
            params, history = train(corpus, template, config)
            _write(cfg["out"], "checkpoint.bin", checkpoint_bytes(params), binary=True)
            _write(cfg["out"], "history.csv", history_csv(history))
            log.info("final loss %.6f", history[-1][1])
            return 0
        if args.command == "cv":
            metrics = cross_validate(corpus, template, config)
            _write(cfg["out"], "metrics.csv", metrics.to_csv())
            _write(cfg["out"], "metrics.json", metrics.to_json())
            sys.stdout.write(f"mean test accuracy {metrics.accuracy:.4f}, "
                             f"mean train accuracy {metrics.train_accuracy:.4f}\n")
            return 0
    except UsageError as exc:
        sys.stderr.write(f"lrnn: error: {exc}\n")
        return 1
    except LrnnError as exc:
        sys.stderr.write(f"lrnn: {exc}\n")
        return 2
    return 1


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
