"""Command-line entry point.

Option values resolve as: command-line flag, then ``--config`` file
(``key=value`` lines, keys spelled like the long flag without dashes, e.g.
``neg_threshold=0.2``), then built-in default. The seed additionally falls
back to the ``GLPROTEIN_SEED`` environment variable before the default.

Exit codes: 0 success, 1 usage error, 2 data error.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path

import numpy as np
import torch

from . import contacts, serialization
from .encodings import DistanceEncoder, EncodingError, distance_encoding
from .gradcheck import check_gradients
from .model import ModelConfig, ModelError, NonFiniteError, ProteinModel, TrainingConfig
from .protein_io import (
    Corpus,
    ProteinIOError,
    coord_format_for,
    parse_ca_coords,
    parse_fasta,
    read_manifest,
    read_pdb_record,
    tokenize,
    write_corpus,
)
from .serialization import FormatError
from .structure_align import AlignmentError, Scoring, needleman_wunsch, tm_score
from .triplet_miner import MinerConfig, MiningError, build_index, load_index, save_index
from .training import Pretrainer, write_trace

log = logging.getLogger("glprotein")

EXIT_OK, EXIT_USAGE, EXIT_DATA = 0, 1, 2
GRADCHECK_TOLERANCE = 1e-4


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


_DEFAULTS: dict[str, dict[str, object]] = {}


def _opt(parser, flag, default, help, type=None, **kw):
    """Register an overridable option; the real default is applied after config resolution."""
    dest = flag.lstrip("-").replace("-", "_")
    _DEFAULTS.setdefault(parser.prog, {})[dest] = default
    parser.add_argument(flag, dest=dest, type=type, default=None, help=f"{help} (default: {default})", **kw)


def _common(p):
    p.add_argument("--config", type=Path, help="key=value file overriding defaults (default: none)")
    _opt(p, "--seed", 0, "random seed; falls back to $GLPROTEIN_SEED", type=int)
    _opt(p, "--threads", 1, "worker threads for mining and torch", type=int)
    p.add_argument("-v", "--verbose", action="count", default=0, help="more logging (default: warnings only)")


def _scoring_opts(p):
    _opt(p, "--match", 2.0, "alignment match score", type=float)
    _opt(p, "--mismatch", -1.0, "alignment mismatch score", type=float)
    _opt(p, "--gap", -2.0, "alignment linear gap score", type=float)


def _model_opts(p):
    d = ModelConfig()
    _opt(p, "--d-model", d.d_model, "hidden size D", type=int)
    _opt(p, "--heads", d.heads, "attention heads", type=int)
    _opt(p, "--n-encoder", d.n_encoder, "encoder blocks", type=int)
    _opt(p, "--n-decoder", d.n_decoder, "decoder layers", type=int)
    _opt(p, "--mol-dim", d.mol_dim, "substructure embedding size d", type=int)
    _opt(p, "--kernels", d.num_kernels, "Gaussian kernels K", type=int)
    _opt(p, "--max-len", d.max_len, "longest sequence (positional table size)", type=int)


def build_parser() -> argparse.ArgumentParser:
    _DEFAULTS.clear()
    parser = _Parser(prog="glprotein", description="Structure-aware protein language model toolkit.")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)
    sub.required = True

    p = sub.add_parser("align", help="Needleman-Wunsch residue pairing of two proteins")
    p.add_argument("a", type=Path, help="PDB or FASTA file")
    p.add_argument("b", type=Path, help="PDB or FASTA file")
    _scoring_opts(p)
    _common(p)

    p = sub.add_parser("tmscore", help="TM-score of B against A (normalized by A)")
    p.add_argument("a", type=Path, help="native/template PDB")
    p.add_argument("b", type=Path, help="model PDB")
    _scoring_opts(p)
    _common(p)

    p = sub.add_parser("mine", help="mine triplets into an index file")
    _opt(p, "--corpus", None, "corpus manifest (id<TAB>seq_path<TAB>coord_path)", type=Path)
    _opt(p, "--k", 4, "positives (and negatives) per anchor", type=int)
    _opt(p, "--n", 32, "negative candidate pool size", type=int)
    _opt(p, "--threshold", 0.2, "negative TM-score threshold (neg_threshold)", type=float)
    _opt(p, "--out", None, "index TSV to write", type=Path)
    _common(p)

    p = sub.add_parser("encode", help="distance-encoding bias matrix for one structure")
    _opt(p, "--coords", None, "coordinate file (PDB or TSV)", type=Path)
    _opt(p, "--seq", None, "FASTA file; optional when --coords is a PDB file", type=Path)
    _opt(p, "--id", None, "FASTA record to use; first record if omitted")
    _opt(p, "--params", None, "checkpoint whose distance encoder to use; fresh init from --seed if omitted", type=Path)
    _opt(p, "--kernels", ModelConfig().num_kernels, "Gaussian kernels K when no checkpoint is given", type=int)
    _opt(p, "--out", None, "binary matrix output", type=Path)
    _opt(p, "--tsv", None, "optional TSV debug dump", type=Path)
    _common(p)

    p = sub.add_parser("pretrain", help="joint masked-LM + triplet pre-training")
    _opt(p, "--corpus", None, "corpus manifest", type=Path)
    _opt(p, "--index", None, "triplet index TSV (optional; no triplet term without it)", type=Path)
    _opt(p, "--out", None, "checkpoint stem (writes .json and .bin)", type=Path)
    _opt(p, "--log", None, "training log TSV", type=Path)
    t = TrainingConfig()
    _opt(p, "--steps", t.steps, "optimization steps", type=int)
    _opt(p, "--lr", t.lr, "learning rate", type=float)
    _opt(p, "--alpha", t.alpha, "triplet loss weight", type=float)
    _opt(p, "--epsilon", t.epsilon, "triplet margin", type=float)
    _opt(p, "--batch-size", t.batch_size, "sequences and triplets per step", type=int)
    _opt(p, "--optimizer", t.optimizer, "sgd or adam", choices=("sgd", "adam"))
    _model_opts(p)
    _common(p)

    p = sub.add_parser("probe", help="train a contact probe and report top-L precision")
    _opt(p, "--ckpt", None, "checkpoint stem from pretrain", type=Path)
    _opt(p, "--corpus", None, "corpus manifest of structures", type=Path)
    _opt(p, "--holdout", 0.2, "fraction of structures held out for evaluation", type=float)
    _opt(p, "--epochs", contacts.ProbeConfig().epochs, "probe training epochs", type=int)
    _opt(p, "--lr", contacts.ProbeConfig().lr, "probe learning rate", type=float)
    _opt(p, "--hidden", contacts.ProbeConfig().hidden, "probe hidden units", type=int)
    p.add_argument("--finetune", action="store_true", help="also update the backbone (default: frozen)")
    _opt(p, "--target", None, "protein whose probability matrix is written; first held-out if omitted")
    _opt(p, "--out", None, "binary probability matrix output", type=Path)
    _opt(p, "--metrics", None, "metrics TSV output (stdout if omitted)", type=Path)
    _opt(p, "--heatmap", None, "optional text heat-map dump of the matrix", type=Path)
    _common(p)

    p = sub.add_parser("gradcheck", help="finite-difference check of analytic gradients on a toy model")
    _opt(p, "--length", 12, "toy sequence length (<= 16)", type=int)
    _opt(p, "--step", 1e-5, "central-difference step", type=float)
    _common(p)

    p = sub.add_parser("synth", help="write a synthetic fold-family corpus")
    _opt(p, "--out", None, "output directory", type=Path)
    _opt(p, "--members", 10, "members per family", type=int)
    _opt(p, "--length", 40, "template length", type=int)
    _opt(p, "--format", "tsv", "coordinate format: tsv or pdb_atom", choices=("tsv", "pdb_atom"))
    _common(p)
    return parser


def _read_config(path: Path | None) -> dict[str, str]:
    if path is None:
        return {}
    out = {}
    for lineno, line in enumerate(path.read_text().splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{lineno}: expected key=value")
        key, value = (s.strip() for s in line.split("=", 1))
        out[key.replace("-", "_")] = value
    return out


def resolve(args: argparse.Namespace, parser: argparse.ArgumentParser) -> argparse.Namespace:
    sub = parser._subparsers._group_actions[0].choices[args.command]
    defaults = _DEFAULTS[sub.prog]
    config = _read_config(args.config)
    types = {a.dest: a.type for a in sub._actions}
    unknown = set(config) - set(defaults)
    if unknown:
        raise UsageError(f"unknown config key(s) for {args.command}: {', '.join(sorted(unknown))}")
    for dest, default in defaults.items():
        if getattr(args, dest) is not None:
            continue
        if dest in config:
            conv = types.get(dest) or str
            try:
                value = conv(config[dest])
            except (TypeError, ValueError):
                raise UsageError(f"config value for {dest} is invalid: {config[dest]!r}") from None
        elif dest == "seed" and os.environ.get("GLPROTEIN_SEED"):
            try:
                value = int(os.environ["GLPROTEIN_SEED"])
            except ValueError:
                raise UsageError("GLPROTEIN_SEED must be an integer") from None
        else:
            value = default
        setattr(args, dest, value)
    return args


def _require(args, *names):
    for name in names:
        if getattr(args, name) is None:
            raise UsageError(f"{args.command}: --{name.replace('_', '-')} is required")


def _load_structure(path: Path, pid: str | None = None):
    text = path.read_text()
    if coord_format_for(path) == "pdb_atom":
        return read_pdb_record(text, pid or path.stem)
    return parse_fasta(text)[0]


def _scoring(args) -> Scoring:
    return Scoring(args.match, args.mismatch, args.gap)


# --------------------------------------------------------------------------
# subcommands


def cmd_align(args, out):
    a, b = _load_structure(args.a), _load_structure(args.b)
    pairing = needleman_wunsch(a.sequence, b.sequence, _scoring(args))
    out.write(f"# score\t{pairing.score:g}\tpairs\t{len(pairing)}\n")
    for i, j in pairing.pairs:
        out.write(f"{i}\t{j}\t{a.sequence[i]}\t{b.sequence[j]}\n")


def cmd_tmscore(args, out):
    a, b = _load_structure(args.a), _load_structure(args.b)
    res = tm_score(a, b, _scoring(args))
    out.write(f"{res.score:.6f}\t{res.d0:.6f}\t{res.l_native}\t{res.l_aligned}\n")


def cmd_mine(args, out):
    _require(args, "corpus", "out")
    try:
        cfg = MinerConfig(args.k, args.n, args.threshold, args.seed)
    except MiningError as exc:
        raise UsageError(str(exc).replace("neg_threshold", "neg_threshold (--threshold)")) from None
    corpus, diags = read_manifest(args.corpus)
    index, shortages = build_index(corpus.structured(), cfg, threads=args.threads)
    save_index(index, args.out)
    for msg in diags + shortages:
        log.warning(msg)
    out.write(f"{len(index)} triplets written to {args.out}\n")


def cmd_encode(args, out):
    _require(args, "coords", "out")
    fmt = coord_format_for(args.coords)
    if args.seq is None:
        if fmt != "pdb_atom":
            raise UsageError("encode: --seq is required for TSV coordinates")
        rec = read_pdb_record(args.coords.read_text(), args.coords.stem)
    else:
        records = parse_fasta(args.seq.read_text())
        if args.id is None:
            rec = records[0]
        else:
            matches = [r for r in records if r.id == args.id]
            if not matches:
                raise ProteinIOError(f"{args.seq}: no record {args.id!r}")
            rec = matches[0]
    rows = parse_ca_coords(args.coords.read_text(), fmt)
    if len(rows) != len(rec):
        raise ProteinIOError(f"{len(rows)} coordinates for {len(rec)} residues")
    if args.params is not None:
        model, _ = serialization.load_checkpoint(args.params)
        enc = model.distance
    else:
        enc = DistanceEncoder(args.kernels, generator=torch.Generator().manual_seed(args.seed))
    phi = distance_encoding(np.array([xyz for _, xyz in rows]), tokenize(rec.sequence), enc)
    serialization.write_matrix(args.out, phi)
    if args.tsv:
        args.tsv.write_text(serialization.matrix_tsv(phi))
    out.write(f"wrote {phi.shape[0]}x{phi.shape[1]} matrix to {args.out}\n")


def cmd_pretrain(args, out):
    _require(args, "corpus", "out")
    try:
        mcfg = ModelConfig(d_model=args.d_model, heads=args.heads, n_encoder=args.n_encoder,
                           n_decoder=args.n_decoder, mol_dim=args.mol_dim, num_kernels=args.kernels,
                           max_len=args.max_len)
        cfg = TrainingConfig(alpha=args.alpha, epsilon=args.epsilon, lr=args.lr, steps=args.steps,
                             seed=args.seed, batch_size=args.batch_size, optimizer=args.optimizer, model=mcfg)
    except ModelError as exc:
        raise UsageError(str(exc)) from None
    corpus, diags = read_manifest(args.corpus)
    for msg in diags:
        log.warning(msg)
    index = load_index(args.index, corpus) if args.index else []
    trainer = Pretrainer(corpus, index, cfg)
    trainer.run(callback=lambda r: log.info("step %d mlm %.4f ptl %.4f total %.4f", r.step, r.mlm, r.ptl, r.total))
    serialization.save_checkpoint(trainer.model, args.out, cfg, seed=cfg.seed)
    if args.log:
        write_trace(trainer.trace, args.log)
    last = trainer.trace[-1] if trainer.trace else None
    if last:
        out.write(f"step\t{last.step}\tloss_mlm\t{last.mlm:.6f}\tloss_ptl\t{last.ptl:.6f}\tloss_total\t{last.total:.6f}\n")


def _heatmap(matrix) -> str:
    shades = " .:-=+*#%@"
    m = np.asarray(matrix)
    return "".join("".join(shades[min(9, int(v * 10))] for v in row) + "\n" for row in m)


def cmd_probe(args, out):
    _require(args, "ckpt", "corpus")
    if not 0.0 < args.holdout < 1.0:
        raise UsageError("--holdout must lie in (0, 1)")
    model, _ = serialization.load_checkpoint(args.ckpt)
    corpus, _ = read_manifest(args.corpus)
    records = list(corpus.structured())
    if len(records) < 2:
        raise ProteinIOError("probe needs at least 2 structures")
    order = np.random.default_rng(args.seed).permutation(len(records))
    n_test = max(1, int(round(args.holdout * len(records))))
    test = [records[i] for i in order[:n_test]]
    train = [records[i] for i in order[n_test:]]
    cfg = contacts.ProbeConfig(hidden=args.hidden, lr=args.lr, epochs=args.epochs, seed=args.seed, finetune=args.finetune)
    head, _ = contacts.train_probe(model, train, cfg)
    metrics = contacts.evaluate_probe(model, head, test)
    if args.metrics:
        args.metrics.write_text(metrics.to_tsv())
    else:
        out.write(metrics.to_tsv())
    if args.out:
        target = corpus[args.target] if args.target else test[0]
        with torch.no_grad():
            probs = contacts.probe_contacts(contacts.representations(model, target), head)
        serialization.write_matrix(args.out, probs)
        if args.heatmap:
            args.heatmap.write_text(_heatmap(probs))


def cmd_gradcheck(args, out):
    if not 2 <= args.length <= 16:
        raise UsageError("--length must lie in [2, 16]")
    reports = check_gradients(seed=args.seed, step=args.step, length=args.length)
    worst = max(r.max_rel_error for r in reports)
    for r in reports:
        out.write(f"{r.name}\t{r.size}\t{r.max_rel_error:.3e}\n")
    ok = worst < GRADCHECK_TOLERANCE
    out.write(f"max_rel_error\t{worst:.3e}\t{'PASS' if ok else 'FAIL'}\n")
    return EXIT_OK if ok else EXIT_DATA


def cmd_synth(args, out):
    from .synthetic import family_corpus

    _require(args, "out")
    corpus, _ = family_corpus(args.members, np.random.default_rng(args.seed), length=args.length)
    manifest = write_corpus(corpus, args.out, args.format)
    out.write(f"{len(corpus)} proteins; manifest {manifest}\n")


COMMANDS = {
    "align": cmd_align,
    "tmscore": cmd_tmscore,
    "mine": cmd_mine,
    "encode": cmd_encode,
    "pretrain": cmd_pretrain,
    "probe": cmd_probe,
    "gradcheck": cmd_gradcheck,
    "synth": cmd_synth,
}

DATA_ERRORS = (ProteinIOError, AlignmentError, MiningError, FormatError, EncodingError, ModelError,
               NonFiniteError, OSError, KeyError)


def dispatch(argv=None, out=None) -> int:
    out = out or sys.stdout
    parser = build_parser()
    try:
        args = resolve(parser.parse_args(argv), parser)
        if args.threads < 1:
            raise UsageError("--threads must be >= 1")
    except UsageError as exc:
        sys.stderr.write(f"usage error: {exc}\n")
        return EXIT_USAGE
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2), format="%(levelname)s %(message)s")
    torch.set_num_threads(args.threads)
    try:
        return COMMANDS[args.command](args, out) or EXIT_OK
    except UsageError as exc:
        sys.stderr.write(f"usage error: {exc}\n")
        return EXIT_USAGE
    except DATA_ERRORS as exc:
        sys.stderr.write(f"data error: {exc}\n")
        return EXIT_DATA


def main():
    sys.exit(dispatch())
