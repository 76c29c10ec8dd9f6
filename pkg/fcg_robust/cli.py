"""The ``fcg-robust`` command-line front end.

The pipeline is driven by one subcommand per stage::

    fcg-robust synth config.json corpus/
    fcg-robust extract corpus/ extracted/ --features meta,ldp
    fcg-robust collate extracted/ collated/ --scheme zero
    fcg-robust train collated/ config.json run/
    fcg-robust eval run/ shifted/ --report report.json
    fcg-robust adapt run/ shifted/ config.json adapted/ --method t3a
    fcg-robust report adapted/ other-run/ ...

Every run logs its resolved configuration and records, beside its outputs,
the configuration hash and the SHA-256 of every input (``run.json`` in
output directories, a ``"manifest"`` entry in single-file reports).

On failure a single JSON object ``{"error", "message", "details"}`` is
written to stderr and the exit status is 1.
"""

import argparse

import io

import json

import logging

import os

import sys

import time

from collections import OrderedDict

from six import iteritems

import fcg_robust

from fcg_robust.adapt import METHODS, KnnProbe, finetune, t3a_adapt, \
    tent_adapt

from fcg_robust.bench import SplitSpec, build_split, read_split, \
    sample_classes, spec_overlap, verify_disjoint, write_split

from fcg_robust.collate import SCHEMES, collate_dataset

from fcg_robust.config import RunConfig

from fcg_robust.corpus import CorpusIndex, scan_corpus

from fcg_robust.dataset import Dataset

from fcg_robust.diagram import render_png

from fcg_robust.errors import ConfigError, EmptySplitError, FcgError

from fcg_robust.extract import extract_corpus

from fcg_robust.gnn import MANIFEST_FILE, load_checkpoint, save_checkpoint

from fcg_robust.hashing import sha256_path

from fcg_robust.synthetic import generate_synthetic_corpus

from fcg_robust.train import EvalReport, Split, accuracy_table, class_of, \
    compare_to_baseline, evaluate, predict_labels, render_table, \
    stratified_split, train_upstream


logger = logging.getLogger(__name__)

"""Name of the provenance record written into output directories."""
RUN_FILE = "run.json"

CHECKPOINT_DIR = "checkpoint"

WORKERS_ENV = "FCG_ROBUST_WORKERS"


def write_json(d, path):
    with io.open(path, "w", encoding="utf-8") as f:
        f.write(json.dumps(d, indent=1))
        f.write(u"\n")


def read_json(path):
    try:
        with io.open(path, "r", encoding="utf-8") as f:
            return json.load(f, object_pairs_hook=OrderedDict)
    except ValueError as e:
        raise FcgError("{} is not valid JSON: {}".format(path, e))


def run_manifest(command, config, inputs):
    """Provenance of a run: configuration hash and input digests.

    Parameters
    ----------
    command : str
    config : :py:class:`~fcg_robust.config.RunConfig`
    inputs : {name: path}
        Files or directories read by the run.
    """
    return OrderedDict([
        ("command", command),
        ("version", fcg_robust.__version__),
        ("config_hash", config.config_hash()),
        ("config", config.to_json()),
        ("inputs", OrderedDict(
            (name, OrderedDict([("path", path),
                                ("sha256", sha256_path(path,
                                                       ignore=(RUN_FILE,)))]))
            for name, path in iteritems(inputs))),
    ])


def write_run(out_dir, command, config, inputs):
    if not os.path.isdir(out_dir):
        os.makedirs(out_dir)
    write_json(run_manifest(command, config, inputs),
               os.path.join(out_dir, RUN_FILE))


def load_config(args):
    """The run configuration with command-line overrides applied."""
    path = getattr(args, "config", None)
    config = RunConfig.default() if path is None else RunConfig.from_json(path)
    values = config.to_json()
    for flag, section, key in (("features", "extract", "features"),
                               ("scheme", "collate", "scheme"),
                               ("method", "adapt", "method")):
        if getattr(args, flag, None) is not None:
            values[section][key] = getattr(args, flag)
    return RunConfig.from_dict(values)


def get_workers(flag):
    """The worker count: ``--workers``, else $FCG_ROBUST_WORKERS, else 1."""
    if flag is not None:
        workers = flag
    else:
        value = os.environ.get(WORKERS_ENV, "1")
        try:
            workers = int(value)
        except ValueError:
            raise ConfigError(["{} must be an integer, got {!r}".format(
                WORKERS_ENV, value)])
    if workers < 1:
        raise ConfigError(["worker count must be >= 1, got {}".format(
            workers)])
    return workers


def open_index(path):
    """A corpus index from a corpus directory or a saved index file."""
    if os.path.isdir(path):
        return scan_corpus(path)
    return CorpusIndex.load(path)


def read_ids(path):
    """Sample ids from a JSON list, a split file or a training run's
    ``splits.json`` (whose test ids are taken)."""
    d = read_json(path)
    if isinstance(d, list):
        return list(d)
    if "test" in d:
        return list(d["test"])
    return list(sample_classes(read_split(path)))


def checkpoint_dir(path):
    """Accept either a checkpoint directory or a run directory holding one."""
    nested = os.path.join(path, CHECKPOINT_DIR)
    if not os.path.isfile(os.path.join(path, MANIFEST_FILE)) and \
            os.path.isdir(nested):
        return nested
    return path


def labelled_graphs(dataset, class_key, split_path=None, ids=None):
    """Graphs of a dataset with their class names.

    With a split file, classes are its class ids (in file order) and only
    its samples are used; otherwise classes follow ``class_key``.

    Returns
    -------
    (graphs, classes, class_names)
    """
    if split_path is not None:
        split = read_split(split_path)
        classes_by_id = sample_classes(split)
        sample_ids = sorted(classes_by_id)
        class_names = list(split)
    else:
        classes_by_id = None
        sample_ids = sorted(e.sample_id for e in dataset.entries)
        class_names = None
    if ids is not None:
        wanted = set(ids)
        sample_ids = [s for s in sample_ids if s in wanted]
    missing = [s for s in sample_ids if s not in dataset]
    if missing:
        raise FcgError("{} samples are not in dataset {} (first: {})".format(
            len(missing), dataset.directory, missing[0]))

    graphs = dataset.load_all(sample_ids)
    if classes_by_id is not None:
        classes = [classes_by_id[g.sample_id] for g in graphs]
    else:
        classes = [class_of(g, class_key) for g in graphs]
        class_names = sorted(set(classes))
    return graphs, classes, class_names


def split_by_ids(graphs, classes, class_names, ids):
    ids = set(ids)
    chosen = [(g, c) for g, c in zip(graphs, classes) if g.sample_id in ids]
    return Split.build([g for g, _ in chosen], [c for _, c in chosen],
                       class_names)


def tagged_report(report, model, dataset, manifest):
    d = report.to_json()
    d["model"] = model
    d["dataset"] = dataset
    d["manifest"] = manifest
    return d


def default_tag(path):
    return os.path.basename(os.path.normpath(path))


def cmd_synth(args, config):
    synthetic = config.synthetic_config()
    index = generate_synthetic_corpus(synthetic, args.out,
                                      get_workers(args.workers),
                                      config.progress or args.verbose > 0)
    index.save(os.path.join(args.out, "corpus_index.json"))
    write_run(args.out, "synth", config, {})
    sys.stdout.write("Generated {} samples in {}\n".format(len(index),
                                                          args.out))


def cmd_extract(args, config):
    features = config.feature_config()
    index = open_index(args.corpus)
    if index.skipped:
        logger.warning("{} corpus samples were skipped".format(index.skipped))
    entries = extract_corpus(index, args.out, features, args.embeddings,
                             get_workers(args.workers),
                             config.progress or args.verbose > 0)
    inputs = OrderedDict([("corpus", args.corpus)])
    if args.embeddings is not None:
        inputs["embeddings"] = args.embeddings
    write_run(args.out, "extract", config, inputs)
    sys.stdout.write("Extracted {} samples into {}\n".format(len(entries),
                                                            args.out))


def cmd_collate(args, config):
    scheme = config.scheme
    reports = collate_dataset(args.data, args.out, scheme,
                              config.progress or args.verbose > 0)
    write_run(args.out, "collate", config, {"data": args.data})
    removed = sum(len(r.nodes_removed) for r in reports)
    sys.stdout.write("Collated {} samples with {} ({} nodes removed)\n"
                     .format(len(reports), scheme, removed))


def cmd_split(args, config):
    index = open_index(args.index)
    spec = SplitSpec.load(args.spec)
    excluded = []
    inputs = OrderedDict([("index", args.index), ("spec", args.spec)])
    for num, path in enumerate(args.exclude or ()):
        d = read_json(path)
        if isinstance(d, list):
            excluded.append(OrderedDict([("excluded", list(d))]))
        else:
            excluded.append(read_split(path))
        inputs["exclude{}".format(num)] = path
    exclude_ids = set()
    for other in excluded:
        exclude_ids.update(sample_classes(other))

    split = build_split(index, spec, exclude_ids)
    if not os.path.isdir(args.out):
        os.makedirs(args.out)
    write_split(split, os.path.join(args.out, "split.json"), spec)
    audit = verify_disjoint([split] + excluded, index)
    for num, path in enumerate(args.exclude or ()):
        d = read_json(path)
        if isinstance(d, dict) and "spec" in d:
            audit.setdefault("spec_overlaps", []).append(OrderedDict([
                ("b", num + 1),
                ("overlap", spec_overlap(spec,
                                         SplitSpec.from_json(d["spec"]))),
            ]))
    write_json(audit, os.path.join(args.out, "audit.json"))
    write_run(args.out, "split", config, inputs)
    sys.stdout.write("Built {} split: {} classes x {} samples; disjoint: {}\n"
                     .format(spec.variant, len(split), spec.per_class,
                             "yes" if audit["pass"] else "NO"))


def cmd_train(args, config):
    train_config = config.train_config()
    dataset = Dataset(args.data)
    graphs, classes, class_names = labelled_graphs(
        dataset, train_config.class_key, args.split)
    if not graphs:
        raise EmptySplitError("dataset {} has no samples to train on".format(
            args.data))
    train_ids, val_ids, test_ids = stratified_split(
        [g.sample_id for g in graphs], classes, args.ratios,
        train_config.seed)
    train = split_by_ids(graphs, classes, class_names, train_ids)
    val = split_by_ids(graphs, classes, class_names, val_ids)
    test = split_by_ids(graphs, classes, class_names, test_ids)

    model_config = config.model_config(graphs[0].dim, len(class_names))
    state, history = train_upstream(train, val, model_config, train_config,
                                    class_names)

    inputs = OrderedDict([("data", args.data)])
    if args.split is not None:
        inputs["split"] = args.split
    write_run(args.out, "train", config, inputs)
    save_checkpoint(state, os.path.join(args.out, CHECKPOINT_DIR))
    write_json(history, os.path.join(args.out, "history.json"))
    write_json(OrderedDict([("class_names", class_names),
                            ("train", train_ids),
                            ("val", val_ids),
                            ("test", test_ids)]),
               os.path.join(args.out, "splits.json"))
    if len(test):
        report = evaluate(state, test, config.batch_size)
        write_json(tagged_report(report, args.model_tag or
                                 model_config.backbone,
                                 default_tag(args.data),
                                 run_manifest("train", config, inputs)),
                   os.path.join(args.out, "report.json"))
        sys.stdout.write("Test accuracy {:.4f} on {} samples\n".format(
            report.accuracy, report.n))


def cmd_eval(args, config):
    ckpt = checkpoint_dir(args.checkpoint)
    state = load_checkpoint(ckpt)
    dataset = Dataset(args.data)
    ids = read_ids(args.ids) if args.ids is not None else None
    graphs, classes, _ = labelled_graphs(
        dataset, config.train_config().class_key, args.split, ids)
    split = Split.build(graphs, classes, state.class_names)
    report = evaluate(state, split, config.batch_size)

    inputs = OrderedDict([("checkpoint", ckpt), ("data", args.data)])
    for name in ("split", "ids"):
        if getattr(args, name) is not None:
            inputs[name] = getattr(args, name)
    if args.report is not None:
        write_json(tagged_report(report, args.model_tag or
                                 state.config.backbone,
                                 args.dataset_tag or default_tag(args.data),
                                 run_manifest("eval", config, inputs)),
                   args.report)
    sys.stdout.write("Accuracy {:.4f} on {} samples (macro F1 {:.4f})\n"
                     .format(report.accuracy, report.n, report.macro_f1))


def _target_report(state, graphs, classes, predicted):
    """An eval report of unsupervised predictions, when labels allow."""
    unknown = sorted(set(classes).difference(state.class_names))
    if unknown:
        logger.warning("Target classes {} are unknown to the model; no "
                       "accuracy reported".format(unknown))
        return None
    index = {name: k for k, name in enumerate(state.class_names)}
    return EvalReport([index[c] for c in classes], predicted,
                      state.class_names, [g.sample_id for g in graphs])


def cmd_adapt(args, config):
    adapt_config = config.adapt_config()
    ckpt = checkpoint_dir(args.checkpoint)
    state = load_checkpoint(ckpt)
    dataset = Dataset(args.data)
    ids = read_ids(args.ids) if args.ids is not None else None
    graphs, classes, class_names = labelled_graphs(
        dataset, config.train_config().class_key, args.split, ids)

    inputs = OrderedDict([("checkpoint", ckpt), ("data", args.data),
                          ("config", args.config)])
    for name in ("split", "ids"):
        if getattr(args, name) is not None:
            inputs[name] = getattr(args, name)
    write_run(args.out, "adapt", config, inputs)
    manifest = run_manifest("adapt", config, inputs)
    model_tag = args.model_tag or "{}+{}".format(state.config.backbone,
                                                 adapt_config.method)
    dataset_tag = args.dataset_tag or default_tag(args.data)

    before = time.time()
    report = None
    if adapt_config.method in ("t3a", "tent"):
        if adapt_config.method == "t3a":
            predicted, t3a = t3a_adapt(state, graphs,
                                       adapt_config.support_size,
                                       adapt_config.batch_size)
            write_json(t3a.support_sizes(),
                       os.path.join(args.out, "support_sizes.json"))
        else:
            adapted, predicted = tent_adapt(
                state, graphs, adapt_config.tent_lr,
                adapt_config.tent_steps_per_batch, adapt_config.batch_size)
            save_checkpoint(adapted, os.path.join(args.out, CHECKPOINT_DIR))
        report = _target_report(state, graphs, classes, predicted)
        names = state.class_names
    else:
        train_ids, val_ids, test_ids = stratified_split(
            [g.sample_id for g in graphs], classes, args.ratios,
            adapt_config.seed)
        train = split_by_ids(graphs, classes, class_names, train_ids)
        val = split_by_ids(graphs, classes, class_names, val_ids)
        test = split_by_ids(graphs, classes, class_names, test_ids)
        write_json(OrderedDict([("class_names", class_names),
                                ("train", train_ids), ("val", val_ids),
                                ("test", test_ids)]),
                   os.path.join(args.out, "splits.json"))
        if adapt_config.method == "knn":
            # Validation samples join the labelled neighbours.
            labelled = split_by_ids(graphs, classes, class_names,
                                    train_ids + val_ids)
            probe = KnnProbe(state, labelled, adapt_config.k, class_names)
            predicted = probe.predict(test.graphs) if len(test) else []
        else:
            adapted, history = finetune(state, train, val, adapt_config,
                                        class_names)
            save_checkpoint(adapted, os.path.join(args.out, CHECKPOINT_DIR))
            write_json(history, os.path.join(args.out, "history.json"))
            predicted = (predict_labels(adapted, test.graphs,
                                        config.batch_size)
                         if len(test) else [])
        graphs = test.graphs
        if len(test):
            report = EvalReport(test.labels, predicted, class_names,
                                [g.sample_id for g in graphs])
        names = class_names
    after = time.time()
    logger.info("Adapted with {} in {:.2f}s".format(adapt_config.method,
                                                    after - before))

    write_json([OrderedDict([("sample_id", g.sample_id),
                             ("predicted", names[int(p)])])
                for g, p in zip(graphs, predicted)],
               os.path.join(args.out, "predictions.json"))
    if report is not None:
        write_json(tagged_report(report, model_tag, dataset_tag, manifest),
                   os.path.join(args.out, "report.json"))
        sys.stdout.write("{} accuracy {:.4f} on {} samples\n".format(
            adapt_config.method, report.accuracy, report.n))
    else:
        sys.stdout.write("{}: {} predictions written\n".format(
            adapt_config.method, len(predicted)))


def load_reports(paths):
    """Eval reports from report files or directories holding
    ``report.json``."""
    runs = []
    for path in paths:
        if os.path.isdir(path):
            path = os.path.join(path, "report.json")
        d = read_json(path)
        for key in ("model", "dataset", "accuracy"):
            if key not in d:
                raise FcgError("{} is not a tagged eval report (no {!r})"
                               .format(path, key))
        runs.append(d)
    return runs


def cmd_report(args, config):
    runs = load_reports(args.runs)
    table = accuracy_table(runs)
    if args.baseline is not None:
        table = compare_to_baseline(table, args.baseline)
    if args.format == "json":
        text = json.dumps(table, indent=1) + "\n"
    else:
        text = render_table(table)
    if args.out is not None:
        with io.open(args.out, "w", encoding="utf-8") as f:
            f.write(text)
    else:
        sys.stdout.write(text)


def cmd_diagram(args, config):
    dataset = Dataset(args.data)
    if args.sample not in dataset:
        raise FcgError("sample {} is not in dataset {}".format(
            args.sample, args.data))
    g = dataset.load(args.sample)
    width, height = render_png(g, args.output, args.width, args.height,
                               args.transparent,
                               show_pruned=not args.no_pruned)
    sys.stdout.write("Wrote {}x{} diagram of {} to {}\n".format(
        width, height, args.sample, args.output))


COMMANDS = OrderedDict([
    ("extract", cmd_extract),
    ("collate", cmd_collate),
    ("split", cmd_split),
    ("train", cmd_train),
    ("eval", cmd_eval),
    ("adapt", cmd_adapt),
    ("synth", cmd_synth),
    ("report", cmd_report),
    ("diagram", cmd_diagram),
])


def build_parser():
    parser = argparse.ArgumentParser(
        prog="fcg-robust",
        description="Robust malware classification over function call "
                    "graphs: feature extraction, collation, GNN training, "
                    "adaptation and shifted benchmark splits.")
    parser.add_argument("--verbose", "-v", action="count", default=0,
                        help="Show verbose information (twice for debug "
                             "output).")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND")
    sub.required = True

    def config_option(p):
        p.add_argument("--config", "-c", metavar="CONFIG",
                       help="A run configuration (JSON).")

    def workers_option(p):
        p.add_argument("--workers", "-j", type=int, metavar="N",
                       help="Worker processes (default ${} or 1).".format(
                           WORKERS_ENV))

    def ratios_option(p):
        p.add_argument("--ratios", type=float, nargs=3,
                       default=[0.7, 0.1, 0.2],
                       metavar=("TRAIN", "VAL", "TEST"),
                       help="Stratified split ratios.")

    def tag_options(p):
        p.add_argument("--model-tag", metavar="NAME",
                       help="Model name recorded in the report.")
        p.add_argument("--dataset-tag", metavar="NAME",
                       help="Dataset name recorded in the report.")

    def selection_options(p):
        p.add_argument("--split", metavar="SPLIT",
                       help="A split file whose class ids label the "
                            "samples.")
        p.add_argument("--ids", metavar="IDS",
                       help="Restrict to these sample ids (JSON list, split "
                            "file, or a run's splits.json for its test "
                            "ids).")

    p = sub.add_parser("extract", help="Featurise a corpus.")
    p.add_argument("corpus", metavar="CORPUS",
                   help="Corpus directory or saved corpus index.")
    p.add_argument("out", metavar="OUT", help="Output dataset directory.")
    p.add_argument("--features", "-f", metavar="FAMILIES",
                   help="Feature families, e.g. meta,llm,ldp.")
    p.add_argument("--embeddings", "-e", metavar="DIR",
                   help="Directory of <sample_id>.emb code embeddings.")
    config_option(p)
    workers_option(p)

    p = sub.add_parser("collate", help="Collate partial features.")
    p.add_argument("data", metavar="DATA", help="Input dataset directory.")
    p.add_argument("out", metavar="OUT", help="Output dataset directory.")
    p.add_argument("--scheme", "-s", choices=SCHEMES)
    config_option(p)

    p = sub.add_parser("split", help="Build a benchmark split.")
    p.add_argument("index", metavar="INDEX",
                   help="Corpus directory or saved corpus index.")
    p.add_argument("spec", metavar="SPEC", help="Split spec (JSON).")
    p.add_argument("out", metavar="OUT", help="Output directory.")
    p.add_argument("--exclude", "-x", metavar="IDS", action="append",
                   help="Split file or JSON id list whose samples may not "
                        "be drawn (repeatable).")
    config_option(p)

    p = sub.add_parser("train", help="Train a graph classifier.")
    p.add_argument("data", metavar="DATA", help="Collated dataset directory.")
    p.add_argument("config", metavar="CONFIG",
                   help="A run configuration (JSON).")
    p.add_argument("out", metavar="OUT", help="Output run directory.")
    p.add_argument("--split", metavar="SPLIT",
                   help="A split file whose class ids label the samples.")
    ratios_option(p)
    p.add_argument("--model-tag", metavar="NAME",
                   help="Model name recorded in the test report.")

    p = sub.add_parser("eval", help="Evaluate a checkpoint.")
    p.add_argument("checkpoint", metavar="CHECKPOINT",
                   help="Checkpoint or training run directory.")
    p.add_argument("data", metavar="DATA", help="Collated dataset directory.")
    p.add_argument("--report", "-r", metavar="REPORT",
                   help="Write the evaluation report (JSON) here.")
    selection_options(p)
    tag_options(p)
    config_option(p)

    p = sub.add_parser("adapt", help="Adapt a checkpoint to a target.")
    p.add_argument("checkpoint", metavar="CHECKPOINT",
                   help="Checkpoint or training run directory.")
    p.add_argument("data", metavar="DATA", help="Target dataset directory.")
    p.add_argument("config", metavar="CONFIG",
                   help="A run configuration (JSON).")
    p.add_argument("out", metavar="OUT", help="Output run directory.")
    p.add_argument("--method", "-m", choices=METHODS)
    selection_options(p)
    ratios_option(p)
    tag_options(p)

    p = sub.add_parser("synth", help="Generate a synthetic corpus.")
    p.add_argument("config", metavar="CONFIG",
                   help="A run configuration (JSON).")
    p.add_argument("out", metavar="OUT", help="Corpus directory.")
    workers_option(p)

    p = sub.add_parser("report", help="Tabulate eval reports.")
    p.add_argument("runs", metavar="RUN", nargs="+",
                   help="Tagged report files or run directories.")
    p.add_argument("--format", choices=("text", "json"), default="text")
    p.add_argument("--out", "-o", metavar="FILE")
    p.add_argument("--baseline", "-b", metavar="MODEL",
                   help="Show each cell's ratio to this model's mean and "
                        "mark cells below it with *.")

    p = sub.add_parser("diagram", help="Draw a collation diagram.")
    p.add_argument("data", metavar="DATA", help="Dataset directory.")
    p.add_argument("sample", metavar="SAMPLE", help="Sample id.")
    p.add_argument("output", metavar="OUTPUT", help="The output PNG file.")
    p.add_argument("width", metavar="WIDTH", nargs="?", default=1000,
                   type=int, help="The width of the output image in pixels.")
    p.add_argument("height", metavar="HEIGHT", nargs="?", type=int,
                   help="The height of the output image in pixels.")
    p.add_argument("--transparent", "-t", action="store_true",
                   help="Generate a transparent PNG.")
    p.add_argument("--no-pruned", "-P", action="store_true",
                   help="Draw nodes removed by prune opaque.")
    config_option(p)

    return parser


def report_error(e):
    sys.stderr.write(json.dumps(OrderedDict([
        ("error", type(e).__name__),
        ("message", str(e)),
        ("details", e.details() if isinstance(e, FcgError) else {}),
    ])))
    sys.stderr.write("\n")


def main(argv=sys.argv):
    parser = build_parser()
    args = parser.parse_args(argv[1:])

    if args.verbose >= 2:
        logging.basicConfig(level=logging.DEBUG)
    elif args.verbose >= 1:
        logging.basicConfig(level=logging.INFO)

    try:
        config = load_config(args)
        logger.info("Run configuration: {}".format(config.dumps()))
        COMMANDS[args.command](args, config)
    except (FcgError, IOError, OSError) as e:
        report_error(e)
        return 1
    return 0


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main(sys.argv))
