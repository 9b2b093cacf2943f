"""Experiment commands: PMI construction, multi-seed training, evaluation, reports.

Output directory layout::

    dataset.json            dataset cache
    pmi.bin, pmi.tsv        PMI matrix (binary + inspection export)
    pmi_summary.tsv         coverage, pair count, PMI histogram
    models/seed<S>.bin      trained parameters
    traces/seed<S>.tsv      per-epoch training trace
    manifest.json           resolved config, config hash, per-seed validation MRR
    eval/                   per-seed and aggregate metric reports
    intrusion/              word-intrusion tasks, answer key, manual scores
    report/                 figures and summary tables
"""

import hashlib
import itertools
import json
import logging
import os
import time
from concurrent.futures import ProcessPoolExecutor

import numpy as np

from . import evaluation as ev
from .config import dump_config
from .errors import CompatibilityError, ConfigError, DataError, DivergenceError
from .kg_data import (extract_cooccurrences, load_dataset, load_dataset_cache,
                      read_textual_triples, save_dataset)
from .model import TrainTrace, load_model, save_model, train
from .pmi import compute_pmi, export_pmi_tsv, load_pmi, save_pmi

logger = logging.getLogger(__name__)


def _out(cfg, *parts):
    path = os.path.join(cfg.paths.output_dir, *parts)
    os.makedirs(os.path.dirname(path), exist_ok=True)
    return path


def _file_digest(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def get_dataset(cfg):
    """Load splits, reusing ``dataset.json`` when its source digests still match."""
    cfg.require_inputs("train", "valid", "test")
    sources = {name: _file_digest(getattr(cfg.paths, name)) for name in ("train", "valid", "test")}
    cache = os.path.join(cfg.paths.output_dir, "dataset.json")
    stamp = cache + ".sources"
    if os.path.exists(cache) and os.path.exists(stamp):
        with open(stamp, encoding="utf-8") as fh:
            if json.load(fh) == sources:
                return load_dataset_cache(cache)
    dataset = load_dataset(cfg.paths.train, cfg.paths.valid, cfg.paths.test)
    save_dataset(dataset, _out(cfg, "dataset.json"))
    with open(stamp, "w", encoding="utf-8") as fh:
        json.dump(sources, fh, sort_keys=True)
    logger.info("dataset: %s", dataset.describe())
    return dataset


def _histogram(values, bins=20):
    counts, edges = np.histogram(values, bins=bins)
    return list(zip(edges[:-1].tolist(), edges[1:].tolist(), counts.tolist()))


def cmd_pmi(cfg):
    """Extract entity co-occurrences from the textual triples and persist PMI."""
    cfg.require_inputs("train", "valid", "test", "textual")
    dataset = get_dataset(cfg)
    records, skipped = extract_cooccurrences(read_textual_triples(cfg.paths.textual),
                                             dataset.entities)
    if not records:
        raise DataError(f"no co-occurrences found in {cfg.paths.textual}")
    pmi = compute_pmi(records, dataset.n_entities, cfg.pmi.smoothing, cfg.pmi.clip_negative)
    path = cfg.pmi_path
    os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
    save_pmi(pmi, path)
    export_pmi_tsv(pmi, os.path.splitext(path)[0] + ".tsv", dataset.entities.names)
    covered = int(np.count_nonzero(pmi.marginal))
    summary = {"entities": dataset.n_entities, "entities_covered": covered,
               "pairs": len(pmi), "skipped_textual_triples": skipped,
               "pair_mass": pmi.total}
    with open(_out(cfg, "pmi_summary.tsv"), "w", encoding="utf-8") as fh:
        for key, value in summary.items():
            fh.write(f"{key}\t{value}\n")
        for lo, hi, count in _histogram(pmi.values):
            fh.write(f"hist\t{lo!r}\t{hi!r}\t{count}\n")
    logger.info("PMI: %d pairs over %d/%d entities", len(pmi), covered, dataset.n_entities)
    return summary


def read_pmi_summary(path):
    summary, hist = {}, []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            f = line.rstrip("\n").split("\t")
            if f[0] == "hist":
                hist.append((float(f[1]), float(f[2]), int(f[3])))
            else:
                summary[f[0]] = float(f[1]) if "." in f[1] or "e" in f[1] else int(f[1])
    return summary, hist


def _load_pmi_for(cfg, required):
    path = cfg.pmi_path
    if os.path.exists(path):
        return load_pmi(path)
    if required:
        raise ConfigError(f"PMI file {path} not found; run the 'pmi' command first")
    return None


def _train_one(cfg, seed):
    dataset = get_dataset(cfg)
    pmi = _load_pmi_for(cfg, required=cfg.train.lambda_c > 0)
    tc = type(cfg.train).from_dict({**cfg.train.to_dict(), "seed": seed})
    start = time.time()
    try:
        model, trace = train(dataset, pmi if tc.lambda_c > 0 else None, tc)
    except DivergenceError as exc:
        raise DivergenceError(exc.epoch, f"seed {seed}") from None
    model_path = _out(cfg, "models", f"seed{seed}.bin")
    save_model(model, model_path, tc, dataset.fingerprint())
    trace_path = _out(cfg, "traces", f"seed{seed}.tsv")
    trace.write(trace_path)
    valid_mrr = ev.link_prediction(model, dataset, "valid").mrr
    logger.info("seed %d: %d epochs, converged=%s, valid MRR %.3f (%.1fs)", seed,
                len(trace.rows), trace.converged, valid_mrr, time.time() - start)
    return {"seed": seed, "model": os.path.relpath(model_path, cfg.paths.output_dir),
            "trace": os.path.relpath(trace_path, cfg.paths.output_dir),
            "valid_mrr": valid_mrr, "epochs": len(trace.rows), "converged": trace.converged}


def cmd_train(cfg):
    """Train ``num_seeds`` models and write the run manifest."""
    cfg.require_inputs("train", "valid", "test")
    dataset = get_dataset(cfg)
    if cfg.train.lambda_c > 0:
        _load_pmi_for(cfg, required=True)
    seeds = [cfg.seed_base + i for i in range(cfg.num_seeds)]
    if cfg.workers > 1 and len(seeds) > 1:
        with ProcessPoolExecutor(max_workers=min(cfg.workers, len(seeds))) as pool:
            runs = list(pool.map(_train_one, [cfg] * len(seeds), seeds))
    else:
        runs = [_train_one(cfg, s) for s in seeds]
    manifest = {"config": cfg.to_dict(), "config_hash": cfg.training_hash(),
                "vocab_fingerprint": dataset.fingerprint(),
                "created": time.strftime("%Y-%m-%dT%H:%M:%S"), "runs": runs}
    with open(_out(cfg, "manifest.json"), "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
    dump_config(cfg, _out(cfg, "config.resolved.yaml"))
    return manifest


def read_manifest(cfg):
    path = os.path.join(cfg.paths.output_dir, "manifest.json")
    if not os.path.exists(path):
        return None
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)


def check_manifest(cfg, manifest):
    if manifest is not None and manifest["config_hash"] != cfg.training_hash():
        raise ConfigError("supplied config does not match the training manifest "
                          f"({cfg.training_hash()} != {manifest['config_hash']})")


def _model_paths(cfg, manifest, model_paths):
    if model_paths:
        return list(model_paths)
    if manifest is None:
        raise ConfigError(f"no manifest in {cfg.paths.output_dir}; run 'train' or pass model paths")
    return [os.path.join(cfg.paths.output_dir, r["model"]) for r in manifest["runs"]]


def load_compatible_model(path, dataset):
    if not os.path.exists(path):
        raise ConfigError(f"model file not found: {path}")
    model, meta = load_model(path)
    if (model.n_entities, model.n_relations) != (dataset.n_entities, dataset.n_relations):
        raise CompatibilityError(f"{path}: model shape ({model.n_entities}, {model.n_relations}) "
                                 f"does not match dataset ({dataset.n_entities}, {dataset.n_relations})")
    fp = meta.get("vocab_fingerprint")
    if fp is not None and fp != dataset.fingerprint():
        raise CompatibilityError(f"{path}: model was trained on a different vocabulary")
    return model, meta


def cmd_eval(cfg, model_paths=None):
    """Evaluate every model, then write per-seed and aggregate reports."""
    manifest = read_manifest(cfg)
    check_manifest(cfg, manifest)
    dataset = get_dataset(cfg)
    pmi = _load_pmi_for(cfg, required=False)
    if pmi is None:
        logger.warning("no PMI file; interpretability metrics are omitted")
    k = cfg.eval.k
    reports = []
    for path in _model_paths(cfg, manifest, model_paths):
        model, meta = load_compatible_model(path, dataset)
        seed = meta.get("seed") if meta.get("seed") is not None else len(reports)
        rng = np.random.default_rng([int(seed), 7])
        metrics = ev.evaluate_model(model, dataset, pmi, rng, k, cfg.eval.filtered_ranking)
        reports.append(metrics)
        ev.write_metrics_tsv(metrics, _out(cfg, "eval", f"seed{seed}.tsv"))
        with open(_out(cfg, "eval", f"seed{seed}.txt"), "w", encoding="utf-8") as fh:
            fh.write(ev.format_metrics_text(metrics, f"seed {seed} ({os.path.basename(path)})"))
        qual = ev.qualitative_report(model.theta_e, dataset.entities.names, cfg.eval.qualitative_dims,
                                     k, np.random.default_rng([int(seed), 11]))
        with open(_out(cfg, "eval", f"qualitative_seed{seed}.txt"), "w", encoding="utf-8") as fh:
            fh.write(qual)
        if pmi is not None:
            _write_dimension_table(model, pmi, k, _out(cfg, "eval", f"dimensions_seed{seed}.tsv"))
    aggregate = ev.aggregate_metrics(reports)
    manual = os.path.join(cfg.paths.output_dir, "intrusion", "manual_wi.tsv")
    if os.path.exists(manual):
        aggregate["ManualWI"] = (ev.read_metrics_tsv(manual)["ManualWI"], 0.0)
    ev.write_metrics_tsv(aggregate, _out(cfg, "eval", "aggregate.tsv"))
    with open(_out(cfg, "eval", "aggregate.txt"), "w", encoding="utf-8") as fh:
        fh.write(ev.format_metrics_text(aggregate, f"mean +/- std over {len(reports)} model(s)"))
    return reports, aggregate


def _write_dimension_table(model, pmi, k, path):
    coh = ev.coherence_per_dimension(model.theta_e, pmi, k)
    outcomes = ev.intrusion_outcomes(model.theta_e, pmi, k)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"dimension\tcoherence@{k}\tintruder_found\n")
        for l, (c, o) in enumerate(zip(coh.tolist(), outcomes)):
            fh.write(f"{l}\t{c!r}\t{int(o.correct)}\n")


def _read_dimension_table(path):
    data = np.loadtxt(path, delimiter="\t", skiprows=1, ndmin=2)
    return data[:, 1]


def cmd_intrude(cfg, model_path=None, annotation_files=None):
    """Export word-intrusion tasks, or score annotations against the answer key."""
    directory = os.path.join(cfg.paths.output_dir, "intrusion")
    tasks_path = os.path.join(directory, "tasks.tsv")
    key_path = os.path.join(directory, "answer_key.tsv")
    if annotation_files:
        if not os.path.exists(key_path):
            raise ConfigError(f"answer key {key_path} not found; export tasks first")
        score = ev.score_manual_intrusion_files(key_path, annotation_files, tasks_path)
        ev.write_metrics_tsv({"ManualWI": score, "annotators": float(len(annotation_files))},
                             _out(cfg, "intrusion", "manual_wi.tsv"))
        return score
    dataset = get_dataset(cfg)
    if model_path is None:
        manifest = read_manifest(cfg)
        model_path = _model_paths(cfg, manifest, None)[0]
    model, meta = load_compatible_model(model_path, dataset)
    seed = meta.get("seed") or 0
    os.makedirs(directory, exist_ok=True)
    return ev.export_intrusion_tasks(model.theta_e, dataset.entities.names, cfg.eval.k,
                                     cfg.eval.intrusion_dims, np.random.default_rng([int(seed), 13]),
                                     tasks_path, key_path)


def cmd_report(cfg, baseline_dir=None):
    """Render figures and a summary table from existing run outputs."""
    from . import plotting

    out = cfg.paths.output_dir
    manifest = read_manifest(cfg)
    agg_path = os.path.join(out, "eval", "aggregate.tsv")
    if not os.path.exists(agg_path):
        raise ConfigError(f"{agg_path} not found; run 'eval' first")
    aggregates = {"proposed" if baseline_dir else "model": ev.read_metrics_tsv(agg_path)}
    if baseline_dir:
        base_path = os.path.join(baseline_dir, "eval", "aggregate.tsv")
        if not os.path.exists(base_path):
            raise ConfigError(f"{base_path} not found")
        aggregates = {"baseline": ev.read_metrics_tsv(base_path), **aggregates}
    figures = []
    if manifest is not None:
        traces = [TrainTrace.read(os.path.join(out, r["trace"])) for r in manifest["runs"]]
        figures.append(plotting.plot_training_traces(
            traces, _out(cfg, "report", "training_traces.png"),
            [f"seed {r['seed']}" for r in manifest["runs"]]))
    if os.path.exists(cfg.pmi_path):
        figures.append(plotting.plot_pmi_histogram(load_pmi(cfg.pmi_path).values,
                                                   _out(cfg, "report", "pmi_histogram.png")))
    dims = _dimension_tables(out)
    if dims is not None:
        base_dims = _dimension_tables(baseline_dir) if baseline_dir else None
        figures.append(plotting.plot_dimension_coherence(
            dims, _out(cfg, "report", "dimension_coherence.png"), base_dims, cfg.eval.k))
    figures.append(plotting.plot_metric_comparison(aggregates, _out(cfg, "report", "metrics.png")))
    labels = list(aggregates)
    metrics = [m for m in aggregates[labels[-1]]]
    with open(_out(cfg, "report", "report.tsv"), "w", encoding="utf-8") as fh:
        fh.write("metric\t" + "\t".join(f"{l}_mean\t{l}_std" for l in labels) + "\n")
        for m in metrics:
            cells = []
            for l in labels:
                mean, std = aggregates[l].get(m, (float("nan"), float("nan")))
                cells += [repr(mean), repr(std)]
            fh.write(m + "\t" + "\t".join(cells) + "\n")
    with open(_out(cfg, "report", "report.txt"), "w", encoding="utf-8") as fh:
        width = max(len(m) for m in metrics) + 2
        fh.write(f"{'metric':<{width}}" + "".join(f"{l:>23}" for l in labels) + "\n")
        for m in metrics:
            row = "".join(f"{aggregates[l][m][0]:>12.2f} +/- {aggregates[l][m][1]:<6.2f}"
                          if m in aggregates[l] else f"{'-':>23}" for l in labels)
            fh.write(f"{m:<{width}}{row}\n")
        fh.write("\nfigures: " + ", ".join(os.path.basename(f) for f in figures) + "\n")
    return figures


def _dimension_tables(directory):
    eval_dir = os.path.join(directory, "eval")
    if not os.path.isdir(eval_dir):
        return None
    files = sorted(f for f in os.listdir(eval_dir) if f.startswith("dimensions_seed"))
    if not files:
        return None
    return np.concatenate([_read_dimension_table(os.path.join(eval_dir, f)) for f in files])


def cmd_grid(cfg):
    """Train every (lambda_c, lambda_r, dim) combination; pick the best mean validation MRR."""
    import copy

    rows = []
    base_out = cfg.paths.output_dir
    for lc, lr, dim in itertools.product(cfg.grid.lambda_c, cfg.grid.lambda_r, cfg.grid.dim):
        sub = copy.deepcopy(cfg)
        sub.train.lambda_c, sub.train.lambda_r, sub.train.dim = float(lc), float(lr), int(dim)
        sub.paths.output_dir = os.path.join(base_out, "grid", f"lc{lc}_lr{lr}_d{dim}")
        sub.paths.pmi = cfg.pmi_path
        manifest = cmd_train(sub)
        mrr = float(np.mean([r["valid_mrr"] for r in manifest["runs"]]))
        rows.append((float(lc), float(lr), int(dim), mrr, sub.paths.output_dir))
    best = max(rows, key=lambda r: r[3])
    with open(_out(cfg, "grid.tsv"), "w", encoding="utf-8") as fh:
        fh.write("lambda_c\tlambda_r\tdim\tvalid_mrr\toutput_dir\n")
        for row in rows:
            fh.write("\t".join(map(str, row)) + "\n")
    chosen = copy.deepcopy(cfg)
    chosen.train.lambda_c, chosen.train.lambda_r, chosen.train.dim = best[:3]
    dump_config(chosen, _out(cfg, "best_config.yaml"))
    return rows, best
