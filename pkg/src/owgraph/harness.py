"""End-to-end experiment runs: data, training, inference, scoring, artifacts.

A run loads or generates a graph, builds the open-world split, trains the
stack, re-runs granularity search for the final forward pass, ensembles the
per-layer predictions, and scores everything on the test nodes. Each run can
write a directory with the config echo, a key/value report, per-epoch
losses, the pseudo-label dump, the refined edge list, and a checkpoint.
"""

from __future__ import annotations

import os
import time
from dataclasses import dataclass, replace as dc_replace

import numpy as np

from . import pseudolabels as pl
from .clustering import default_granularity_range
from .config import SWEEP_PARAMS, ExperimentConfig, apply_pairs, config_echo
from .evaluation import (OpenWorldMetrics, class_count_error,
                         kmeans_feature_baseline, open_world_accuracy)
from .graph import (AttributedGraph, OpenWorldSplit, SbmSpec, apply_split,
                    generate_sbm, load_graph, load_split, make_open_world_split,
                    save_graph)
from .network import fit, save_checkpoint, stack_forward


@dataclass
class RunReport:
    config: ExperimentConfig
    loss_history: list
    refinements: list
    granularities: list
    layer_metrics: list
    ensemble_metrics: OpenWorldMetrics
    baseline_metrics: OpenWorldMetrics | None
    wall_clock_seconds: float

    def lines(self) -> list[str]:
        out = ["# config"]
        out += [f"{k} = {v}" for k, v in config_echo(self.config)]
        out.append("# results")
        for li, m in enumerate(self.layer_metrics, start=1):
            out.append(f"layer{li}.acc_all = {m.acc_all:.6f}")
            out.append(f"layer{li}.acc_known = {m.acc_known:.6f}")
            out.append(f"layer{li}.acc_novel = {m.acc_novel:.6f}")
            out.append(f"layer{li}.groups = {m.predicted_class_count}")
        m = self.ensemble_metrics
        out.append(f"ensemble.acc_all = {m.acc_all:.6f}")
        out.append(f"ensemble.acc_known = {m.acc_known:.6f}")
        out.append(f"ensemble.acc_novel = {m.acc_novel:.6f}")
        out.append(f"predicted_class_count = {m.predicted_class_count}")
        if m.class_count_mae is not None:
            out.append(f"class_count_mae = {m.class_count_mae:.6f}")
        if self.baseline_metrics is not None:
            out.append(f"baseline.acc_all = {self.baseline_metrics.acc_all:.6f}")
        for ri, grans in enumerate(self.granularities):
            out.append(f"granularity.search{ri} = {','.join(str(n) for n in grans)}")
        for r in self.refinements:
            out.append(f"refine.epoch{r['epoch']} = +{r['recovered']} -{r['removed']}")
        out.append(f"epochs = {len(self.loss_history)}")
        out.append(f"wall_clock_seconds = {self.wall_clock_seconds:.3f}")
        return out


class RunError(RuntimeError):
    """An experiment stage failed; the stage name prefixes the message."""


def _stage(name, fn, *args, **kwargs):
    try:
        return fn(*args, **kwargs)
    except Exception as err:
        raise RunError(f"[{name}] {err}") from err


def _rescale_features(g: AttributedGraph, scale: float | None) -> AttributedGraph:
    """Row-normalize features to a common length; zero rows stay zero.

    A controlled feature length keeps prototype affinities in a softmax range
    where they are sharp enough to be discriminative yet soft enough that
    gradients still reach rarely-used prototypes.
    """
    if scale is None:
        return g
    norms = np.linalg.norm(g.features, axis=1, keepdims=True)
    return dc_replace(g, features=scale * g.features / np.maximum(norms, 1e-12))


def load_or_generate(cfg: ExperimentConfig) -> tuple[AttributedGraph, OpenWorldSplit]:
    if cfg.dataset_path is not None:
        g = _stage("load", load_graph, cfg.dataset_path)
        g = _rescale_features(g, cfg.dataset_feature_scale)
        split_file = os.path.join(cfg.dataset_path, "split.json")
        if os.path.exists(split_file):
            split = _stage("split", load_split, split_file)
        else:
            split = _stage("split", make_open_world_split, g,
                           cfg.split_known_class_fraction, cfg.split_train_fraction,
                           cfg.split_val_fraction, cfg.split_seed)
        return g, split
    spec = SbmSpec(class_sizes=cfg.sbm_class_sizes, intra_edge_prob=cfg.sbm_intra,
                   inter_edge_prob=cfg.sbm_inter, feature_dim=cfg.sbm_feature_dim,
                   class_mean_separation=cfg.sbm_separation,
                   feature_noise_std=cfg.sbm_noise, seed=cfg.sbm_seed)
    g, _ = _stage("generate", generate_sbm, spec)
    g = _rescale_features(g, cfg.dataset_feature_scale)
    split = _stage("split", make_open_world_split, g,
                   cfg.split_known_class_fraction, cfg.split_train_fraction,
                   cfg.split_val_fraction, cfg.split_seed)
    return g, split


def run(cfg: ExperimentConfig, output_dir: str | None = None) -> RunReport:
    """One full experiment; writes artifacts when output_dir is given."""
    cfg.validate()
    start = time.perf_counter()
    g, split = load_or_generate(cfg)
    g_train = apply_split(g, split)
    labeled_idx = np.asarray(split.train_nodes, dtype=np.int64)
    labeled_classes = g.labels[labeled_idx]

    stack, state = _stage(
        "fit", fit, g_train, split,
        n_prototypes=cfg.model_n_prototypes, topk=cfg.model_topk,
        n_layers=cfg.model_layers, hidden_dim=cfg.model_hidden_dim,
        activation=cfg.model_activation, attention=cfg.model_attention,
        learning_rate=cfg.train_learning_rate,
        max_iterations=cfg.train_max_iterations,
        refine_period=cfg.train_refine_period, eta=cfg.pseudo_eta,
        gamma=cfg.pseudo_gamma, mu=cfg.refine_mu,
        refine_enabled=cfg.refine_enabled,
        edge_drop_rate=cfg.augment_edge_drop_rate,
        feature_mask_rate=cfg.augment_feature_mask_rate,
        granularity_fixed=cfg.granularity_fixed,
        granularity_min=cfg.granularity_min,
        granularity_max=cfg.granularity_max,
        pseudo_supervision=cfg.train_pseudo_supervision, seed=cfg.run_seed)

    # final inference: fresh granularity search on the refined structure
    n_known = len(np.unique(labeled_classes))
    lo, hi = default_granularity_range(n_known, cfg.model_n_prototypes)
    n_range = (cfg.granularity_min if cfg.granularity_min is not None else lo,
               cfg.granularity_max if cfg.granularity_max is not None else hi)
    states = _stage("inference", stack_forward, g.features, state.edges, stack,
                    labeled_idx, labeled_classes, topk=cfg.model_topk,
                    n_range=n_range, fixed_n=cfg.granularity_fixed, search=True,
                    cluster_seed=cfg.run_seed, attention=cfg.model_attention)
    state.granularities.append([layer.best_n for layer in stack.layers])

    unlabeled = np.array(sorted(set(range(g.node_count)) - set(split.train_nodes)),
                         dtype=np.int64)
    preds = [s.p.detach().numpy() for s in states]
    ens, conf = _stage("ensemble", pl.generate, preds, unlabeled,
                       cfg.pseudo_eta, cfg.pseudo_gamma)

    test = np.asarray(split.test_nodes, dtype=np.int64)
    truth = g.labels[test]
    if np.any(~g.label_mask[test]):
        raise RunError("[score] test nodes lack ground-truth labels")
    layer_metrics = [
        open_world_accuracy(p[test].argmax(axis=1), truth, split.known_classes,
                            predicted_class_count=s.n_used)
        for p, s in zip(preds, states)]
    n_estimated = int(ens.mask.sum())
    ens_metrics = open_world_accuracy(ens.p_hat[test].argmax(axis=1), truth,
                                      split.known_classes,
                                      predicted_class_count=n_estimated)
    ens_metrics = dc_replace(
        ens_metrics,
        class_count_mae=class_count_error(n_estimated, len(split.all_classes)))

    baseline_pred = _stage("baseline", kmeans_feature_baseline, g, split,
                           max(2, n_estimated), cfg.run_seed)
    baseline = open_world_accuracy(baseline_pred, truth, split.known_classes)

    report = RunReport(config=cfg, loss_history=state.history,
                       refinements=state.refinements,
                       granularities=state.granularities,
                       layer_metrics=layer_metrics, ensemble_metrics=ens_metrics,
                       baseline_metrics=baseline,
                       wall_clock_seconds=time.perf_counter() - start)
    if output_dir is not None:
        write_artifacts(output_dir, report, stack, state.edges, ens, conf,
                        cfg.model_attention)
    return report


def write_artifacts(output_dir, report: RunReport, stack, edges, ens, conf,
                    attention):
    os.makedirs(output_dir, exist_ok=True)
    with open(os.path.join(output_dir, "report.txt"), "w", encoding="utf-8") as fh:
        fh.write("\n".join(report.lines()) + "\n")
    with open(os.path.join(output_dir, "loss_history.csv"), "w", encoding="utf-8") as fh:
        fh.write("epoch,total,ce,reg,con\n")
        for i, h in enumerate(report.loss_history):
            fh.write(f"{i},{h['total']:.10g},{h['ce']:.10g},"
                     f"{h['reg']:.10g},{h['con']:.10g}\n")
    with open(os.path.join(output_dir, "pseudo_labels.csv"), "w", encoding="utf-8") as fh:
        fh.write("node_id,group_id,confidence\n")
        for k, nodes in enumerate(conf.members):
            for node in nodes:
                fh.write(f"{node},{k},{ens.p_hat[node, k]:.10g}\n")
    with open(os.path.join(output_dir, "refined_edges.csv"), "w", encoding="utf-8") as fh:
        for u, v in sorted(edges):
            fh.write(f"{u},{v}\n")
    save_checkpoint(os.path.join(output_dir, "checkpoint.npz"), stack, edges,
                    attention)


def run_sweep(cfg: ExperimentConfig, parameter: str, values,
              output_dir: str | None = None) -> list[RunReport]:
    """One run per value of a named hyperparameter, common seed."""
    if parameter not in SWEEP_PARAMS:
        raise RunError(f"[sweep] unknown parameter {parameter!r}; "
                       f"choose from {sorted(SWEEP_PARAMS)}")
    key = SWEEP_PARAMS[parameter]
    reports = []
    for value in values:
        sub = apply_pairs(cfg, {key: str(value)})
        sub_dir = (os.path.join(output_dir, f"{parameter}_{value}")
                   if output_dir is not None else None)
        reports.append(run(sub, sub_dir))
    return reports


def sweep_table(parameter: str, values, reports: list[RunReport]) -> str:
    header = f"{parameter:>12}  acc_all  acc_known  acc_novel  classes"
    rows = [header]
    for value, rep in zip(values, reports):
        m = rep.ensemble_metrics
        rows.append(f"{value!s:>12}  {m.acc_all:.4f}   {m.acc_known:.4f}    "
                    f"{m.acc_novel:.4f}    {m.predicted_class_count}")
    return "\n".join(rows)


def generate_dataset(cfg: ExperimentConfig, output_dir: str):
    """Emit the configured SBM to the on-disk dataset directory format."""
    if cfg.sbm_class_sizes is None:
        raise RunError("[gen] sbm.class_sizes must be set to generate a dataset")
    spec = SbmSpec(class_sizes=cfg.sbm_class_sizes, intra_edge_prob=cfg.sbm_intra,
                   inter_edge_prob=cfg.sbm_inter, feature_dim=cfg.sbm_feature_dim,
                   class_mean_separation=cfg.sbm_separation,
                   feature_noise_std=cfg.sbm_noise, seed=cfg.sbm_seed)
    g, _ = _stage("generate", generate_sbm, spec)
    _stage("save", save_graph, g, output_dir)
    return g
