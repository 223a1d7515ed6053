"""
Experiment orchestration: data generation, training, evaluation, ablation
sweeps and energy-map export, with every artifact written to disk.
"""

import csv
import io
import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence, Tuple, Union
import numpy as np

from ..utils.logging import RunLogger
from ..utils.monitoring import resource_snapshot, verify_system_resources, worker_count
from ..utils.visualization import ReportVisualizer, plot_energy_maps
from .config import RunConfig, sync_grid
from .data import DatasetSplit, NormalizationStats, gen_synthetic, load_manifest, save_manifest
from .errors import ConfigError, EvalError
from .metric import (
    EmbeddingRecord,
    MetricLoss,
    MetricsReport,
    extract_embeddings,
    load_embeddings,
    recall_at_k,
    reid_metrics,
    save_embeddings,
)
from .network import BDBNetwork, DropKind, DropSpec, Mode, Pooling, load_checkpoint, save_checkpoint
from .network import spatial_energy_map
from .training import TrainResult, train_loop

Modifier = Callable[[RunConfig], None]


@dataclass
class SweepEntry:
    """One configuration of an ablation sweep."""
    label: str
    modify: Modifier
    value: str = ''


@dataclass
class AblationResult:
    sweep: str
    rows: List[Dict] = field(default_factory=list)

    def to_csv(self) -> str:
        columns: List[str] = []
        for row in self.rows:
            for key in row:
                if key not in columns:
                    columns.append(key)
        buffer = io.StringIO()
        writer = csv.DictWriter(buffer, fieldnames=columns, lineterminator='\n')
        writer.writeheader()
        for row in self.rows:
            writer.writerow({k: _csv_value(row.get(k)) for k in columns})
        return buffer.getvalue()


def _csv_value(value) -> str:
    if value is None:
        return ''
    if isinstance(value, float):
        return repr(value)
    return str(value)


def split_statistics_table(split: DatasetSplit) -> str:
    """Identity and image counts per split as an aligned text table."""
    lines = [f"{'split':<10}{'identities':>12}{'images':>10}"]
    for row in split.statistics():
        lines.append(f"{row['split']:<10}{row['identities']:>12}{row['images']:>10}")
    return "\n".join(lines)


def _stats_extras(stats: Optional[NormalizationStats]) -> Dict[str, np.ndarray]:
    if stats is None:
        return {}
    return {'norm_mean': stats.mean, 'norm_std': stats.std}


def _stats_from_extras(extras: Dict[str, np.ndarray]) -> Optional[NormalizationStats]:
    if 'norm_mean' in extras and 'norm_std' in extras:
        return NormalizationStats(extras['norm_mean'], extras['norm_std'])
    return None


# ------------------------------------------------------------------
# Sweeps
# ------------------------------------------------------------------

def _set_drop(kind: DropKind, r_h: float = 0.3, r_w: float = 1.0, p: float = 0.1) -> Modifier:
    def modify(cfg: RunConfig) -> None:
        cfg.branches.drop_spec = DropSpec(kind=kind, r_h=r_h, r_w=r_w, p=p)
    return modify


def _set_branches(use_global: bool, use_drop: bool) -> Modifier:
    def modify(cfg: RunConfig) -> None:
        cfg.branches.use_global_branch = use_global
        cfg.branches.use_drop_branch = use_drop
    return modify


def _chain(*modifiers: Modifier) -> Modifier:
    def modify(cfg: RunConfig) -> None:
        for m in modifiers:
            m(cfg)
    return modify


def _set(path: str, value) -> Modifier:
    section, key = path.split('.')

    def modify(cfg: RunConfig) -> None:
        setattr(getattr(cfg, section), key, value)
    return modify


def build_sweep(sweep: str, values: Optional[Sequence[float]] = None) -> List[SweepEntry]:
    """
    Configurations of a named sweep.

    Sweeps: branches, variants, ratio, pooling, alignment, components,
    augmentation, retrieval_losses.

    Raises:
        ConfigError: For an unknown sweep name
    """
    if sweep == 'branches':
        return [
            SweepEntry('global_only', _set_branches(True, False)),
            SweepEntry('drop_only', _set_branches(False, True)),
            SweepEntry('both', _set_branches(True, True)),
        ]
    if sweep == 'variants':
        return [
            SweepEntry('dropout', _set_drop(DropKind.DROPOUT, p=0.1)),
            SweepEntry('spatial_dropout', _set_drop(DropKind.SPATIAL_DROPOUT, p=0.1)),
            SweepEntry('batch_dropout', _set_drop(DropKind.BATCH_DROPOUT, p=0.3)),
            SweepEntry('drop_block', _set_drop(DropKind.DROP_BLOCK)),
            SweepEntry('batch_drop_block', _set_drop(DropKind.BATCH_DROP_BLOCK)),
        ]
    if sweep == 'ratio':
        ratios = list(values) if values else [0.1, 0.2, 0.3, 0.4, 0.5]
        return [
            SweepEntry(f'r_h={r!r}', _set_drop(DropKind.BATCH_DROP_BLOCK, r_h=r, r_w=1.0), value=repr(r))
            for r in ratios
        ]
    if sweep == 'pooling':
        return [
            SweepEntry('drop_gap', _set('branches.drop_pooling', Pooling.GAP)),
            SweepEntry('drop_gmp', _set('branches.drop_pooling', Pooling.GMP)),
        ]
    if sweep == 'alignment':
        jitter = int(values[0]) if values else 3
        entries = []
        for data_label, shift in (('aligned', 0), (f'jitter{jitter}', jitter)):
            for drop_label, ratio in (('no_drop', 0.0), ('drop', 0.5)):
                entries.append(SweepEntry(
                    f'{data_label}/{drop_label}',
                    _chain(_set('data.alignment_jitter', shift),
                           _set_drop(DropKind.BATCH_DROP_BLOCK, r_h=ratio, r_w=ratio if ratio else 1.0)),
                ))
        return entries
    if sweep == 'components':
        return [
            SweepEntry('baseline', _chain(_set_branches(True, False), _set('losses.use_triplet', False))),
            SweepEntry('baseline+triplet', _set_branches(True, False)),
            SweepEntry('baseline+dropping', _chain(_set_branches(True, True), _set('losses.use_triplet', False))),
            SweepEntry('bdb', _set_branches(True, True)),
        ]
    if sweep == 'augmentation':
        entries = []
        for model_label, use_drop in (('baseline', False), ('bdb', True)):
            for aug_label, cutout, erasing in (('none', False, False), ('re', False, True), ('cut', True, False)):
                entries.append(SweepEntry(
                    f'{model_label}/{aug_label}',
                    _chain(_set_branches(True, use_drop),
                           _set('augment.cutout', cutout),
                           _set('augment.random_erasing', erasing)),
                ))
        return entries
    if sweep == 'retrieval_losses':
        entries = []
        for metric in (MetricLoss.TRIPLET, MetricLoss.LIFTED, MetricLoss.MARGIN):
            for model_label, use_drop in (('baseline', False), ('bdb', True)):
                entries.append(SweepEntry(
                    f'{model_label}+{metric.value}',
                    _chain(_set_branches(True, use_drop),
                           _set('losses.metric', metric),
                           _set('eval.protocol', 'retrieval')),
                ))
        return entries
    raise ConfigError(
        f"unknown sweep {sweep!r}; choose from {', '.join(SWEEPS)}", key='ablate.sweep'
    )


SWEEPS = ('branches', 'variants', 'ratio', 'pooling', 'alignment', 'components',
          'augmentation', 'retrieval_losses')


class ExperimentManager:
    """Runs the toolkit's commands and owns their artifact layout."""

    def __init__(self, output_dir: Union[str, Path] = 'runs', log_dir: Optional[str] = None):
        self.output_dir = Path(output_dir)
        self.logger = RunLogger('experiment', log_dir)
        self.log_dir = log_dir

    # --- data ---
    def generate_data(self, cfg: RunConfig, manifest_path: Union[str, Path]) -> Tuple[DatasetSplit, Path]:
        split = gen_synthetic(cfg.data)
        path = save_manifest(split, manifest_path)
        self.logger.info(f"Wrote manifest {path}", {'statistics': split.statistics()})
        return split, path

    def load_split(self, cfg: RunConfig, manifest_path: Optional[Union[str, Path]]) -> DatasetSplit:
        """Load a manifest (adopting its grid) or generate from cfg.data."""
        if manifest_path is None:
            return gen_synthetic(cfg.data)
        split = load_manifest(manifest_path)
        sync_grid(cfg, split.grid.grid_h, split.grid.grid_w, split.grid.patch_dim)
        return split

    # --- evaluation helpers ---
    def score(
        self,
        model: BDBNetwork,
        split: DatasetSplit,
        cfg: RunConfig,
        stats: Optional[NormalizationStats] = None
    ) -> MetricsReport:
        transform = stats.apply if stats is not None else None
        query = extract_embeddings(model, split.query, cfg.eval.batch_size, transform)
        gallery = extract_embeddings(model, split.gallery, cfg.eval.batch_size, transform)
        return self.score_embeddings(query, gallery, cfg.eval.protocol, cfg.eval.max_rank, cfg.eval.ks)

    def score_embeddings(
        self,
        query: List[EmbeddingRecord],
        gallery: List[EmbeddingRecord],
        protocol: str,
        max_rank: int,
        ks: Sequence[int]
    ) -> MetricsReport:
        if protocol == 'reid':
            report = reid_metrics(query, gallery, max_rank)
            if report.num_skipped:
                self.logger.warning("Queries skipped during evaluation", {'skipped': report.num_skipped})
        elif protocol == 'retrieval':
            report = recall_at_k(list(query) + list(gallery), ks)
        else:
            raise ConfigError(f"unknown protocol {protocol!r}", key='eval.protocol')
        dims = {len(e.vector) for e in list(query) + list(gallery)}
        report.meta = {
            'protocol': protocol,
            'descriptor_dim': dims.pop() if len(dims) == 1 else None,
            'max_rank': max_rank if protocol == 'reid' else None,
            'ks': list(ks) if protocol == 'retrieval' else None,
        }
        return report

    # --- train ---
    def train(
        self,
        cfg: RunConfig,
        split: DatasetSplit,
        out_dir: Optional[Union[str, Path]] = None,
        write_reports: bool = True
    ) -> Tuple[TrainResult, MetricsReport]:
        """
        Train, evaluate the final model, and write checkpoint.npz,
        history.csv, metrics.json (and history.html).
        """
        out = Path(out_dir) if out_dir is not None else self.output_dir
        out.mkdir(parents=True, exist_ok=True)
        logger = RunLogger('train', self.log_dir)
        logger.info("Resources before training", resource_snapshot())
        ok, issues = verify_system_resources(str(out))
        if not ok:
            logger.warning("Low system resources", {'issues': issues})

        result = train_loop(cfg, split, logger=logger)
        report = self.score(result.model, split, cfg, result.stats)
        report.meta.update({'config': cfg.to_dict(), 'seed': cfg.seed})

        extras = _stats_extras(result.stats)
        if result.beta is not None:
            extras['margin_beta'] = result.beta.data
        save_checkpoint(out / 'checkpoint.npz', result.model, cfg.to_dict(), extras)
        (out / 'history.csv').write_text(result.history.to_csv(), encoding='utf-8')
        (out / 'metrics.json').write_text(report.to_json(), encoding='utf-8')
        if write_reports:
            ReportVisualizer(str(out)).plot_history(result.history.rows)

        logger.info("Training finished", {
            'rank1': report.rank1, 'map': report.map, 'output_dir': str(out),
            **resource_snapshot(),
        })
        return result, report

    # --- eval ---
    def evaluate_checkpoint(
        self,
        checkpoint_path: Union[str, Path],
        split: DatasetSplit,
        cfg: RunConfig,
        dump_dir: Optional[Union[str, Path]] = None
    ) -> MetricsReport:
        """
        Score a saved model on a split.

        Raises:
            ConfigError: If the checkpoint geometry does not fit the split
        """
        checkpoint = load_checkpoint(checkpoint_path)
        stats = _stats_from_extras(checkpoint.extras)
        transform = stats.apply if stats is not None else None
        query = extract_embeddings(checkpoint.model, split.query, cfg.eval.batch_size, transform)
        gallery = extract_embeddings(checkpoint.model, split.gallery, cfg.eval.batch_size, transform)
        if dump_dir is not None:
            dump = Path(dump_dir)
            save_embeddings(query, dump / 'query.jsonl')
            save_embeddings(gallery, dump / 'gallery.jsonl')
            self.logger.info(f"Wrote embeddings to {dump}")
        return self.score_embeddings(query, gallery, cfg.eval.protocol, cfg.eval.max_rank, cfg.eval.ks)

    def evaluate_embeddings(
        self,
        query_path: Union[str, Path],
        gallery_path: Optional[Union[str, Path]],
        cfg: RunConfig
    ) -> MetricsReport:
        query = load_embeddings(query_path)
        gallery = load_embeddings(gallery_path) if gallery_path is not None else []
        if cfg.eval.protocol == 'reid' and not gallery:
            raise EvalError("re-ID evaluation needs a gallery embedding file")
        return self.score_embeddings(query, gallery, cfg.eval.protocol, cfg.eval.max_rank, cfg.eval.ks)

    # --- ablate ---
    def _run_one(self, cfg: RunConfig, split: DatasetSplit, logger: RunLogger) -> MetricsReport:
        result = train_loop(cfg, split, logger=logger)
        return self.score(result.model, split, cfg, result.stats)

    def ablate(
        self,
        base: RunConfig,
        sweep: str,
        seeds: int = 3,
        values: Optional[Sequence[float]] = None,
        manifest_path: Optional[Union[str, Path]] = None,
        out_dir: Optional[Union[str, Path]] = None,
        workers: Optional[int] = None,
        write_reports: bool = True
    ) -> AblationResult:
        """
        Train and score every configuration of a sweep over several seeds.

        Seed i of every configuration uses model seed base.seed + i, so all
        configurations see the same seeds. Runs execute on a thread pool;
        results are gathered in job order, so the CSV does not depend on
        scheduling.

        Returns:
            AblationResult with mean/std Rank-1 and mAP (or Recall@K) per configuration

        Raises:
            ConfigError: If a manifest is given and the sweep varies the data section
        """
        if seeds < 1:
            raise ConfigError("must be >= 1", key='ablate.seeds')
        entries = build_sweep(sweep, values)
        fixed = self.load_split(base, manifest_path) if manifest_path is not None else None

        jobs: List[Tuple[int, int, RunConfig]] = []
        for e_index, entry in enumerate(entries):
            for s in range(seeds):
                cfg = base.copy()
                entry.modify(cfg)
                cfg.seed = base.seed + s
                if fixed is not None and cfg.data != base.data:
                    raise ConfigError(
                        f"sweep {sweep!r} changes the data section ({entry.label}); "
                        "it cannot run on a fixed --manifest",
                        key='ablate.sweep'
                    )
                cfg.validate()
                jobs.append((e_index, s, cfg))

        splits: Dict[str, DatasetSplit] = {}

        def split_for(cfg: RunConfig) -> DatasetSplit:
            if fixed is not None:
                return fixed
            key = json.dumps(cfg.to_dict()['data'], sort_keys=True)
            if key not in splits:
                splits[key] = gen_synthetic(cfg.data)
            return splits[key]

        prepared = [(e, s, cfg, split_for(cfg)) for e, s, cfg in jobs]
        n_workers = worker_count(workers)
        self.logger.info(f"Ablation sweep {sweep}", {
            'configurations': len(entries), 'seeds': seeds, 'workers': n_workers
        })
        run_logger = RunLogger('ablate.run', self.log_dir)
        with ThreadPoolExecutor(max_workers=n_workers) as pool:
            reports = list(pool.map(lambda job: self._run_one(job[2], job[3], run_logger), prepared))

        result = AblationResult(sweep=sweep)
        for e_index, entry in enumerate(entries):
            mine = [r for (e, _, _, _), r in zip(prepared, reports) if e == e_index]
            row: Dict = {'sweep': sweep, 'config': entry.label, 'seeds': seeds}
            if entry.value:
                row['value'] = entry.value
            row.update(_aggregate(mine))
            result.rows.append(row)

        out = Path(out_dir) if out_dir is not None else self.output_dir
        out.mkdir(parents=True, exist_ok=True)
        (out / f'ablation_{sweep}.csv').write_text(result.to_csv(), encoding='utf-8')
        if write_reports:
            ReportVisualizer(str(out)).plot_ablation(sweep, result.rows)
        self.logger.info(f"Wrote ablation_{sweep}.csv", {'rows': len(result.rows)})
        return result

    # --- export ---
    def export_activation(
        self,
        checkpoint_path: Union[str, Path],
        split: DatasetSplit,
        out_dir: Union[str, Path],
        part: str = 'query',
        source: str = 'auto',
        figures: int = 0,
        batch_size: int = 64
    ) -> Path:
        """
        Write per-sample H x W energy grids and an entropy summary.

        Args:
            checkpoint_path: Saved model
            split: Dataset split
            out_dir: Destination directory (grids in ``maps/``)
            part: Which split part to run (train, query or gallery)
            source: 'backbone', 'drop' (bottleneck output of the dropping
                branch) or 'auto' (drop when present, else backbone)
            figures: Number of PNG heatmaps to render
            batch_size: Records per forward pass

        Returns:
            Path of entropy.csv
        """
        if part not in ('train', 'query', 'gallery'):
            raise ConfigError(f"unknown split part {part!r}", key='export.split')
        if source not in ('auto', 'backbone', 'drop'):
            raise ConfigError(f"unknown map source {source!r}", key='export.source')
        checkpoint = load_checkpoint(checkpoint_path)
        model = checkpoint.model
        stats = _stats_from_extras(checkpoint.extras)
        if source == 'auto':
            source = 'drop' if model.drop_branch is not None else 'backbone'
        if source == 'drop' and model.drop_branch is None:
            raise ConfigError("model has no dropping branch", key='export.source')

        records = getattr(split, part)
        energies, entropies = [], []
        for start in range(0, len(records), batch_size):
            chunk = records[start:start + batch_size]
            batch = np.stack([r.patches for r in chunk])
            if stats is not None:
                batch = stats.apply(batch)
            output = model.forward(batch, Mode.EVAL)
            feature_map = output.drop_map if source == 'drop' else output.feature_map
            energy, entropy = spatial_energy_map(feature_map)
            energies.append(energy)
            entropies.append(entropy)
        energy = np.concatenate(energies)
        entropy = np.concatenate(entropies)

        out = Path(out_dir)
        maps = out / 'maps'
        maps.mkdir(parents=True, exist_ok=True)
        for record, grid in zip(records, energy):
            lines = [",".join(repr(float(v)) for v in row) for row in grid]
            (maps / f"{record.sample_id}.csv").write_text("\n".join(lines) + "\n", encoding='utf-8')

        buffer = io.StringIO()
        writer = csv.writer(buffer, lineterminator='\n')
        writer.writerow(['sample_id', 'identity', 'camera', 'entropy'])
        for record, h in zip(records, entropy):
            writer.writerow([record.sample_id, record.identity, record.camera_id, repr(float(h))])
        writer.writerow(['mean', '', '', repr(float(entropy.mean()))])
        summary = out / 'entropy.csv'
        summary.write_text(buffer.getvalue(), encoding='utf-8')

        if figures:
            plot_energy_maps(energy, [r.sample_id for r in records], str(out / 'figures'), figures, entropy)
        self.logger.info(f"Exported {len(records)} energy maps", {
            'source': source, 'mean_entropy': float(entropy.mean())
        })
        return summary


def _aggregate(reports: Sequence[MetricsReport]) -> Dict:
    """Mean and population std of each metric over seeds."""
    row: Dict = {}
    for name in ('rank1', 'map'):
        values = [getattr(r, name) for r in reports if getattr(r, name) is not None]
        if values:
            row[f'{name}_mean'] = float(np.mean(values))
            row[f'{name}_std'] = float(np.std(values))
    ks = sorted({k for r in reports for k in r.recall_at})
    for k in ks:
        values = [r.recall_at[k] for r in reports]
        row[f'recall@{k}_mean'] = float(np.mean(values))
        row[f'recall@{k}_std'] = float(np.std(values))
    return row
