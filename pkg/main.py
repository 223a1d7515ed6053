"""
Command-line entry point.

Commands: gen-data, train, eval, ablate, export-activation.
Exit codes: 0 success, 1 runtime failure, 2 invalid configuration or flags.
"""

import argparse
import sys
from pathlib import Path
from typing import Dict, List, Optional

from src.core.config import PRESETS, RunConfig, apply_file, apply_overrides, preset_config, sync_grid
from src.core.data import load_manifest
from src.core.errors import BDBError, ConfigError, SpecError
from src.core.experiment import SWEEPS, ExperimentManager, split_statistics_table
from src.core.network import DropKind, Pooling
from src.core.metric import MetricLoss
from src.utils.logging import RunLogger

EXIT_OK = 0
EXIT_RUNTIME = 1
EXIT_CONFIG = 2


def _add_config_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument('--preset', choices=PRESETS, default='desk', help='Base recipe')
    parser.add_argument('--config', type=Path, help='INI config file overlaid on the preset')
    parser.add_argument('--set', dest='overrides', action='append', default=[], metavar='SECTION.KEY=VALUE',
                        help='Override any config key (repeatable)')
    parser.add_argument('--log-dir', type=Path, help='Directory for rotating log files')


def _add_model_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument('--seed', type=int, help='Model and sampling seed')
    parser.add_argument('--drop', choices=[k.value for k in DropKind],
                        help='Dropping strategy (none trains the global-branch baseline)')
    parser.add_argument('--rh', type=float, help='Dropped block height ratio')
    parser.add_argument('--rw', type=float, help='Dropped block width ratio')
    parser.add_argument('--p', type=float, help='Drop probability for the dropout variants')
    parser.add_argument('--pooling', choices=[p.value for p in Pooling], help='Pooling on the dropping branch')
    parser.add_argument('--metric', choices=[m.value for m in MetricLoss], help='Metric loss')
    parser.add_argument('--no-global', action='store_true', help='Disable the global branch')
    parser.add_argument('--no-drop-branch', action='store_true', help='Disable the feature dropping branch')
    parser.add_argument('--no-triplet', action='store_true', help='Disable the metric loss terms')
    parser.add_argument('--no-softmax', action='store_true', help='Disable the softmax loss terms')
    parser.add_argument('--epochs', type=int, help='Total epochs (schedule decay points must still fit)')
    parser.add_argument('--eval-every', type=int, help='Evaluate every N epochs during training')


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog='bdb', description='Batch DropBlock metric-learning toolkit')
    commands = parser.add_subparsers(dest='command', required=True)

    gen = commands.add_parser('gen-data', help='Generate a synthetic manifest')
    _add_config_flags(gen)
    gen.add_argument('--out', type=Path, required=True, help='Manifest path')
    gen.add_argument('--seed', type=int, help='Generator seed')
    gen.add_argument('--cameras', type=int, help='Number of cameras')
    gen.add_argument('--train-ids', type=int, help='Train identities')
    gen.add_argument('--test-ids', type=int, help='Test identities')
    gen.add_argument('--images-per-id', type=int, help='Images per identity')
    gen.add_argument('--occlusion-rate', type=float, help='Upper-part occlusion probability')
    gen.add_argument('--query-occlusion-rate', type=float, help='Occlusion probability of queries')
    gen.add_argument('--noise', type=float, help='Per-patch noise level')
    gen.add_argument('--alignment-jitter', type=int, help='Max vertical shift in rows')

    train = commands.add_parser('train', help='Train, evaluate and write checkpoint, history and metrics')
    _add_config_flags(train)
    _add_model_flags(train)
    train.add_argument('--manifest', type=Path, help='Dataset manifest (synthetic data when omitted)')
    train.add_argument('--out-dir', type=Path, default=Path('runs/train'), help='Artifact directory')
    train.add_argument('--no-reports', action='store_true', help='Skip the HTML history chart')

    ev = commands.add_parser('eval', help='Score a checkpoint or embedding files')
    _add_config_flags(ev)
    ev.add_argument('--checkpoint', type=Path, help='Checkpoint to score')
    ev.add_argument('--manifest', type=Path, help='Dataset manifest for --checkpoint')
    ev.add_argument('--query-embeddings', type=Path, help='Query (or full set for retrieval) embedding file')
    ev.add_argument('--gallery-embeddings', type=Path, help='Gallery embedding file')
    ev.add_argument('--protocol', choices=['reid', 'retrieval'], help='Metric protocol')
    ev.add_argument('--ks', help='Comma-separated K values for Recall@K')
    ev.add_argument('--max-rank', type=int, help='CMC length')
    ev.add_argument('--out', type=Path, help='Metrics JSON path (stdout when omitted)')
    ev.add_argument('--dump-embeddings', type=Path, help='Directory for query/gallery embedding files')

    ab = commands.add_parser('ablate', help='Run a named ablation sweep over seeds')
    _add_config_flags(ab)
    _add_model_flags(ab)
    ab.add_argument('--sweep', required=True, help=f"One of: {', '.join(SWEEPS)}")
    ab.add_argument('--values', help='Comma-separated sweep values (ratio, alignment)')
    ab.add_argument('--seeds', type=int, default=3, help='Seeds per configuration')
    ab.add_argument('--manifest', type=Path, help='Dataset manifest (synthetic data when omitted)')
    ab.add_argument('--out-dir', type=Path, default=Path('runs/ablate'), help='Artifact directory')
    ab.add_argument('--workers', type=int, help='Worker threads (capped by BDB_THREADS)')
    ab.add_argument('--no-reports', action='store_true', help='Skip the HTML chart')

    ex = commands.add_parser('export-activation', help='Export spatial energy maps and entropies')
    _add_config_flags(ex)
    ex.add_argument('--checkpoint', type=Path, required=True, help='Checkpoint to run')
    ex.add_argument('--manifest', type=Path, required=True, help='Dataset manifest')
    ex.add_argument('--out-dir', type=Path, default=Path('runs/activation'), help='Artifact directory')
    ex.add_argument('--split', choices=['train', 'query', 'gallery'], default='query', help='Split part')
    ex.add_argument('--source', choices=['auto', 'backbone', 'drop'], default='auto', help='Which feature map')
    ex.add_argument('--figures', type=int, default=0, help='Render PNG heatmaps of the first N maps')
    return parser


def _overrides_from_set(items: List[str]) -> Dict[str, str]:
    overrides = {}
    for item in items:
        if '=' not in item:
            raise ConfigError(f"expected SECTION.KEY=VALUE, got {item!r}", key='--set')
        key, value = item.split('=', 1)
        overrides[key.strip()] = value
    return overrides


def _flag(value) -> Optional[str]:
    return None if value is None else str(value)


def _model_overrides(args: argparse.Namespace) -> Dict[str, Optional[str]]:
    overrides = {
        'run.seed': _flag(args.seed),
        'masks.kind': args.drop,
        'masks.r_h': _flag(args.rh),
        'masks.r_w': _flag(args.rw),
        'masks.p': _flag(args.p),
        'branches.drop_pooling': args.pooling,
        'losses.metric': args.metric,
        'train.total_epochs': _flag(args.epochs),
        'eval.eval_every': _flag(args.eval_every),
    }
    for flag, key in (('no_global', 'branches.use_global_branch'),
                      ('no_drop_branch', 'branches.use_drop_branch'),
                      ('no_triplet', 'losses.use_triplet'),
                      ('no_softmax', 'losses.use_softmax')):
        if getattr(args, flag):
            overrides[key] = 'false'
    if args.drop == DropKind.NONE.value:
        # the global-branch baseline: no dropping branch, softmax loss only
        overrides['branches.use_drop_branch'] = 'false'
        overrides['losses.use_triplet'] = 'false'
    return overrides


def build_config(args: argparse.Namespace, extra: Optional[Dict[str, Optional[str]]] = None) -> RunConfig:
    """Preset, then --config, then command flags, then --set."""
    cfg = preset_config(args.preset)
    if args.config is not None:
        apply_file(cfg, args.config)
    apply_overrides(cfg, extra or {})
    apply_overrides(cfg, _overrides_from_set(args.overrides))
    return cfg


def _adopt_manifest_grid(cfg: RunConfig, manifest: Optional[Path]):
    if manifest is None:
        return None
    split = load_manifest(manifest)
    sync_grid(cfg, split.grid.grid_h, split.grid.grid_w, split.grid.patch_dim)
    return split


def cmd_gen_data(args: argparse.Namespace) -> int:
    cfg = build_config(args, {
        'data.seed': _flag(args.seed),
        'data.cameras': _flag(args.cameras),
        'data.num_train_ids': _flag(args.train_ids),
        'data.num_test_ids': _flag(args.test_ids),
        'data.images_per_id': _flag(args.images_per_id),
        'data.occlusion_rate': _flag(args.occlusion_rate),
        'data.query_occlusion_rate': _flag(args.query_occlusion_rate),
        'data.noise': _flag(args.noise),
        'data.alignment_jitter': _flag(args.alignment_jitter),
    })
    cfg.data.validate()
    split, _ = ExperimentManager(args.out.parent, _log_dir(args)).generate_data(cfg, args.out)
    print(split_statistics_table(split))
    return EXIT_OK


def cmd_train(args: argparse.Namespace) -> int:
    cfg = build_config(args, _model_overrides(args))
    split = _adopt_manifest_grid(cfg, args.manifest)
    cfg.output_dir = str(args.out_dir)
    cfg.validate()
    manager = ExperimentManager(args.out_dir, _log_dir(args, args.out_dir))
    if split is None:
        split = manager.load_split(cfg, None)
    _, report = manager.train(cfg, split, args.out_dir, write_reports=not args.no_reports)
    print(f"rank1={report.rank1} map={report.map}")
    return EXIT_OK


def cmd_eval(args: argparse.Namespace) -> int:
    extra = {
        'eval.protocol': args.protocol,
        'eval.ks': args.ks,
        'eval.max_rank': _flag(args.max_rank),
    }
    cfg = build_config(args, extra)
    cfg.eval.validate()
    manager = ExperimentManager('.', _log_dir(args))
    if args.checkpoint is not None:
        if args.manifest is None:
            raise ConfigError("--checkpoint needs --manifest", key='--manifest')
        split = load_manifest(args.manifest)
        report = manager.evaluate_checkpoint(args.checkpoint, split, cfg, args.dump_embeddings)
    elif args.query_embeddings is not None:
        report = manager.evaluate_embeddings(args.query_embeddings, args.gallery_embeddings, cfg)
    else:
        raise ConfigError("give --checkpoint or --query-embeddings", key='--checkpoint')

    if args.out is not None:
        args.out.parent.mkdir(parents=True, exist_ok=True)
        args.out.write_text(report.to_json(), encoding='utf-8')
    else:
        sys.stdout.write(report.to_json())
    return EXIT_OK


def cmd_ablate(args: argparse.Namespace) -> int:
    cfg = build_config(args, _model_overrides(args))
    _adopt_manifest_grid(cfg, args.manifest)
    cfg.validate()
    values = None
    if args.values:
        try:
            values = [float(v) for v in args.values.split(',') if v.strip()]
        except ValueError:
            raise ConfigError(f"expected comma-separated numbers, got {args.values!r}", key='--values') from None
    manager = ExperimentManager(args.out_dir, _log_dir(args, args.out_dir))
    result = manager.ablate(
        cfg, args.sweep, seeds=args.seeds, values=values, manifest_path=args.manifest,
        out_dir=args.out_dir, workers=args.workers, write_reports=not args.no_reports
    )
    sys.stdout.write(result.to_csv())
    return EXIT_OK


def cmd_export_activation(args: argparse.Namespace) -> int:
    cfg = build_config(args)
    split = load_manifest(args.manifest)
    manager = ExperimentManager(args.out_dir, _log_dir(args, args.out_dir))
    summary = manager.export_activation(
        args.checkpoint, split, args.out_dir, part=args.split, source=args.source,
        figures=args.figures, batch_size=cfg.eval.batch_size
    )
    print(f"wrote {summary}")
    return EXIT_OK


def _log_dir(args: argparse.Namespace, out_dir: Optional[Path] = None) -> Optional[str]:
    if args.log_dir is not None:
        return str(args.log_dir)
    if out_dir is not None:
        return str(Path(out_dir) / 'logs')
    return None


COMMANDS = {
    'gen-data': cmd_gen_data,
    'train': cmd_train,
    'eval': cmd_eval,
    'ablate': cmd_ablate,
    'export-activation': cmd_export_activation,
}


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logger = RunLogger('cli')
    try:
        return COMMANDS[args.command](args)
    except (ConfigError, SpecError) as e:
        logger.error(f"Invalid configuration: {e}")
        print(f"error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except (BDBError, OSError) as e:
        logger.error(f"{args.command} failed: {e}")
        print(f"error: {e}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
