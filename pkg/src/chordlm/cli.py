# encoding: utf-8
"""
Command line front end.

Commands: ``ingest`` (lab files -> corpus archive), ``split``, ``augment``,
``train`` (n-gram or recurrent models), ``search`` (Hyperband) and
``evaluate`` (test-set reports, curves, bootstrap CIs, paired tests).

Every artifact gets a ``<name>.manifest.json`` sidecar recording the
command, arguments, seeds, input hashes and toolkit version.  Reports
themselves contain no timestamps, so re-running a command from the same
manifest reproduces them byte for byte.  Exit codes: 0 success, 1 data
errors, 2 usage errors.
"""

import argparse
import json
import os
import sys
import time

import numpy as np

from .chords import MalformedLabel, vocabulary_hash
from .corpus import (augment_transpositions, deduplicate, load_manifest,
                     read_corpus, read_split, stratified_split, to_sequence,
                     write_corpus, write_split)
from .embeddings import train_skipgram
from .evaluation import (UniformModel, avg_log_prob, bootstrap_ci,
                         cumulative_curve, paired_test)
from .hyperband import SearchSpace, config_hash, run_hyperband
from .ngram import DEFAULT_ALPHA_GRID, NGramModel, average_log_prob, \
    tune_alpha
from .rnn import NeuralConfig, RecurrentLM, Trainer, fine_tune
from .utils import derive_seed, dump_json, file_sha256

TOOLKIT_VERSION = '0.1.0'

CELL_CHOICES = ('simple', 'lstm', 'gru')


class DataError(Exception):
    """Anything that should terminate the command with exit code 1."""


# ---------------------------------------------------------------------------
# manifests and model files
# ---------------------------------------------------------------------------

def _write_run_manifest(primary_output, command, args, inputs, outputs,
                        timing):
    snapshot = {key: value for key, value in vars(args).items()
                if key != 'func'}
    manifest = {
        'command': command,
        'arguments': snapshot,
        'seed': snapshot.get('seed'),
        'inputs': {path: file_sha256(path) for path in inputs
                   if path and os.path.exists(path)},
        'outputs': sorted(outputs),
        'toolkit_version': TOOLKIT_VERSION,
        'vocab_hash': vocabulary_hash(),
        'timing': timing,
    }
    dump_json(manifest, primary_output + '.manifest.json')


def load_model(path):
    """Load a model file for evaluation; 'uniform' is the 1/25 baseline."""
    if path == 'uniform':
        return UniformModel()
    if not os.path.exists(path):
        raise DataError('no such model file: %s' % path)
    if path.endswith('.json'):
        return NGramModel.load(path)
    return RecurrentLM.from_checkpoint(path)


def _load_split(args):
    sequences = read_corpus(args.corpus)
    split = read_split(args.split, sequences)
    return sequences, split


# ---------------------------------------------------------------------------
# ingest
# ---------------------------------------------------------------------------

def cmd_ingest(args):
    started = time.perf_counter()
    songs, file_errors = load_manifest(args.manifest)
    for path, error in file_errors:
        print('error: %s: %s' % (path, error), file=sys.stderr)

    sequences_by_id, label_errors = {}, []
    for song in songs:
        try:
            sequences_by_id[song.song_id] = to_sequence(song)
        except MalformedLabel as error:
            label_errors.append((song.song_id, error))
            print('error: %s' % error, file=sys.stderr)
    parsed = [song for song in songs if song.song_id in sequences_by_id]

    unique = deduplicate(parsed)
    unique_sequences = sorted(
        (sequences_by_id[song.song_id] for song in unique),
        key=lambda s: s.song_id)
    write_corpus(args.out, unique_sequences)

    per_dataset = {}
    for song in parsed:
        entry = per_dataset.setdefault(song.dataset_id,
                                       {'songs': 0, 'chords': 0,
                                        'unique_songs': 0,
                                        'unique_chords': 0})
        entry['songs'] += 1
        entry['chords'] += len(sequences_by_id[song.song_id].chords)
    for song in unique:
        entry = per_dataset[song.dataset_id]
        entry['unique_songs'] += 1
        entry['unique_chords'] += len(sequences_by_id[song.song_id].chords)

    stats = {
        'per_dataset': per_dataset,
        'total_songs': len(parsed),
        'total_chords': sum(d['chords'] for d in per_dataset.values()),
        'unique_songs': len(unique),
        'unique_chords': sum(len(s.chords) for s in unique_sequences),
        'failed_files': len(file_errors) + len(label_errors),
    }
    dump_json(stats, args.out + '.stats.json')

    print('%-12s %8s %8s' % ('dataset', 'songs', 'chords'))
    for dataset_id in sorted(per_dataset):
        entry = per_dataset[dataset_id]
        print('%-12s %8d %8d' % (dataset_id, entry['songs'],
                                 entry['chords']))
    print('%-12s %8d %8d' % ('total', stats['total_songs'],
                             stats['total_chords']))
    print('%-12s %8d %8d' % ('unique', stats['unique_songs'],
                             stats['unique_chords']))

    _write_run_manifest(args.out, 'ingest', args, [args.manifest],
                        [args.out, args.out + '.stats.json'],
                        {'seconds': time.perf_counter() - started})
    return 1 if (file_errors or label_errors) else 0


# ---------------------------------------------------------------------------
# split / augment
# ---------------------------------------------------------------------------

def cmd_split(args):
    started = time.perf_counter()
    sequences = read_corpus(args.corpus)
    split = stratified_split(sequences, args.seed,
                             test_fraction=args.test_fraction,
                             validation_fraction=args.validation_fraction)
    write_split(args.out, split)
    print('train %d / validation %d / test %d songs'
          % (len(split.train), len(split.validation), len(split.test)))
    _write_run_manifest(args.out, 'split', args, [args.corpus], [args.out],
                        {'seconds': time.perf_counter() - started})
    return 0


def cmd_augment(args):
    started = time.perf_counter()
    sequences, split = _load_split(args)
    augmented = augment_transpositions(split.train)
    write_corpus(args.out, augmented)
    print('%d train songs -> %d augmented songs'
          % (len(split.train), len(augmented)))
    _write_run_manifest(args.out, 'augment', args,
                        [args.corpus, args.split], [args.out],
                        {'seconds': time.perf_counter() - started})
    return 0


# ---------------------------------------------------------------------------
# train
# ---------------------------------------------------------------------------

def _training_sequences(split, augment):
    return augment_transpositions(split.train) if augment else split.train


def _train_ngram(args, split):
    training = _training_sequences(split, args.augment)
    model = NGramModel(args.order).fit(training)
    if args.alpha is not None:
        model = model.with_alpha(args.alpha)
        alpha_scores = {}
    else:
        best_alpha, alpha_scores = tune_alpha(model, split.validation,
                                              grid=args.alpha_grid)
        model = model.with_alpha(best_alpha)
    validation_score = average_log_prob(model, split.validation)
    model.save(args.out)
    report = {
        'kind': 'ngram',
        'order': args.order,
        'alpha': model.alpha,
        'alpha_scores': {repr(a): s for a, s in alpha_scores.items()},
        'validation_avg_log_prob': validation_score,
        'training_songs': len(training),
        'augmented': args.augment,
    }
    print('%d-gram: alpha=%s, validation avg log-prob %.6f'
          % (args.order, model.alpha, validation_score))
    return report


def _train_neural(args, split):
    training = _training_sequences(split, args.augment)
    config = NeuralConfig(
        cell=args.kind, num_layers=args.layers, hidden_size=args.hidden,
        embedding=args.embedding, embedding_dim=args.dim,
        skip_connections=args.skip, learning_rate=args.lr,
        batch_size=args.batch_size, patience=args.patience,
        max_epochs=args.max_epochs, seed=args.seed)

    embedding_table = None
    if config.embedding == 'skipgram':
        embedding_table = train_skipgram(
            training, config.embedding_dim,
            seed=derive_seed(args.seed, 'skipgram'))

    trainer = Trainer(config, training, split.validation,
                      embedding_table=embedding_table)
    report_obj = trainer.train()
    report = {
        'kind': args.kind,
        'config': config.to_dict(),
        'epochs': trainer.epoch,
        'best_epoch': report_obj.best_epoch,
        'best_validation_avg_log_prob': report_obj.best_score,
        'train_losses': report_obj.train_losses,
        'val_scores': report_obj.val_scores,
        'stopping_reason': report_obj.stopping_reason,
        'augmented': args.augment,
    }
    timing = {'epoch_seconds': report_obj.epoch_seconds}

    if args.fine_tune:
        model, score, tune_report = fine_tune(trainer)
        report['fine_tune'] = {
            'best_validation_avg_log_prob': score,
            'epochs': len(tune_report.val_scores),
            'val_scores': tune_report.val_scores,
            'improved': score > report_obj.best_score,
        }
        timing['fine_tune_epoch_seconds'] = tune_report.epoch_seconds
        trainer.best_params = model.params
        trainer.best_score = score
    trainer.save(args.out)

    print('%s: best validation avg log-prob %.6f at epoch %d (%s)'
          % (args.kind, trainer.best_score, report['best_epoch'],
             report['stopping_reason']))
    return report, timing


def cmd_train(args):
    started = time.perf_counter()
    _, split = _load_split(args)
    if args.kind == 'ngram':
        report = _train_ngram(args, split)
        timing = {}
    else:
        report, timing = _train_neural(args, split)
    dump_json(report, args.out + '.report.json')
    timing['seconds'] = time.perf_counter() - started
    _write_run_manifest(args.out, 'train', args, [args.corpus, args.split],
                        [args.out, args.out + '.report.json'], timing)
    return 0


# ---------------------------------------------------------------------------
# search
# ---------------------------------------------------------------------------

def cmd_search(args):
    started = time.perf_counter()
    _, split = _load_split(args)
    training = _training_sequences(split, args.augment)
    validation = split.validation

    embeddings = {}

    def embedding_for(dim):
        if dim not in embeddings:
            embeddings[dim] = train_skipgram(
                training, dim, seed=derive_seed(args.seed, 'skipgram', dim))
        return embeddings[dim]

    trainers = {}

    def objective(config, epochs):
        key = config_hash(config)
        if key not in trainers:
            table = (embedding_for(config.embedding_dim)
                     if config.embedding == 'skipgram' else None)
            trainers[key] = Trainer(config, training, validation,
                                    embedding_table=table)
        trainer = trainers[key]
        trainer.train_until(epochs)
        return trainer.best_score

    leaderboard_path = os.path.join(args.out, 'leaderboard.jsonl')
    os.makedirs(args.out, exist_ok=True)
    best_config, leaderboard = run_hyperband(
        SearchSpace(), args.cell, objective, eta=args.eta,
        max_resource=args.max_resource, seed=args.seed,
        total_configs=args.total_configs, leaderboard_path=leaderboard_path)

    best_path = os.path.join(args.out, 'best_config.json')
    if best_config is None:
        raise DataError('search produced no successful run')
    scores = [r['score'] for r in leaderboard if r['score'] is not None]
    dump_json({
        'cell': args.cell,
        'config': best_config.to_dict(),
        'config_hash': config_hash(best_config),
        'best_score': max(scores),
        'runs': len(leaderboard),
    }, best_path)
    print('best %s config: %s (score %.6f over %d runs)'
          % (args.cell, config_hash(best_config), max(scores),
             len(leaderboard)))
    _write_run_manifest(best_path, 'search', args,
                        [args.corpus, args.split],
                        [best_path, leaderboard_path],
                        {'seconds': time.perf_counter() - started})
    return 0


# ---------------------------------------------------------------------------
# evaluate
# ---------------------------------------------------------------------------

def _model_names(paths):
    names, seen = [], {}
    for path in paths:
        stem = (path if path == 'uniform'
                else os.path.splitext(os.path.basename(path))[0])
        seen[stem] = seen.get(stem, 0) + 1
        names.append(stem if seen[stem] == 1
                     else '%s#%d' % (stem, seen[stem]))
    return names


def cmd_evaluate(args):
    started = time.perf_counter()
    _, split = _load_split(args)
    part = getattr(split, args.part)
    if not part:
        raise DataError('the %s part is empty' % args.part)

    names = _model_names(args.models)
    models = [load_model(path) for path in args.models]

    report = {'part': args.part, 'songs': len(part), 'models': {}}
    results = {}
    for name, model in zip(names, models):
        result = avg_log_prob(model, part)
        results[name] = result
        entry = {
            'avg_log_prob': result.avg_log_prob,
            'neg_avg_log_prob': -result.avg_log_prob,
            'total_symbols': result.total_symbols,
            'per_dataset': {
                dataset: {'symbols': count, 'avg_log_prob': log_sum / count}
                for dataset, (count, log_sum) in
                sorted(result.per_dataset.items())
            },
        }
        if args.bootstrap:
            low, high = bootstrap_ci(result.per_song, seed=args.seed,
                                     resamples=args.resamples)
            entry['bootstrap_ci'] = [low, high]
        report['models'][name] = entry
        print('%-16s -L = %.6f  (%d symbols)'
              % (name, -result.avg_log_prob, result.total_symbols))

    if args.ttest and len(names) > 1:
        pairs = [(a, b) for i, a in enumerate(names)
                 for b in names[i + 1:]]
        tests = []
        for name_a, name_b in pairs:
            outcome = paired_test(results[name_a].per_song_means(),
                                  results[name_b].per_song_means(),
                                  num_comparisons=len(pairs))
            tests.append({
                'a': name_a, 'b': name_b,
                't_statistic': outcome.t_statistic,
                'p_value': outcome.p_value,
                'significant': outcome.significant,
                'alpha': outcome.alpha,
                'zero_variance': outcome.zero_variance,
            })
            print('t-test %s vs %s: t=%.3f p=%.2e %s'
                  % (name_a, name_b, outcome.t_statistic, outcome.p_value,
                     'significant' if outcome.significant else 'n.s.'))
        report['paired_tests'] = tests

    outputs = [args.out]
    if args.curves:
        curves = {}
        for name, model in zip(names, models):
            curves[name] = cumulative_curve(model, part,
                                            min_length=args.min_length)
        with open(args.curves, 'w', encoding='utf-8') as handle:
            handle.write('k,' + ','.join(names) + '\n')
            for row in range(args.min_length):
                values = ','.join(repr(float(curves[n].values[row]))
                                  for n in names)
                handle.write('%d,%s\n' % (row + 1, values))
        report['curves'] = {
            'file': args.curves,
            'min_length': args.min_length,
            'eligible_songs': curves[names[0]].song_count,
        }
        outputs.append(args.curves)

    dump_json(report, args.out)
    _write_run_manifest(args.out, 'evaluate', args,
                        [args.corpus, args.split] +
                        [p for p in args.models if p != 'uniform'],
                        outputs, {'seconds': time.perf_counter() - started})
    return 0


# ---------------------------------------------------------------------------
# argument parsing
# ---------------------------------------------------------------------------

def build_parser():
    parser = argparse.ArgumentParser(
        prog='chordlm',
        description='Chord sequence language models: corpus preparation, '
                    'n-gram and recurrent model training, hyper-parameter '
                    'search, and evaluation.')
    commands = parser.add_subparsers(dest='command', required=True)

    p = commands.add_parser('ingest', help='read .lab files into a corpus')
    p.add_argument('--manifest', required=True,
                   help='JSON manifest mapping dataset ids to .lab globs')
    p.add_argument('--out', required=True, help='corpus archive (JSONL)')
    p.set_defaults(func=cmd_ingest)

    p = commands.add_parser('split', help='stratified train/val/test split')
    p.add_argument('--corpus', required=True)
    p.add_argument('--out', required=True, help='split file (JSON)')
    p.add_argument('--seed', type=int, default=0)
    p.add_argument('--test-fraction', type=float, default=0.2)
    p.add_argument('--validation-fraction', type=float, default=0.15)
    p.set_defaults(func=cmd_split)

    p = commands.add_parser('augment',
                            help='transpose the training part to all keys')
    p.add_argument('--corpus', required=True)
    p.add_argument('--split', required=True)
    p.add_argument('--out', required=True,
                   help='augmented training corpus (JSONL)')
    p.set_defaults(func=cmd_augment)

    p = commands.add_parser('train', help='train one model')
    p.add_argument('--kind', required=True,
                   choices=('ngram',) + CELL_CHOICES)
    p.add_argument('--corpus', required=True)
    p.add_argument('--split', required=True)
    p.add_argument('--out', required=True,
                   help='model file (.json for ngram, .npz otherwise)')
    p.add_argument('--seed', type=int, default=0)
    p.add_argument('--augment', action='store_true',
                   help='train on the 12-key transposed training set')
    p.add_argument('--order', type=int, default=5,
                   help='ngram: model order N')
    p.add_argument('--alpha', type=float, default=None,
                   help='ngram: fix the pseudo-count instead of tuning')
    p.add_argument('--alpha-grid', type=float, nargs='+',
                   default=list(DEFAULT_ALPHA_GRID))
    p.add_argument('--layers', type=int, default=1)
    p.add_argument('--hidden', type=int, default=128)
    p.add_argument('--embedding', default='one-hot',
                   choices=('one-hot', 'learned', 'skipgram'))
    p.add_argument('--dim', type=int, default=25,
                   help='embedding dimension (ignored for one-hot)')
    p.add_argument('--skip', action='store_true',
                   help='enable skip connections')
    p.add_argument('--lr', type=float, default=0.001)
    p.add_argument('--batch-size', type=int, default=4)
    p.add_argument('--patience', type=int, default=15)
    p.add_argument('--max-epochs', type=int, default=1000)
    p.add_argument('--fine-tune', action='store_true',
                   help='continue from the best epoch at lr/10')
    p.set_defaults(func=cmd_train)

    p = commands.add_parser('search', help='Hyperband configuration search')
    p.add_argument('--cell', required=True, choices=CELL_CHOICES)
    p.add_argument('--corpus', required=True)
    p.add_argument('--split', required=True)
    p.add_argument('--out', required=True, help='output directory')
    p.add_argument('--seed', type=int, default=0)
    p.add_argument('--augment', action='store_true')
    p.add_argument('--eta', type=int, default=3)
    p.add_argument('--max-resource', type=int, default=9,
                   help='maximum epochs per run (81 at paper scale)')
    p.add_argument('--total-configs', type=int, default=None,
                   help='rescale the schedule to this many configs '
                        '(128 at paper scale)')
    p.set_defaults(func=cmd_search)

    p = commands.add_parser('evaluate', help='score models on a split part')
    p.add_argument('--models', required=True, nargs='+',
                   help="model files, or 'uniform' for the 1/25 baseline")
    p.add_argument('--corpus', required=True)
    p.add_argument('--split', required=True)
    p.add_argument('--out', required=True, help='report file (JSON)')
    p.add_argument('--part', default='test',
                   choices=('train', 'validation', 'test'))
    p.add_argument('--seed', type=int, default=0)
    p.add_argument('--bootstrap', action='store_true',
                   help='add 95%% bootstrap confidence intervals')
    p.add_argument('--resamples', type=int, default=1000)
    p.add_argument('--ttest', action='store_true',
                   help='paired t-tests with Bonferroni correction')
    p.add_argument('--curves', default=None, metavar='CSV',
                   help='write cumulative per-position curves')
    p.add_argument('--min-length', type=int, default=100)
    p.set_defaults(func=cmd_evaluate)

    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except DataError as error:
        print('error: %s' % error, file=sys.stderr)
        return 1
    except (OSError, ValueError, KeyError, RuntimeError) as error:
        print('error: %s: %s' % (type(error).__name__, error),
              file=sys.stderr)
        return 1


if __name__ == '__main__':
    sys.exit(main())
