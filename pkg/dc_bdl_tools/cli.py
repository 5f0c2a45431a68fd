"""
Command line interface: generate -> train -> predict -> evaluate.

    dc-bdl generate --config run.txt --out-dir data/
    dc-bdl train --config run.txt --data-dir data/ --model dc-lognormal --out runs/dcl.dcbw
    dc-bdl predict --checkpoint runs/dcl.dcbw --data-dir data/ --passes 50 --seed 1 --cdf-mode mixture --out-dir pred/
    dc-bdl evaluate --pred-dir pred/ --obs-dir data/ --out-dir eval/

Every command writes resolved_config.txt next to its outputs. Failures print one line,
error: <ExceptionName>: <message>, to stderr and exit with status 1.
"""
import argparse
import os
import sys

from dc_bdl_tools.ExperimentLevel import srcnn
from dc_bdl_tools.ExperimentLevel.Analyses import experiment_evaluate, experiment_predict, experiment_train
from dc_bdl_tools.ExperimentLevel.experiment_synthetic_data import ExperimentSyntheticData
from dc_bdl_tools.Utils import grid_helpers
from dc_bdl_tools.Utils import metric_helpers
from dc_bdl_tools.Utils.config_helpers import RunConfig
from dc_bdl_tools.Utils.errors import (ConfigError, ContractError, DomainError, NonFiniteError,
                                       TrainingDivergedError)

MODEL_CHOICES = {'gaussian': 'gaussian', 'dc-gaussian': 'dc_gaussian', 'dc-lognormal': 'dc_lognormal'}
CDF_MODE_CHOICES = {'matched': 'moment_matched', 'mixture': 'mc_mixture'}

HANDLED_ERRORS = (ConfigError, ContractError, DomainError, NonFiniteError, TrainingDivergedError, OSError)


def _require(path, what):
    if not os.path.exists(path):
        raise FileNotFoundError('{} {} does not exist'.format(what, path))


def _experiment_data(config, data_dir, model, name='cli'):
    """Load a DCG1 dataset with the derived low resolution input, using the data.* settings."""
    _require(data_dir, 'data directory')
    data = ExperimentSyntheticData(dataset=name, model=model)
    data.data_dir = data_dir
    for key, value in config.section('data').items():
        setattr(data, key, value)
    data.experiment_data = data.compute_data()
    return data


def cmd_generate(args, config):
    """Generate a synthetic dataset (precip/ day grids with a manifest plus elevation.dcg)."""
    syn = config.section('synthetic')
    precip, elevation = grid_helpers.generate_synthetic(grid_helpers.SyntheticConfig(**syn))
    grid_helpers.write_dataset(args.out_dir, precip, elevation)
    config.write_resolved(args.out_dir)
    print('wrote {} days of {}x{} grids to {}'.format(len(precip), syn['height'], syn['width'], args.out_dir))


def cmd_train(args, config):
    """Train one model on the training days of a dataset and write its checkpoint and training log."""
    model = config['train.model']
    data = _experiment_data(config, args.data_dir, model)
    normalizer = data.normalizer
    patches = data.patch_set(normalizer=normalizer)

    net = config.section('network')
    network_config = srcnn.NetworkConfig(net['kernel_sizes'], net['filters'], model, temperature=net['temperature'],
                                         init_p=net['init_p'])
    tr = config.section('train')
    training_config = experiment_train.TrainingConfig(tr['learning_rate'], tr['batch_size'], tr['iterations'],
                                                      tr['tau'], tr['length_scale'], tr['seed'], model,
                                                      data.dataset_size(), tr['log_every'])
    header = {'normalizer': normalizer.to_dict(), 'upscale_factor': data.upscale_factor}
    weights, log = experiment_train.train(training_config, patches, network_config, checkpoint_file=args.out,
                                          header=header, progress=False)

    out_dir = os.path.dirname(os.path.abspath(args.out))
    metric_helpers.write_table(log, os.path.splitext(args.out)[0] + '_training_log.csv')
    config.write_resolved(out_dir)
    print('trained {} for {} iterations, final dropout p {}'.format(
        model, tr['iterations'], ', '.join('{:.3f}'.format(p) for p in weights.dropout_probs)))


def cmd_predict(args, config):
    """Monte Carlo dropout prediction of a dataset's days; writes distribution grids and the pass set."""
    _require(args.checkpoint, 'checkpoint')
    weights, header = srcnn.load_weights(args.checkpoint)
    model = weights.config.model_tag
    if 'upscale_factor' in header:
        config.set('data.upscale_factor', header['upscale_factor'])
    data = _experiment_data(config, args.data_dir, model)
    normalizer = grid_helpers.Normalizer.from_dict(header['normalizer']) if 'normalizer' in header else \
        data.normalizer

    pr = config.section('predict')
    days = data.days_of(pr['days'])
    passes = experiment_predict.mc_predict(weights, data.model_inputs(days, normalizer), T=pr['passes'],
                                           seed=pr['seed'], chunk_size=pr['chunk_size'],
                                           precip_scale=normalizer.precip_scale)
    dist = experiment_predict.predict_distribution(passes, pr['cdf_mode'])
    experiment_predict.write_prediction(args.out_dir, passes, dist, [int(d) for d in days],
                                        data.elevation_grid().cell_size)
    config.write_resolved(args.out_dir)
    print('predicted {} days with {} passes to {}'.format(len(days), pr['passes'], args.out_dir))


def cmd_evaluate(args, config):
    """Evaluate a prediction directory against the observations of a dataset."""
    _require(args.pred_dir, 'prediction directory')
    dist, passes, days = experiment_predict.read_prediction(args.pred_dir)
    data = _experiment_data(config, args.obs_dir, dist.model_tag)

    ev = config.section('eval')
    res = experiment_evaluate.evaluate(dist, passes, data.observations(days), days, n_bins=ev['n_bins'],
                                       wet_only=ev['wet_only'], days_per_year=ev['days_per_year'],
                                       aggregate=ev['aggregate'], seed=ev['seed'])
    experiment_evaluate.write_evaluation(args.out_dir, res, dist.model_tag, data.elevation_grid().cell_size)
    config.write_resolved(args.out_dir)
    print('{}: RMSE {:.4f}, bias {:.4f}, full NLL {:.4f}, RMSE_cal {:.4f}'.format(
        dist.model_tag, res['metrics'].value('rmse'), res['metrics'].value('bias'), res['full_nll'],
        res['calibration'].rmse_cal))


def build_parser():
    parser = argparse.ArgumentParser(prog='dc-bdl', description='Bayesian deep learning precipitation downscaling.')
    sub = parser.add_subparsers(dest='command')
    sub.required = True

    p = sub.add_parser('generate', help='write a synthetic dataset')
    p.add_argument('--config', default=None)
    p.add_argument('--out-dir', required=True)
    p.add_argument('--seed', type=int, default=None)
    p.set_defaults(func=cmd_generate, overrides=lambda a: {'synthetic.seed': a.seed})

    p = sub.add_parser('train', help='train a model and write its checkpoint')
    p.add_argument('--config', default=None)
    p.add_argument('--data-dir', required=True)
    p.add_argument('--model', choices=sorted(MODEL_CHOICES), default=None)
    p.add_argument('--out', required=True, help='checkpoint file')
    p.add_argument('--iterations', type=int, default=None)
    p.add_argument('--seed', type=int, default=None)
    p.set_defaults(func=cmd_train, overrides=lambda a: {
        'train.model': MODEL_CHOICES.get(a.model), 'train.iterations': a.iterations, 'train.seed': a.seed})

    p = sub.add_parser('predict', help='Monte Carlo dropout prediction')
    p.add_argument('--config', default=None)
    p.add_argument('--checkpoint', required=True)
    p.add_argument('--data-dir', required=True)
    p.add_argument('--passes', type=int, default=None)
    p.add_argument('--seed', type=int, default=None)
    p.add_argument('--cdf-mode', choices=sorted(CDF_MODE_CHOICES), default=None)
    p.add_argument('--out-dir', required=True)
    p.set_defaults(func=cmd_predict, overrides=lambda a: {
        'predict.passes': a.passes, 'predict.seed': a.seed, 'predict.cdf_mode': CDF_MODE_CHOICES.get(a.cdf_mode)})

    p = sub.add_parser('evaluate', help='metrics, calibration and maps of a prediction')
    p.add_argument('--config', default=None)
    p.add_argument('--pred-dir', required=True)
    p.add_argument('--obs-dir', required=True)
    p.add_argument('--out-dir', required=True)
    p.set_defaults(func=cmd_evaluate, overrides=lambda a: {})
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        config = RunConfig.from_file(args.config).update(args.overrides(args))
        args.func(args, config)
    except HANDLED_ERRORS as e:
        msg = ' '.join(str(e).split())
        print('error: {}: {}'.format(type(e).__name__, msg), file=sys.stderr)
        return 1
    return 0


if __name__ == '__main__':
    sys.exit(main())
