import argparse
import io
import logging
import os
import signal
import sys
import textwrap
import traceback

import numpy as np

from .logger import create_logger, setup_logging, teardown_logging
logger = create_logger()

from . import __version__
from .checkpoint import Checkpoint, load, load_pair, save
from .constants import *  # NOQA
from .experiment import make_base, continual_run, accuracy_matrix_to_csv, continual_to_json
from .helpers import Error, NoIntrudersError
from .helpers import EpsilonSpec, LambdaSpec, PositiveInt, NonNegativeInt, PositiveFloat, EpsilonList, KList, ListOf
from .helpers import json_dumps, read_json, format_float, sysinfo, log_multi
from .intervention import inject_rank_one, apply_plan, select_top_intruders, select_neighbors
from .intervention import plan_to_json, plan_from_json
from .linalg import make_rng, svd
from .platform import save_text
from .selftest import selftest
from .spectral import ScanConfig, SIDES, scan_model, epsilon_sweep, k_sweep, similarity_grid
from .spectral import report_to_json, report_from_json, report_to_csv, sweep_to_csv, sweep_to_json
from .spectral import grid_to_csv, grid_to_json
from .task import TaskSpec, make_task, proxy_task
from .trainer import TrainerConfig, ProxyProbe, body_layers, train

FORMATS = ('json', 'csv')

LOG_LEVEL_FLAGS = (
    (('--critical', ), 'critical', 'only log critical problems'),
    (('--error', ), 'error', 'log errors'),
    (('--warning', ), 'warning', 'log warnings and errors (default)'),
    (('--info', '-v', '--verbose'), 'info', 'also log run milestones'),
    (('--debug', ), 'debug', 'also log per-matrix and per-step details'),
)

# exit code -> (status word, log level) for --show-rc
RC_STATUS = {
    EXIT_SUCCESS: ('success', logging.INFO),
    EXIT_WARNING: ('warning', logging.WARNING),
    EXIT_ERROR: ('error', logging.ERROR),
    EXIT_EMPTY: ('empty', logging.WARNING),
    EXIT_DIVERGED: ('diverged', logging.ERROR),
}


def emit(text, path=None):
    """write a document to *path* (atomically), or to stdout when no path is given"""
    if path:
        save_text(path, text)
        logger.info('wrote %s', path)
    else:
        sys.stdout.write(text)


class Analyzer:

    def __init__(self, prog=None):
        self.exit_code = EXIT_SUCCESS
        self.log_handler = None
        self.parser = self.build_parser(prog)

    def print_warning(self, msg, *args):
        msg = args and msg % args or msg
        self.exit_code = EXIT_WARNING  # we do not terminate here, so it is a warning
        logger.warning(msg)

    def scan_config(self, args):
        return ScanConfig(args.epsilon, args.k, args.side)

    def do_analyze(self, args):
        """Count intruder dimensions of a tuned checkpoint against its base"""
        pair = load_pair(args.base, args.tuned)
        report = scan_model(pair, self.scan_config(args), workers=args.workers, effective_ranks=args.effective_rank)
        text = json_dumps(report_to_json(report)) if args.format == 'json' else report_to_csv(report)
        print('total=%d' % report.total)
        emit(text, args.out)
        return self.exit_code

    def do_sweep(self, args):
        """Intruder totals over a grid of epsilon or k values"""
        pair = load_pair(args.base, args.tuned)
        if args.ks is not None:
            parameter, values = 'k', args.ks
            totals = k_sweep(pair, values, args.epsilon, args.side, clamp=True, workers=args.workers)
            fixed = {'epsilon': args.epsilon, 'side': args.side}
        else:
            parameter, values = 'epsilon', args.epsilons or list(EPSILON_GRID)
            totals = epsilon_sweep(pair, values, args.k, args.side, clamp=True, workers=args.workers)
            fixed = {'k': args.k, 'side': args.side}
        if args.format == 'json':
            emit(json_dumps(sweep_to_json(parameter, values, totals, fixed)), args.out)
        else:
            emit(sweep_to_csv(parameter, values, totals), args.out)
        return self.exit_code

    def do_grid(self, args):
        """Absolute cosines between top base and top tuned singular vectors of one tensor"""
        pair = load_pair(args.base, args.tuned)
        grid = similarity_grid(pair.base[args.name], pair.tuned[args.name], args.k0, args.kt, args.name, args.side)
        emit(json_dumps(grid_to_json(grid)) if args.format == 'json' else grid_to_csv(grid), args.out)
        return self.exit_code

    def do_scale(self, args):
        """Rescale singular directions of a tuned checkpoint (intruders by default)"""
        pair = load_pair(args.base, args.tuned)
        if args.plan:
            plan = plan_from_json(read_json(args.plan))
            if args.lam is not None:
                plan = plan.with_lambda(args.lam)
        else:
            cfg = self.scan_config(args)
            report = scan_model(pair, cfg, workers=args.workers)
            if not report.total:
                raise NoIntrudersError(format_float(cfg.epsilon), cfg.k)
            lam = 0.0 if args.lam is None else args.lam
            plan = select_neighbors(report, lam) if args.neighbor else select_top_intruders(report, lam)
            if not len(plan):
                self.print_warning('no neighbour directions available, nothing scaled')
        edited = apply_plan(pair.tuned, plan)
        save(edited, args.out)
        emit(json_dumps(plan_to_json(plan)), args.out + '.plan.json')
        for name, entry in plan.items():
            logger.info('%s: direction %d scaled by %s', name, entry.index, format_float(entry.lam))
        print('edited=%d' % len(plan))
        return self.exit_code

    def task_spec(self, args, n_in, seed):
        return TaskSpec('task-%d' % seed, n_in=n_in, classes=args.classes, n_train=args.n_train,
                        n_test=args.n_test, seed=seed, margin=args.margin, noise=args.noise,
                        train_fraction=args.train_fraction)

    def load_base(self, args):
        if args.base:
            return load(args.base)
        return make_base(seed=args.base_seed)

    def do_train(self, args):
        """Fine-tune the toy model on a synthetic task, saving snapshots and a run summary"""
        cfg = TrainerConfig.from_args(args)
        base = self.load_base(args)
        n_in = body_layers(base)[0].shape[1]
        task = make_task(self.task_spec(args, n_in, args.task_seed))
        probe = ProxyProbe.fit(base, make_task(proxy_task(n_in=n_in, seed=args.proxy_seed)))
        run = train(base, task, cfg, probe, progress=args.progress)
        os.makedirs(args.out, exist_ok=True)
        paths = []
        for step, snapshot in run.snapshots:
            name = 'snapshot-%06d' % step
            save(snapshot, os.path.join(args.out, name))
            paths.append(name)
        emit(json_dumps(run.to_summary(paths)), os.path.join(args.out, 'summary.json'))
        print('accuracy=%s forgetting=%s' % (format_float(run.accuracy), format_float(run.forgetting)))
        return self.exit_code

    def do_continual(self, args):
        """Fine-tune on several synthetic tasks in sequence, merging adapters after every task"""
        cfg = TrainerConfig.from_args(args)
        base = self.load_base(args)
        n_in = body_layers(base)[0].shape[1]
        tasks = [make_task(self.task_spec(args, n_in, seed)) for seed in args.task_seeds]
        probe = ProxyProbe.fit(base, make_task(proxy_task(n_in=n_in, seed=args.proxy_seed)))
        result = continual_run(base, tasks, cfg, self.scan_config(args), probe, progress=args.progress)
        os.makedirs(args.out, exist_ok=True)
        paths = []
        for stage in result.stages:
            name = 'stage-%d' % stage.stage
            save(stage.checkpoint, os.path.join(args.out, name))
            paths.append(name)
        emit(accuracy_matrix_to_csv(result), os.path.join(args.out, 'accuracy.csv'))
        emit(json_dumps(continual_to_json(result, paths)), os.path.join(args.out, 'continual.json'))
        print('intruders=%s' % ','.join(str(total) for total in result.totals))
        return self.exit_code

    def do_report(self, args):
        """Convert a saved analyze report to CSV or a text table"""
        report = report_from_json(read_json(args.report))
        if args.format == 'csv':
            emit(report_to_csv(report), args.out)
            return self.exit_code
        lines = ['%-40s %10s  %s' % ('Tensor', 'Intruders', 'Ranks'), DASHES]
        for m in report.matrices:
            lines.append('%-40s %10d  %s' % (m.name, m.n_intruders, ','.join(str(r) for r in m.ranks)))
        lines += [DASHES, '%-40s %10d' % ('total (epsilon=%s, k=%d)' % (format_float(report.epsilon), report.k),
                                          report.total)]
        emit('\n'.join(lines) + '\n', args.out)
        return self.exit_code

    def do_debug_inject(self, args):
        """Write a base checkpoint and a copy with a rank-one direction injected into every tensor"""
        rng = make_rng(args.seed)
        base, tuned = {}, {}
        for i in range(args.count):
            name = 'layer.%d.weight' % i
            if args.identity:
                w = np.eye(args.n)
                v = np.full(args.n, 1 / np.sqrt(args.n))
            else:
                g = rng.standard_normal((args.n, args.n))
                w = g / svd(g).values[0]
                v = rng.standard_normal(args.n)
                v /= np.linalg.norm(v)
            base[name] = w
            tuned[name] = inject_rank_one(w, v, args.lam)
        metadata = {'kind': 'rank-one-injection', 'lambda': format_float(args.lam), 'seed': str(args.seed)}
        save(Checkpoint(base, {'kind': 'rank-one-base', 'seed': str(args.seed)}), args.base_out)
        save(Checkpoint(tuned, metadata), args.tuned_out)
        return self.exit_code

    def do_debug_make_base(self, args):
        """Write a synthetic pre-trained toy body"""
        base = make_base(args.n_in, args.hidden, args.seed, args.scale, args.decay)
        save(base, args.out)
        return self.exit_code

    def build_parser(self, prog=None):
        common_parser = argparse.ArgumentParser(add_help=False, prog=prog)

        common_group = common_parser.add_argument_group('Common options')
        common_group.add_argument('-h', '--help', action='help', help='show this help message and exit')
        for flags, level, help in LOG_LEVEL_FLAGS:
            common_group.add_argument(*flags, dest='log_level', action='store_const', const=level,
                                      default='warning', help=help)
        common_group.add_argument('--show-version', dest='show_version', action='store_true', default=False,
                                  help='show/log the intruder version')
        common_group.add_argument('--show-rc', dest='show_rc', action='store_true', default=False,
                                  help='show/log the return code (rc)')
        common_group.add_argument('--progress', dest='progress', action='store_true', default=False,
                                  help='show training progress')
        common_group.add_argument('--workers', dest='workers', type=PositiveInt, default=1, metavar='N',
                                  help='scan up to N tensors in parallel (default: %(default)d)')

        scan_parser = argparse.ArgumentParser(add_help=False)
        scan_group = scan_parser.add_argument_group('Scan options')
        scan_group.add_argument('--epsilon', dest='epsilon', type=EpsilonSpec, default=DEFAULT_EPSILON, metavar='E',
                                help='cosine threshold in (0, 1) (default: %(default)s)')
        scan_group.add_argument('--k', dest='k', type=PositiveInt, default=DEFAULT_K, metavar='K',
                                help='number of top tuned singular vectors examined (default: %(default)d)')
        scan_group.add_argument('--side', dest='side', choices=SIDES, default='left',
                                help='compare left or right singular vectors (default: %(default)s)')

        pair_parser = argparse.ArgumentParser(add_help=False)
        pair_parser.add_argument('base', metavar='BASE', help='base checkpoint (prefix or file name)')
        pair_parser.add_argument('tuned', metavar='TUNED', help='tuned checkpoint (prefix or file name)')

        format_parser = argparse.ArgumentParser(add_help=False)
        format_parser.add_argument('--format', dest='format', choices=FORMATS, default='json',
                                   help='output format (default: %(default)s)')
        format_parser.add_argument('-o', '--out', dest='out', metavar='PATH',
                                   help='write the output to PATH instead of standard output')

        trainer_parser = argparse.ArgumentParser(add_help=False)
        toy_group = trainer_parser.add_argument_group('Toy model options')
        toy_group.add_argument('--base', dest='base', metavar='CHECKPOINT',
                               help='start from this body (default: a synthetic base)')
        toy_group.add_argument('--base-seed', dest='base_seed', type=NonNegativeInt, default=BASE_SEED, metavar='S',
                               help='seed of the synthetic base (default: %(default)d)')
        toy_group.add_argument('--classes', dest='classes', type=PositiveInt, default=TASK_CLASSES, metavar='C',
                               help='number of classes (default: %(default)d)')
        toy_group.add_argument('--n-train', dest='n_train', type=PositiveInt, default=TASK_TRAIN_SIZE, metavar='N',
                               help='training samples (default: %(default)d)')
        toy_group.add_argument('--n-test', dest='n_test', type=PositiveInt, default=TASK_TEST_SIZE, metavar='N',
                               help='test samples (default: %(default)d)')
        toy_group.add_argument('--margin', dest='margin', type=PositiveFloat, default=TASK_MARGIN, metavar='M',
                               help='norm of the class means (default: %(default)s)')
        toy_group.add_argument('--noise', dest='noise', type=PositiveFloat, default=TASK_NOISE, metavar='S',
                               help='norm of the sample noise (default: %(default)s)')
        toy_group.add_argument('--train-fraction', dest='train_fraction', type=PositiveFloat, default=1.0, metavar='F',
                               help='train on this fraction of the training split (default: %(default)s)')
        toy_group.add_argument('--proxy-seed', dest='proxy_seed', type=NonNegativeInt, default=PROXY_SEED,
                               metavar='S', help='seed of the forgetting proxy task (default: %(default)d)')
        train_group = trainer_parser.add_argument_group('Trainer options')
        train_group.add_argument('--mode', dest='mode', choices=TRAINER_MODES, default=DEFAULT_MODE,
                                 help='fine-tuning method (default: %(default)s)')
        train_group.add_argument('--rank', dest='rank', type=PositiveInt, default=DEFAULT_RANK, metavar='R',
                                 help='LoRA rank (default: %(default)d)')
        train_group.add_argument('--alpha', dest='alpha', type=PositiveFloat, default=FIXED_ALPHA, metavar='A',
                                 help='LoRA alpha, the update is scaled by alpha / rank (default: %(default)s)')
        train_group.add_argument('--lr', dest='lr', type=PositiveFloat, default=DEFAULT_LR, metavar='ETA',
                                 help='learning rate (default: %(default)s)')
        train_group.add_argument('--steps', dest='steps', type=NonNegativeInt, default=DEFAULT_STEPS, metavar='N',
                                 help='gradient steps (default: %(default)d)')
        train_group.add_argument('--batch-size', dest='batch_size', type=PositiveInt, default=DEFAULT_BATCH_SIZE,
                                 metavar='B', help='batch size (default: %(default)d)')
        train_group.add_argument('--snapshot-interval', dest='snapshot_interval', type=PositiveInt, metavar='N',
                                 help='snapshot every N steps (default: every 10%% of the steps)')
        train_group.add_argument('--seed', dest='seed', type=NonNegativeInt, default=0, metavar='S',
                                 help='trainer seed: adapter init and batch order (default: %(default)d)')

        parser = argparse.ArgumentParser(prog=prog, description='intruder - spectral diffing of fine-tuned checkpoints')
        parser.add_argument('-V', '--version', action='version', version='%(prog)s ' + __version__,
                            help='show version number and exit')
        subparsers = parser.add_subparsers(title='required arguments', metavar='<command>')

        analyze_epilog = textwrap.dedent("""
        For every tensor of the pair, the top-k left singular vectors of the tuned
        matrix are compared against all singular vectors of the base matrix. A tuned
        vector whose largest absolute cosine stays below epsilon is an intruder
        dimension. k is clamped to the smaller dimension of small matrices.

        The number of intruders over all tensors is printed as "total=<N>". The full
        report (per tensor: ranks, cosines, singular values) follows on stdout as
        JSON or CSV, or goes to the file given with --out.
        """)
        subparser = subparsers.add_parser('analyze', parents=[common_parser, pair_parser, scan_parser, format_parser],
                                          add_help=False, description=self.do_analyze.__doc__, epilog=analyze_epilog,
                                          formatter_class=argparse.RawDescriptionHelpFormatter,
                                          help='count intruder dimensions')
        subparser.set_defaults(func=self.do_analyze)
        subparser.add_argument('--effective-rank', dest='effective_rank', action='store_true', default=False,
                               help='also report the effective rank of every update tuned - base')

        sweep_epilog = textwrap.dedent("""
        Either --epsilons or --ks gives the grid (strictly increasing, comma
        separated); the other parameter stays fixed at --epsilon / --k. Without a
        grid, epsilon is swept over 0.1 .. 0.9. Totals never decrease along either
        grid.
        """)
        subparser = subparsers.add_parser('sweep', parents=[common_parser, pair_parser, scan_parser, format_parser],
                                          add_help=False, description=self.do_sweep.__doc__, epilog=sweep_epilog,
                                          formatter_class=argparse.RawDescriptionHelpFormatter,
                                          help='sweep epsilon or k')
        subparser.set_defaults(func=self.do_sweep)
        grid_group = subparser.add_mutually_exclusive_group()
        grid_group.add_argument('--epsilons', dest='epsilons', type=EpsilonList, metavar='E1,E2,...',
                                help='epsilon grid')
        grid_group.add_argument('--ks', dest='ks', type=KList, metavar='K1,K2,...',
                                help='k grid')

        subparser = subparsers.add_parser('grid', parents=[common_parser, pair_parser, format_parser],
                                          add_help=False, description=self.do_grid.__doc__,
                                          formatter_class=argparse.RawDescriptionHelpFormatter,
                                          help='similarity grid of one tensor')
        subparser.set_defaults(func=self.do_grid)
        subparser.add_argument('--name', dest='name', required=True, metavar='TENSOR',
                               help='tensor to compare')
        subparser.add_argument('--k0', dest='k0', type=PositiveInt, default=DEFAULT_K, metavar='K',
                               help='base singular vectors, rows of the grid (default: %(default)d)')
        subparser.add_argument('--kt', dest='kt', type=PositiveInt, default=DEFAULT_K, metavar='K',
                               help='tuned singular vectors, columns of the grid (default: %(default)d)')
        subparser.add_argument('--side', dest='side', choices=SIDES, default='left',
                               help='compare left or right singular vectors (default: %(default)s)')

        scale_epilog = textwrap.dedent("""
        Every selected direction i of a tuned matrix W is replaced by
        W + (lambda - 1) * sigma_i u_i v_i^T: lambda = 0 removes it, lambda < 1
        attenuates and lambda > 1 amplifies it.

        Without --plan, the intruder with the largest singular value is selected in
        every tensor that has one (with --neighbor: the adjacent non-intruder
        direction instead). The edited checkpoint is written to OUT and the plan
        that was applied to OUT.plan.json. If the scan finds no intruders the
        command fails with rc 3.
        """)
        subparser = subparsers.add_parser('scale', parents=[common_parser, pair_parser, scan_parser],
                                          add_help=False, description=self.do_scale.__doc__, epilog=scale_epilog,
                                          formatter_class=argparse.RawDescriptionHelpFormatter,
                                          help='rescale intruder directions')
        subparser.set_defaults(func=self.do_scale)
        subparser.add_argument('--lambda', dest='lam', type=LambdaSpec, metavar='L',
                               help='scaling factor (default: 0, or the factors stored in --plan)')
        subparser.add_argument('--plan', dest='plan', metavar='PLAN',
                               help='apply this plan JSON instead of scanning')
        subparser.add_argument('--neighbor', dest='neighbor', action='store_true', default=False,
                               help='scale the direction next to each top intruder (control)')
        subparser.add_argument('-o', '--out', dest='out', required=True, metavar='OUT',
                               help='edited checkpoint prefix')

        train_epilog = textwrap.dedent("""
        Trains the toy model (ReLU body, linear softmax head) with plain gradient
        descent. Snapshots of the (merged) body are written to OUT/snapshot-<step>,
        the run summary to OUT/summary.json. Forgetting is the test loss on a
        held-out proxy task under a head fitted once on the base body.

        A non-finite loss stops training with rc 4.
        """)
        subparser = subparsers.add_parser('train', parents=[common_parser, trainer_parser],
                                          add_help=False, description=self.do_train.__doc__, epilog=train_epilog,
                                          formatter_class=argparse.RawDescriptionHelpFormatter,
                                          help='fine-tune the toy model')
        subparser.set_defaults(func=self.do_train)
        subparser.add_argument('--task-seed', dest='task_seed', type=NonNegativeInt, default=0, metavar='S',
                               help='seed of the synthetic task (default: %(default)d)')
        subparser.add_argument('-o', '--out', dest='out', required=True, metavar='DIR',
                               help='run directory')

        continual_epilog = textwrap.dedent("""
        Trains on one synthetic task per --task-seeds entry, in order. LoRA adapters
        are merged into the body after every task and re-initialized for the next.
        After every stage all tasks trained so far are evaluated with a freshly
        fitted head and the body is scanned against the original base.

        Writes OUT/stage-<i> checkpoints, OUT/accuracy.csv and OUT/continual.json.
        """)
        subparser = subparsers.add_parser('continual', parents=[common_parser, trainer_parser, scan_parser],
                                          add_help=False, description=self.do_continual.__doc__,
                                          epilog=continual_epilog,
                                          formatter_class=argparse.RawDescriptionHelpFormatter,
                                          help='sequential fine-tuning on several tasks')
        subparser.set_defaults(func=self.do_continual)
        subparser.add_argument('--task-seeds', dest='task_seeds', type=ListOf(NonNegativeInt),
                               default=list(CONTINUAL_TASK_SEEDS), metavar='S1,S2,...',
                               help='one task per seed, trained in this order (default: 1,2,3)')
        subparser.add_argument('-o', '--out', dest='out', required=True, metavar='DIR',
                               help='run directory')

        subparser = subparsers.add_parser('report', parents=[common_parser],
                                          add_help=False, description=self.do_report.__doc__,
                                          formatter_class=argparse.RawDescriptionHelpFormatter,
                                          help='convert a saved report')
        subparser.set_defaults(func=self.do_report)
        subparser.add_argument('report', metavar='REPORT', help='JSON report written by "analyze --out"')
        subparser.add_argument('--format', dest='format', choices=('csv', 'text'), default='text',
                               help='output format (default: %(default)s)')
        subparser.add_argument('-o', '--out', dest='out', metavar='PATH',
                               help='write the output to PATH instead of standard output')

        debug_inject_epilog = textwrap.dedent("""
        Every tensor of the base is a random matrix normalized to spectral norm 1
        (with --identity: the identity), the tuned copy adds lambda * v v^T for a
        random unit v (with --identity: the uniform unit vector).
        """)
        subparser = subparsers.add_parser('debug-inject', parents=[common_parser],
                                          add_help=False, description=self.do_debug_inject.__doc__,
                                          epilog=debug_inject_epilog,
                                          formatter_class=argparse.RawDescriptionHelpFormatter,
                                          help='write a rank-one injection pair (debug)')
        subparser.set_defaults(func=self.do_debug_inject)
        subparser.add_argument('base_out', metavar='BASE', help='base checkpoint prefix')
        subparser.add_argument('tuned_out', metavar='TUNED', help='tuned checkpoint prefix')
        subparser.add_argument('--n', dest='n', type=PositiveInt, default=TOY_HIDDEN_DIM, metavar='N',
                               help='matrix size (default: %(default)d)')
        subparser.add_argument('--count', dest='count', type=PositiveInt, default=1, metavar='C',
                               help='number of tensors (default: %(default)d)')
        subparser.add_argument('--lambda', dest='lam', type=LambdaSpec, default=10.0, metavar='L',
                               help='injection strength (default: %(default)s)')
        subparser.add_argument('--identity', dest='identity', action='store_true', default=False,
                               help='inject into identity matrices along the uniform vector')
        subparser.add_argument('--seed', dest='seed', type=NonNegativeInt, default=0, metavar='S',
                               help='random seed (default: %(default)d)')

        subparser = subparsers.add_parser('debug-make-base', parents=[common_parser],
                                          add_help=False, description=self.do_debug_make_base.__doc__,
                                          formatter_class=argparse.RawDescriptionHelpFormatter,
                                          help='write a synthetic toy base (debug)')
        subparser.set_defaults(func=self.do_debug_make_base)
        subparser.add_argument('out', metavar='OUT', help='checkpoint prefix')
        subparser.add_argument('--n-in', dest='n_in', type=PositiveInt, default=TOY_INPUT_DIM, metavar='N',
                               help='input dimension (default: %(default)d)')
        subparser.add_argument('--hidden', dest='hidden', type=PositiveInt, default=TOY_HIDDEN_DIM, metavar='H',
                               help='hidden dimension (default: %(default)d)')
        subparser.add_argument('--seed', dest='seed', type=NonNegativeInt, default=BASE_SEED, metavar='S',
                               help='random seed (default: %(default)d)')
        subparser.add_argument('--scale', dest='scale', type=PositiveFloat, default=BASE_SPECTRUM_SCALE,
                               metavar='S', help='largest singular value (default: %(default)s)')
        subparser.add_argument('--decay', dest='decay', type=PositiveFloat, default=BASE_SPECTRUM_DECAY,
                               metavar='D', help='ratio of consecutive singular values (default: %(default)s)')
        return parser

    def parse_args(self, args=None):
        args = self.parser.parse_args(args or ['-h'])
        if not hasattr(args, 'func'):
            self.parser.error('a command is required')
        return args

    def prerun_checks(self, logger):
        if os.environ.get('INTRUDER_SELFTEST') != 'disabled':
            selftest(logger)

    def _setup_implied_logging(self, args):
        """ turn on INFO level logging for args that imply that they will produce output """
        # map of option name to name of logger for that option
        option_logger = {
            'show_version': 'intruder.output.show-version',
            'show_rc': 'intruder.output.show-rc',
            'progress': 'intruder.output.progress',
        }
        for option, logger_name in option_logger.items():
            if args.get(option, False):
                logging.getLogger(logger_name).setLevel('INFO')

    def run(self, args):
        self.log_handler = setup_logging(level=args.log_level)  # do not use loggers before this!
        self._setup_implied_logging(vars(args))
        if args.show_version:
            logging.getLogger('intruder.output.show-version').info('intruder version %s' % __version__)
        self.prerun_checks(logger)
        return args.func(args)


def dispatch(argv, analyzer=None):
    """parse *argv*, run the command and map every failure to its exit code"""
    analyzer = analyzer or Analyzer()
    try:
        args = analyzer.parse_args(argv)
    except SystemExit as e:
        # argparse already printed usage and the problem to stderr
        return EXIT_ERROR if e.code else EXIT_SUCCESS
    msg = None
    try:
        exit_code = analyzer.run(args)
    except Error as e:
        msg = e.get_message()
        if e.traceback:
            msg = '%s\n%s\n%s' % (msg, traceback.format_exc(), sysinfo())
        exit_code = e.exit_code
    except SIGTERMReceived:
        msg, exit_code = 'Terminated by SIGTERM.', EXIT_ERROR
    except (Exception, KeyboardInterrupt) as e:
        reason = 'Interrupted.' if isinstance(e, KeyboardInterrupt) else 'Unexpected error.'
        msg, exit_code = '%s\n%s\n%s' % (reason, traceback.format_exc(), sysinfo()), EXIT_ERROR
    if msg:
        if analyzer.log_handler is None and not logging.getLogger('').handlers:
            print(msg, file=sys.stderr)
        else:
            log_multi(msg, level=logging.ERROR, logger=logger)
    if args.show_rc:
        status, level = RC_STATUS.get(exit_code, ('abnormal', logging.ERROR))
        logging.getLogger('intruder.output.show-rc').log(level, 'terminating with %s status, rc %d', status, exit_code)
    teardown_logging(analyzer.log_handler)
    analyzer.log_handler = None
    return exit_code


class SIGTERMReceived(BaseException):
    pass


def sig_term_handler(signum, stack):
    raise SIGTERMReceived


def setup_signal_handlers():  # pragma: no cover
    signal.signal(signal.SIGTERM, sig_term_handler)


def main():  # pragma: no cover
    # Make sure stdout and stderr have errors='replace' to avoid unicode
    # issues when print()-ing tensor names
    sys.stdout = io.TextIOWrapper(sys.stdout.buffer, sys.stdout.encoding, 'replace', line_buffering=True)
    sys.stderr = io.TextIOWrapper(sys.stderr.buffer, sys.stderr.encoding, 'replace', line_buffering=True)
    setup_signal_handlers()
    sys.exit(dispatch(sys.argv[1:]))


if __name__ == '__main__':
    main()
