"""
toy experiments
===============

Seeded harnesses on top of the trainer: a synthetic pre-trained base, the
full vs. LoRA comparison, the scaling intervention sweep, a learning-rate
sweep correlating intruders with forgetting, the alpha/rank study and
sequential (continual) fine-tuning with merge-and-reinitialize.
"""

from collections import namedtuple

import numpy as np
from scipy.linalg import block_diag

from .checkpoint import Checkpoint, validate_pair
from .constants import *  # NOQA
from .helpers import InvalidInput, NoIntrudersError, DivergenceError, UndefinedCorrelation
from .helpers import parallel_map, format_float, csv_text
from .intervention import apply_plan, select_top_intruders, select_neighbors
from .linalg import make_rng, random_orthogonal, effective_rank, svd
from .logger import create_logger
from .spectral import ScanConfig, scan_model, correlate
from .task import known_inputs
from .trainer import TrainerConfig, train, body_layers, accuracy, measure_forgetting, retrained_accuracy

logger = create_logger()


def make_base(n_in=TOY_INPUT_DIM, hidden=TOY_HIDDEN_DIM, seed=BASE_SEED, scale=BASE_SPECTRUM_SCALE,
              decay=BASE_SPECTRUM_DECAY, names=BODY_NAMES):
    """synthetic pre-trained body: layer l is U diag(scale * decay**i) V^T with random orthogonal U, V

    The first layer's V is block diagonal: its leading singular directions read
    only the known_inputs(n_in) leading input coordinates, the weaker ones only
    the remaining coordinates.
    """
    if not scale > 0 or not 0 < decay <= 1:
        raise InvalidInput('need scale > 0 and 0 < decay <= 1, got %r and %r' % (scale, decay))
    if n_in < 1 or hidden < 1:
        raise InvalidInput('dimensions must be positive, got n_in=%r hidden=%r' % (n_in, hidden))
    if list(names) != sorted(names):
        raise InvalidInput('layer names must sort in layer order: %r' % (list(names), ))
    rng = make_rng(seed)
    entries = {}
    cols = n_in
    for layer, name in enumerate(names):
        u = random_orthogonal(hidden, rng)
        known = known_inputs(cols)
        if layer == 0 and known:
            v = block_diag(random_orthogonal(known, rng), random_orthogonal(cols - known, rng))
        else:
            v = random_orthogonal(cols, rng)
        p = min(hidden, cols)
        values = scale * decay ** np.arange(p)
        entries[name] = (u[:, :p] * values) @ v[:, :p].T
        cols = hidden
    metadata = {'kind': 'synthetic-base', 'seed': str(seed), 'rng': RNG_ALGORITHM}
    return Checkpoint(entries, metadata)


def scan_run(base, run, cfg=None, effective_ranks=False):
    """intruder report of a run's final snapshot against *base*"""
    return scan_model(validate_pair(base, run.final), cfg or ScanConfig(), effective_ranks=effective_ranks)


def comparison_configs(seed=0, steps=DEFAULT_STEPS, ranks=COMPARISON_RANKS):
    """label -> TrainerConfig for full fine-tuning and LoRA at each rank (pinned lr, alpha = 8)"""
    configs = {'full': TrainerConfig('full', lr=COMPARISON_FULL_LR, steps=steps, seed=seed)}
    for rank in ranks:
        configs['lora-r%d' % rank] = TrainerConfig('lora', rank=rank, alpha=COMPARISON_LORA_ALPHA,
                                                   lr=COMPARISON_LORA_LR, steps=steps, seed=seed)
    return configs


ComparisonRow = namedtuple('ComparisonRow', 'label run report')


def method_comparison(base, task, configs, probe=None, scan_cfg=None, workers=1):
    """train every config on *task* (independent runs, optionally in parallel) and scan each final snapshot"""
    labels = list(configs)

    def run_one(label):
        run = train(base, task, configs[label], probe)
        report = scan_run(base, run, scan_cfg, effective_ranks=True)
        logger.info('%s: accuracy %.4f, %d intruders', label, run.accuracy, report.total)
        return ComparisonRow(label, run, report)

    return parallel_map(run_one, labels, workers)


LambdaRow = namedtuple('LambdaRow', 'target lam accuracy forgetting')


def lambda_sweep(run, base, task, probe, lambdas=LAMBDA_GRID, scan_cfg=None):
    """rescale the top intruder of every matrix (and, as control, its neighbour) for each lambda

    Accuracy uses the run's trained head, forgetting the frozen proxy head;
    lambda = 1 reproduces the unedited run.
    """
    cfg = scan_cfg or ScanConfig()
    report = scan_run(base, run, cfg)
    plans = {'intruder': select_top_intruders(report, 1.0), 'neighbor': select_neighbors(report, 1.0)}
    if not len(plans['intruder']):
        raise NoIntrudersError(cfg.epsilon, cfg.k)
    rows = []
    for target, plan in plans.items():
        if not len(plan):
            logger.warning('no neighbour direction available, skipping the control rows')
            continue
        for lam in lambdas:
            edited = apply_plan(run.final, plan.with_lambda(lam))
            body = body_layers(edited)
            rows.append(LambdaRow(target, float(lam), accuracy(body, run.head, task.x_test, task.y_test),
                                  measure_forgetting(edited, probe)))
    return rows


def lambda_sweep_to_csv(rows):
    return csv_text([('target', 'lambda', 'accuracy', 'forgetting')] + [
        (row.target, format_float(row.lam), format_float(row.accuracy), format_float(row.forgetting)) for row in rows])


LrRow = namedtuple('LrRow', 'lr seed total forgetting accuracy')
LrSweepResult = namedtuple('LrSweepResult', 'rows rho')


def lr_sweep(base, task, probe, cfg=None, lrs=LR_GRID, seeds=COMPARISON_SEEDS, scan_cfg=None, workers=1):
    """train one run per (lr, seed), then correlate final intruder totals with forgetting

    Diverged runs are kept as rows with total/forgetting None and left out of the correlation.
    """
    cfg = cfg or TrainerConfig('lora', rank=LR_SWEEP_RANK, alpha=2.0 * LR_SWEEP_RANK)
    grid = [(lr, seed) for lr in lrs for seed in seeds]

    def run_one(point):
        lr, seed = point
        try:
            run = train(base, task, TrainerConfig(**dict(cfg._asdict(), lr=lr, seed=seed)), probe)
        except DivergenceError as err:
            logger.warning('lr=%s seed=%d: %s', lr, seed, err.get_message())
            return LrRow(lr, seed, None, None, None)
        return LrRow(lr, seed, scan_run(base, run, scan_cfg).total, run.forgetting, run.accuracy)

    rows = parallel_map(run_one, grid, workers)
    finished = [row for row in rows if row.total is not None]
    try:
        rho = correlate([row.total for row in finished], [row.forgetting for row in finished])
    except UndefinedCorrelation as err:
        logger.warning(err.get_message())
        rho = None
    return LrSweepResult(rows, rho)


AlphaRankRow = namedtuple('AlphaRankRow', 'rank alpha effective_rank total')


def alpha_rank_study(base, task, cfg=None, ranks=COMPARISON_RANKS, scan_cfg=None, workers=1):
    """per rank r: LoRA with alpha = 2r and with alpha = 8; mean effective rank of the merged update, intruders"""
    cfg = cfg or TrainerConfig('lora', lr=COMPARISON_LORA_LR)
    grid = [(rank, alpha) for rank in ranks for alpha in (2.0 * rank, FIXED_ALPHA)]

    def run_one(point):
        rank, alpha = point
        run = train(base, task, TrainerConfig(**dict(cfg._asdict(), rank=rank, alpha=alpha)))
        eranks = []
        for name in base.names:
            values = svd(run.final[name] - base[name]).values
            eranks.append(effective_rank(values) if np.any(values > 0) else 0.0)
        return AlphaRankRow(rank, alpha, float(np.mean(eranks)), scan_run(base, run, scan_cfg).total)

    return parallel_map(run_one, grid, workers)


StageResult = namedtuple('StageResult', 'stage task_id checkpoint accuracies total forgetting')


class ContinualResult(namedtuple('ContinualResult', 'task_ids stages')):
    __slots__ = ()

    def accuracy_matrix(self):
        """stages x tasks; entries for tasks not yet trained are None"""
        return [list(stage.accuracies) for stage in self.stages]

    @property
    def totals(self):
        return [stage.total for stage in self.stages]


def continual_run(base, tasks, cfg, scan_cfg=None, probe=None, progress=False):
    """train on *tasks* in order, each stage starting from the previous stage's merged body

    LoRA adapters are merged after every stage and the next stage starts with
    fresh adapters (seed cfg.seed + stage). After each stage every task seen so
    far is evaluated with a freshly fitted head, and the body is scanned
    against the original base.
    """
    tasks = list(tasks)
    if not tasks:
        raise InvalidInput('continual learning needs at least one task')
    scan_cfg = scan_cfg or ScanConfig()
    current = base
    stages = []
    for stage, task in enumerate(tasks):
        stage_cfg = TrainerConfig(**dict(cfg._asdict(), seed=cfg.seed + stage))
        run = train(current, task, stage_cfg, probe, progress)
        current = run.final.replace(metadata={'stage': str(stage)})
        body = body_layers(current)
        accuracies = [retrained_accuracy(body, t) if j <= stage else None for j, t in enumerate(tasks)]
        total = scan_model(validate_pair(base, current), scan_cfg).total
        logger.info('stage %d (%s): %d intruders vs. base', stage, task.spec.task_id, total)
        stages.append(StageResult(stage, task.spec.task_id, current, accuracies, total, run.forgetting))
    return ContinualResult([t.spec.task_id for t in tasks], stages)


def accuracy_matrix_to_csv(result):
    """one row per stage: stage, trained task, accuracy per task (empty if not yet trained), intruder total"""
    rows = [['stage', 'task'] + list(result.task_ids) + ['intruders']]
    for stage in result.stages:
        cells = ['' if a is None else format_float(a) for a in stage.accuracies]
        rows.append([stage.stage, stage.task_id] + cells + [stage.total])
    return csv_text(rows)


def continual_to_json(result, checkpoint_paths=()):
    return dict(
        tasks=list(result.task_ids),
        stages=[dict(stage=s.stage, task=s.task_id, accuracies=list(s.accuracies), intruders=s.total,
                     forgetting=s.forgetting) for s in result.stages],
        checkpoint_paths=[str(p) for p in checkpoint_paths],
    )
