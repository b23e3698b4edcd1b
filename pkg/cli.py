#!/usr/bin/env python3

"""Command-line entry point. Each subcommand reads and writes plain files
and leaves a manifest (flags, seed, input and output hashes) next to every
artifact it writes; `pipeline` chains subcommands from a TOML config and
skips stages whose manifests are still current."""

import sys
import os
import logging

import numpy as np

from time import time
from logging import info, warning

from common import argument_parser, print_versions, load_toml
from common import parse_int_tuple, write_csv, write_manifests, git_hash
from common import manifest_path, RunManifest, ConfigError, PipelineError
from config import DEFAULT_BATCH_SIZE, DEFAULT_EMBED_STEPS, DEFAULT_DYN_STEPS
from config import DEFAULT_GCSL_STEPS, DEFAULT_GCSL_BATCH_SIZE
from config import DEFAULT_EVAL_PAIRS, MANIFEST_SUFFIX
from envs import load_env_spec
from trajdata import load_dataset, save_dataset, collect_trajectories
from trajdata import random_policy, epsilon_greedy_policy, coverage
from trajdata import pair_arrays
from embed import EmbedConfig, train_embedding, save_embedding, load_embedding
from embed import constraint_violation_rate
from latent import DynamicsConfig, PlanConfig, train_dynamics, save_dynamics
from latent import load_dynamics, plan_dist_episode, default_goal_eps
from latent import one_step_error
from shaping_rl import QConfig, QTable, ShapedReward, q_learn
from shaping_rl import episodes_to_threshold, GcslConfig, gcsl_train
from shaping_rl import gcsl_episode, save_policy, load_policy
from oracle_eval import compute_mad, evaluate_embedding, evaluate_planner
from oracle_eval import EvalReport, write_report, save_episode_reports
from oracle_eval import load_episode_reports
import envs


def num_actions_for(args, trajs):
    if args.env is not None:
        return load_env_spec(args.env).num_actions
    acting = [t for t in trajs if len(t)]
    if not acting:
        raise ValueError('dataset {} has no actions'.format(args.dataset))
    num_actions = max(int(t.actions.max()) for t in acting) + 1
    warning('No --env given, inferred {} actions from {}'.format(
        num_actions, args.dataset))
    return num_actions


def sample_tasks(spec, num_goals, seed, trajs=None):
    """(start, goal) pairs; goals are uniform over enumerable states, or
    over dataset states on continuous envs."""
    rng = np.random.default_rng(seed)
    if spec.enumerable:
        candidates = envs.enumerate_states(spec)
    elif trajs:
        candidates = [s for t in trajs for s in t.states]
    else:
        raise ConfigError('--dataset is required to sample goals on {}'.format(
            spec.id))
    tasks = []
    for _ in range(num_goals):
        start = envs.reset(spec, int(rng.integers(2**31)))
        goal = np.array(candidates[rng.integers(len(candidates))])
        tasks.append((start, goal))
    return tasks


def parse_goal(spec, text):
    _require_enumerable_env(spec, 'shape-train')
    key = parse_int_tuple(text)
    if spec.id == 'keydoor_grid' and len(key) == 2:
        key = key + (1,)
    if key not in set(envs.enumerate_keys(spec)):
        raise ConfigError('goal {} is not a reachable state of {}'.format(
            text, spec.id))
    return envs.state_from_key(spec, key)


def _require_enumerable_env(spec, command):
    if not spec.enumerable:
        raise ConfigError('{} requires a grid env, got {}'.format(
            command, spec.id))


def _mad_oracle(spec):
    if spec.enumerable and spec.deterministic:
        return compute_mad(spec)
    return None


def collect(args):
    spec = load_env_spec(args.env)
    inputs = [args.env]
    if args.policy == 'random':
        policy = random_policy(spec)
    else:
        policy = epsilon_greedy_policy(spec, QTable.load(args.policy),
                                       args.epsilon)
        inputs.append(args.policy)
    trajs = collect_trajectories(spec, policy, args.n_traj, args.seed)
    save_dataset(trajs, args.out)
    print('Collected {} trajectories, {} transitions'.format(
        len(trajs), sum(len(t) for t in trajs)))
    if spec.enumerable:
        print('State coverage: {:.1%}'.format(coverage(spec, trajs)))
    return inputs, [args.out]


def train_embed(args):
    trajs = load_dataset(args.dataset)
    config = EmbedConfig(
        embed_dim=args.dim,
        norm=args.norm,
        alpha_exponent=args.alpha,
        penalty_enabled=args.penalty,
        batch_size=args.batch or DEFAULT_BATCH_SIZE,
        lr=args.lr,
        train_steps=(DEFAULT_EMBED_STEPS if args.steps is None
                     else args.steps),
        seed=args.seed,
        weight_decay=args.weight_decay,
        max_gap=args.max_gap,
        per_alpha=args.per_alpha,
        per_epsilon=args.per_epsilon,
        priority=args.priority,
        log_every=args.log_every,
    )
    model, history = train_embedding(trajs, config)
    save_embedding(args.out, model)
    s, s_prime, d_td = pair_arrays(trajs, config.max_gap)
    print('Final violation rate: {:.2%} of {} pairs'.format(
        constraint_violation_rate(model, s, s_prime, d_td), len(d_td)))
    outputs = [args.out]
    if args.history is not None:
        write_csv(args.history, ('step', 'loss', 'mean_violation',
                                 'violating_fraction'), history)
        outputs.append(args.history)
    return [args.dataset], outputs


def train_dyn(args):
    trajs = load_dataset(args.dataset)
    embedding = load_embedding(args.embed)
    config = DynamicsConfig(
        hidden=args.hidden,
        batch_size=args.batch or DEFAULT_BATCH_SIZE,
        lr=args.lr,
        train_steps=DEFAULT_DYN_STEPS if args.steps is None else args.steps,
        seed=args.seed,
        weight_decay=args.weight_decay,
        log_every=args.log_every,
    )
    dyn, history = train_dynamics(trajs, embedding, config,
                                  num_actions_for(args, trajs))
    save_dynamics(args.out, dyn, config)
    error, ratio = one_step_error(dyn, embedding, trajs)
    print('One-step latent error: {:.4f} ({:.1%} of adjacent distance)'.format(
        error, ratio))
    outputs = [args.out]
    if args.history is not None:
        write_csv(args.history, ('step', 'loss'), history)
        outputs.append(args.history)
    inputs = [args.dataset, args.embed]
    if args.env is not None:
        inputs.append(args.env)
    return inputs, outputs


def plan(args):
    spec = load_env_spec(args.env)
    embedding = load_embedding(args.embed)
    dyn = load_dynamics(args.dyn)
    inputs = [args.env, args.embed, args.dyn]
    trajs = None
    if args.dataset is not None:
        trajs = load_dataset(args.dataset)
        inputs.append(args.dataset)
    goal_eps = args.goal_eps
    if goal_eps is None and not spec.enumerable:
        if trajs is None:
            raise ConfigError('--goal_eps or --dataset is required on {}'.format(
                spec.id))
        goal_eps = default_goal_eps(embedding, trajs)
        info('Using goal tolerance {:.4f}'.format(goal_eps))
    config = PlanConfig(
        horizon=args.horizon,
        num_sequences=args.samples,
        goal_eps=goal_eps,
        max_env_steps=args.budget,
        seed=args.seed,
    )
    task_seed, plan_seed = np.random.SeedSequence(args.seed).spawn(2)
    rng = np.random.default_rng(plan_seed)
    results = [
        plan_dist_episode(spec, embedding, dyn, goal, config, start=start,
                          rng=rng)
        for start, goal in sample_tasks(spec, args.goals, task_seed, trajs)
    ]
    save_episode_reports(args.report, results)
    mad = _mad_oracle(spec)
    _print_planner(evaluate_planner(results, mad))
    return inputs, [args.report]


def _print_planner(report):
    print('Success rate: {:.1%} of {} episodes'.format(
        report.success_rate, report.num_episodes))
    if report.mean_path_ratio is not None:
        print('Mean path ratio: {:.3f}'.format(report.mean_path_ratio))


def shape_train(args):
    spec = load_env_spec(args.env)
    goal = parse_goal(spec, args.goal)
    inputs = [args.env]
    shaping = None
    if args.shaped:
        if args.embed is None:
            raise ConfigError('--embed is required for shaped Q-learning')
        shaping = ShapedReward(args.gamma, goal, load_embedding(args.embed))
        inputs.append(args.embed)
    config = QConfig(
        episodes=args.episodes,
        learning_rate=args.q_lr,
        gamma=args.gamma,
        epsilon_start=args.epsilon_start,
        epsilon_end=args.epsilon_end,
        epsilon_decay_episodes=args.epsilon_decay,
        seed=args.seed,
    )
    table, curve = q_learn(spec, goal, shaping, config)
    write_csv(args.curve, ('episode', 'return', 'steps', 'success'), curve)
    outputs = [args.curve]
    if args.qtable is not None:
        table.save(args.qtable)
        outputs.append(args.qtable)
    reached = episodes_to_threshold([c[3] for c in curve])
    print('{} Q-learning: {}'.format(
        'Shaped' if args.shaped else 'Unshaped',
        'threshold not reached' if reached is None else
        'success threshold after {} episodes'.format(reached)))
    return inputs, outputs


def train_gcsl(args):
    trajs = load_dataset(args.dataset)
    config = GcslConfig(
        batch_size=args.batch or DEFAULT_GCSL_BATCH_SIZE,
        lr=args.lr,
        train_steps=DEFAULT_GCSL_STEPS if args.steps is None else args.steps,
        seed=args.seed,
        horizon_conditioned=args.horizon_conditioned,
        max_gap=args.max_gap,
        max_horizon=args.max_horizon,
        weight_decay=args.weight_decay,
        log_every=args.log_every,
    )
    policy, history = gcsl_train(trajs, config, num_actions_for(args, trajs))
    save_policy(args.out, policy)
    print('Final cross-entropy: {:.4f}'.format(history[-1][1]) if history
          else 'No training steps')
    outputs = [args.out]
    if args.history is not None:
        write_csv(args.history, ('step', 'cross_entropy'), history)
        outputs.append(args.history)
    inputs = [args.dataset]
    if args.env is not None:
        inputs.append(args.env)
    return inputs, outputs


def eval_gcsl(args):
    spec = load_env_spec(args.env)
    _require_enumerable_env(spec, 'gcsl-eval')
    policy = load_policy(args.policy)
    inputs = [args.env, args.policy]
    embedding = None
    if args.embed is not None:
        embedding = load_embedding(args.embed)
        inputs.append(args.embed)
    task_seed, _ = np.random.SeedSequence(args.seed).spawn(2)
    results = [
        gcsl_episode(spec, policy, goal, args.budget, start=start,
                     embedding=embedding)
        for start, goal in sample_tasks(spec, args.goals, task_seed)
    ]
    save_episode_reports(args.report, results)
    _print_planner(evaluate_planner(results, _mad_oracle(spec)))
    return inputs, [args.report]


def evaluate(args):
    spec = load_env_spec(args.env)
    embedding = load_embedding(args.embed)
    inputs = [args.env, args.embed]
    trajs = training_pairs = None
    if args.dataset is not None:
        trajs = load_dataset(args.dataset)
        training_pairs = pair_arrays(trajs, embedding.config.max_gap)
        inputs.append(args.dataset)
    report = EvalReport()
    mad = _mad_oracle(spec)
    if mad is not None:
        pairs = 'all' if len(mad) <= 2000 else DEFAULT_EVAL_PAIRS
        report.update(evaluate_embedding(
            embedding, mad, pairs, np.random.default_rng(args.seed),
            training_pairs))
    elif training_pairs is not None:
        report.violation_rate = constraint_violation_rate(
            embedding, *training_pairs)
    if args.dyn is not None:
        if trajs is None:
            raise ConfigError('--dyn needs --dataset for the one-step error')
        report.dynamics_error = one_step_error(load_dynamics(args.dyn),
                                               embedding, trajs)[1]
        inputs.append(args.dyn)
    if args.plan_report is not None:
        report.update(evaluate_planner(load_episode_reports(args.plan_report),
                                       mad))
        inputs.append(args.plan_report)
    write_report(args.out, report)
    for key, value in vars(report).items():
        print('{}: {}'.format(key, 'undefined' if value is None else value))
    return inputs, [args.out]


COMMANDS = {
    'collect': collect,
    'train-embed': train_embed,
    'train-dyn': train_dyn,
    'plan': plan,
    'shape-train': shape_train,
    'gcsl-train': train_gcsl,
    'gcsl-eval': eval_gcsl,
    'eval': evaluate,
}


def command_flags(args):
    return { k: v for k, v in vars(args).items() if k != 'verbose' }


def run_command(mode, args):
    start = time()
    inputs, outputs = COMMANDS[mode](args)
    return write_manifests(mode, command_flags(args), args.seed, inputs,
                           outputs, time()-start)


# Artifact file names inside a pipeline workdir
PIPELINE_FILES = {
    'dataset': 'dataset.jsonl',
    'embed': 'embed.ckpt',
    'embed_history': 'embed-history.csv',
    'dyn': 'dyn.ckpt',
    'dyn_history': 'dyn-history.csv',
    'plan': 'plan.jsonl',
    'gcsl': 'gcsl.ckpt',
    'gcsl_history': 'gcsl-history.csv',
    'gcsl_report': 'gcsl.jsonl',
    'curve': 'curve.csv',
    'qtable': 'qtable.json',
    'report': 'report.txt',
}

# Artifact whose manifest decides whether a stage can be skipped
STAGE_OUTPUT = {
    'collect': 'dataset',
    'train-embed': 'embed',
    'train-dyn': 'dyn',
    'plan': 'plan',
    'gcsl-train': 'gcsl',
    'gcsl-eval': 'gcsl_report',
    'shape-train': 'curve',
    'eval': 'report',
}


def stage_argv(stage, env, stages, paths, options):
    p = paths
    if stage == 'collect':
        argv = ['--env', env, '--out', p['dataset']]
    elif stage == 'train-embed':
        argv = ['--dataset', p['dataset'], '--out', p['embed'],
                '--history', p['embed_history']]
    elif stage == 'train-dyn':
        argv = ['--dataset', p['dataset'], '--embed', p['embed'],
                '--env', env, '--out', p['dyn'], '--history', p['dyn_history']]
    elif stage == 'plan':
        argv = ['--env', env, '--embed', p['embed'], '--dyn', p['dyn'],
                '--dataset', p['dataset'], '--report', p['plan']]
    elif stage == 'gcsl-train':
        argv = ['--dataset', p['dataset'], '--env', env, '--out', p['gcsl'],
                '--history', p['gcsl_history']]
    elif stage == 'gcsl-eval':
        argv = ['--env', env, '--policy', p['gcsl'], '--report',
                p['gcsl_report']]
        if 'train-embed' in stages:
            argv += ['--embed', p['embed']]
    elif stage == 'shape-train':
        argv = ['--env', env, '--embed', p['embed'], '--curve', p['curve'],
                '--qtable', p['qtable']]
    else:
        argv = ['--env', env, '--embed', p['embed'], '--dataset',
                p['dataset'], '--out', p['report']]
        if 'train-dyn' in stages:
            argv += ['--dyn', p['dyn']]
        if 'plan' in stages:
            argv += ['--plan_report', p['plan']]
    for key, value in options.items():
        if value is True:
            argv.append('--{}'.format(key))
        elif value is not False:
            argv += ['--{}'.format(key), str(value)]
    return argv


def stage_is_current(stage, args, paths):
    path = manifest_path(paths[STAGE_OUTPUT[stage]])
    if not os.path.exists(path):
        return False
    try:
        manifest = RunManifest.load(path)
    except (OSError, ValueError, TypeError) as e:
        warning('Ignoring unreadable manifest {}: {}'.format(path, e))
        return False
    return manifest.is_current(stage, command_flags(args))


def run_pipeline(config_path, force=False):
    """Run the stages listed in a pipeline config in order. Returns the
    pipeline manifest, saved as pipeline.manifest.json in the workdir."""
    start = time()
    config = load_toml(config_path)
    for key in ('seed', 'env', 'workdir', 'stages'):
        if key not in config:
            raise ConfigError('missing "{}" in {}'.format(key, config_path))
    stages = list(config['stages'])
    unknown = [s for s in stages if s not in COMMANDS]
    if unknown:
        raise ConfigError('unknown stages {} in {}'.format(unknown,
                                                           config_path))
    workdir = config['workdir']
    os.makedirs(workdir, exist_ok=True)
    paths = { k: os.path.join(workdir, f) for k, f in PIPELINE_FILES.items() }
    outputs = {}
    for stage in stages:
        options = dict(config.get(stage, {}))
        options.setdefault('seed', config['seed'])
        argv = stage_argv(stage, config['env'], stages, paths, options)
        args = argument_parser(stage).parse_args(argv)
        if not force and stage_is_current(stage, args, paths):
            print('Skipping {}: outputs are current'.format(stage),
                  file=sys.stderr, flush=True)
            manifest = RunManifest.load(
                manifest_path(paths[STAGE_OUTPUT[stage]]))
        else:
            print('Running {}'.format(stage), file=sys.stderr, flush=True)
            try:
                manifest = run_command(stage, args)
            except Exception as e:
                raise PipelineError(stage, e) from e
        outputs.update(manifest.outputs)
    manifest = RunManifest(
        command='pipeline',
        flags={ 'config': config_path, 'stages': stages },
        seed=config['seed'],
        inputs={ config_path: git_hash(config_path) },
        outputs=outputs,
        duration=time()-start,
    )
    manifest.save(os.path.join(workdir, 'pipeline' + MANIFEST_SUFFIX))
    return manifest


def usage():
    return 'usage: cli.py {{{}}} [options]'.format(
        ','.join(list(COMMANDS) + ['pipeline']))


def main(argv):
    if len(argv) < 2 or argv[1] not in list(COMMANDS) + ['pipeline']:
        print(usage(), file=sys.stderr)
        return 2
    mode = argv[1]
    args = argument_parser(mode).parse_args(argv[2:])
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format='%(asctime)s %(levelname)s %(message)s'
    )
    print_versions()
    if mode == 'pipeline':
        run_pipeline(args.config, args.force)
    else:
        run_command(mode, args)
    return 0


if __name__ == '__main__':
    sys.exit(main(sys.argv))
