import sys

import numpy as np

from flask import Flask, request, jsonify
from flask_cors import CORS

from common import argument_parser, parse_int_tuple, ConfigError
from envs import load_env_spec, state_from_key, enumerate_keys
from embed import load_embedding
from latent import load_dynamics, plan_step, PlanConfig


app = Flask(__name__)
CORS(app)


def parse_state(spec, text):
    """Grid states as cell keys "x,y[,k]", others as raw features."""
    if spec.enumerable:
        key = parse_int_tuple(text)
        if key not in set(enumerate_keys(spec)):
            raise ConfigError('{} is not a state of {}'.format(text, spec.id))
        return state_from_key(spec, key)
    try:
        return np.array([float(v) for v in text.split(',')])
    except ValueError:
        raise ConfigError('expected comma-separated numbers, got {!r}'.format(
            text))


@app.errorhandler(ConfigError)
def bad_request(e):
    return jsonify({ 'error': str(e) }), 400


@app.route('/distance')
def distance():
    spec, embedding = app.spec, app.embedding
    s = parse_state(spec, request.values['s'])
    t = parse_state(spec, request.values['t'])
    return jsonify({ 'distance': float(embedding.dist(s, t)) })


@app.route('/plan')
def plan():
    spec, embedding, dyn, config = (
        app.spec, app.embedding, app.dyn, app.plan_config
    )
    s = parse_state(spec, request.values['state'])
    goal = parse_state(spec, request.values['goal'])
    action, sequence, score = plan_step(spec, embedding, dyn, s, goal, config,
                                        app.rng)
    return jsonify({
        'action': action,
        'sequence': [int(a) for a in sequence],
        'score': score,
    })


def main(argv):
    args = argument_parser('serve').parse_args(argv[1:])
    app.spec = load_env_spec(args.env)
    app.embedding = load_embedding(args.embed)
    app.dyn = load_dynamics(args.dyn)
    app.plan_config = PlanConfig(
        horizon=args.horizon,
        num_sequences=args.samples,
        goal_eps=args.goal_eps,
    )
    app.rng = np.random.default_rng(args.seed)
    app.run(port=args.port)
    return 0


if __name__ == '__main__':
    sys.exit(main(sys.argv))
