#!/usr/bin/env python3

# Paired sign test over seeds: does method A reach more goals than method B?
# Reports are matched by position, e.g.
#   compare_success.py --a runs/*/plan.jsonl --b runs/*/gcsl.jsonl

import sys
import os

sys.path.insert(0, os.path.join(os.path.dirname(os.path.abspath(__file__)),
                                '..'))

from oracle_eval import load_episode_reports, evaluate_planner, sign_test


def argparser():
    from argparse import ArgumentParser
    ap = ArgumentParser()
    ap.add_argument('--a', nargs='+', required=True,
                    help='Episode reports of method A, one per seed')
    ap.add_argument('--b', nargs='+', required=True,
                    help='Episode reports of method B, same seed order')
    return ap


def success_rates(paths):
    rates = []
    for path in paths:
        report = evaluate_planner(load_episode_reports(path))
        print('{}\t{:.3f}\t{}'.format(path, report.success_rate,
                                      report.num_episodes), file=sys.stderr)
        rates.append(report.success_rate)
    return rates


def main(argv):
    args = argparser().parse_args(argv[1:])
    if len(args.a) != len(args.b):
        print('Expected as many A reports as B reports, got {} and {}'.format(
            len(args.a), len(args.b)), file=sys.stderr)
        return 1
    a, b = success_rates(args.a), success_rates(args.b)
    wins = sum(x > y for x, y in zip(a, b))
    losses = sum(x < y for x, y in zip(a, b))
    print('wins\t{}\tlosses\t{}\tties\t{}\tp\t{:.5f}'.format(
        wins, losses, len(a)-wins-losses, sign_test(a, b)))
    return 0


if __name__ == '__main__':
    sys.exit(main(sys.argv))
