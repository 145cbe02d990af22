#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
Train and evaluate audio-only active speaker localizers on simulated microphone array scenes.
Each stage reads the outputs of the stages before it from the output directory.
"""
import argparse
import logging
import sys

from asdl import log, pipeline
from asdl.exceptions import AsdlException, ConfigError, Divergence, NotFound

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_CONFIG = 2
EXIT_MISSING = 3
EXIT_DIVERGED = 4
ABLATE = 'ablate'
GRADCHECK = 'gradcheck'


def _overrides(values):
    overrides = {}
    for value in values or []:
        key, sep, item = value.partition('=')
        if not sep:
            raise ConfigError(f'--set expects <section>.<name>=<value>, got {value}')
        overrides[key.strip()] = item.strip()
    return overrides


def _parser():
    parser = argparse.ArgumentParser(prog='asdl', description=__doc__)
    parser.add_argument('command', choices=pipeline.STAGES + (ABLATE, GRADCHECK),
                        help='Stage to run; ablate runs every stage in order.')
    parser.add_argument('-c', '--config', default=None, help='Experiment config file (INI).')
    parser.add_argument('-p', '--preset', default=None, help='Preset to start from (default: desk).')
    parser.add_argument('-o', '--output', default=None, help='Output directory.')
    parser.add_argument('-s', '--seed', type=int, default=None, help='Override experiment.seed.')
    parser.add_argument('-w', '--workers', type=int, default=None, help='Concurrent workers per stage.')
    parser.add_argument('--set', action='append', metavar='SECTION.NAME=VALUE',
                        help='Override a config value (repeatable).')
    parser.add_argument('--progress', action='store_true', default=None, help='Show progress bars.')
    parser.add_argument('-v', '--verbose', action='store_true', help='Log debug messages.')
    return parser


def _addConsoleHandler(verbose):
    from asdl import logfilter, logformat
    handler = logging.StreamHandler(sys.stderr)
    handler.setFormatter(logging.Formatter(logformat))
    handler.addFilter(logfilter)
    log.addHandler(handler)
    log.setLevel(logging.DEBUG if verbose else logging.INFO)
    return handler


def run(opts):
    if opts.command == GRADCHECK:
        from asdl.model import checkLayerGradients
        results = checkLayerGradients(seed=opts.seed or 0)
        for layer, passed in results.items():
            log.info('Gradient check %-10s %s', layer, 'ok' if passed else 'FAILED')
        return EXIT_OK if all(results.values()) else EXIT_ERROR
    exp = pipeline.ExperimentConfig.load(opts.config, opts.preset, _overrides(opts.set), output=opts.output,
                                         seed=opts.seed, workers=opts.workers, showstatus=opts.progress)
    log.info('Loaded %s with %d cells into %s', exp, len(exp.plan), exp.output)
    if opts.command == ABLATE:
        pipeline.runAll(exp)
    else:
        pipeline.runStage(exp, opts.command)
    return EXIT_OK


def main(argv=None):
    """ Console entry point; returns 0 on success, 2 for configuration errors, 3 when a
        required input is missing and 4 when training diverged.
    """
    opts = _parser().parse_args(argv)
    handler = _addConsoleHandler(opts.verbose)
    try:
        return run(opts)
    except ConfigError as err:
        log.error('Configuration error: %s', err)
        return EXIT_CONFIG
    except NotFound as err:
        log.error('%s', err)
        return EXIT_MISSING
    except Divergence as err:
        log.error('Training diverged: %s', err)
        return EXIT_DIVERGED
    except AsdlException as err:
        log.error('%s: %s', type(err).__name__, err)
        return EXIT_ERROR
    finally:
        log.removeHandler(handler)


if __name__ == '__main__':
    sys.exit(main())
