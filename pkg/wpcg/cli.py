#  Copyright (c) 2021 KTH Royal Institute of Technology
#
#  Licensed under the Apache License, Version 2.0 (the "License");
#  you may not use this file except in compliance with the License.
#  You may obtain a copy of the License at
#
#         http://www.apache.org/licenses/LICENSE-2.0
#
#  Unless required by applicable law or agreed to in writing, software
#  distributed under the License is distributed on an "AS IS" BASIS,
#  WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
#  See the License for the specific language governing permissions and
#  limitations under the License.
"""
Command-line entry point.

Exit codes: 0 success, 1 configuration error (or unknown suite, failed
verification), 2 divergence.
"""
from __future__ import annotations

import sys
from typing import List, Optional

import click
from twisted.logger import FilteringLogObserver, LogLevel, \
    LogLevelFilterPredicate, globalLogBeginner, textFileLogObserver

from ._version import __version__
from .config import ConfigError, load_config
from .model import WPCGError
from .runner import SWEEP_PARAMETERS, execute_run, execute_sweep
from .schedulers import DivergenceError
from .verify import SUITES, run_suite

__all__ = ['main', 'EXIT_OK', 'EXIT_CONFIG', 'EXIT_DIVERGED']

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_DIVERGED = 2


class _Stderr:
    """Writes to whatever sys.stderr is at the time of the event."""

    def write(self, text: str) -> None:
        sys.stderr.write(text)

    def flush(self) -> None:
        sys.stderr.flush()


_predicate = LogLevelFilterPredicate(defaultLogLevel=LogLevel.info)
_logging_started = False


def _start_logging(verbose: bool) -> None:
    global _logging_started
    _predicate.setLogLevelForNamespace(
        None, LogLevel.debug if verbose else LogLevel.info)
    if _logging_started:
        return
    observer = FilteringLogObserver(textFileLogObserver(_Stderr()),
                                    [_predicate])
    globalLogBeginner.beginLoggingTo([observer], redirectStandardIO=False)
    _logging_started = True


def _parse_values(text: str) -> List[float]:
    try:
        return [float(v) for v in text.split(',') if v.strip()]
    except ValueError:
        raise ConfigError(f'--values: expected comma-separated numbers, '
                          f'got {text!r}')


@click.group()
@click.version_option(__version__)
@click.option('-v', '--verbose', is_flag=True, help='Log debug events.')
def cli(verbose: bool) -> None:
    """Wasserstein proximal coordinate gradient runs."""
    _start_logging(verbose)


@cli.command()
@click.argument('config', type=click.Path(dir_okay=False))
@click.option('-o', '--output', type=click.Path(file_okay=False),
              default=None, help='Output directory (overrides `output`).')
def run(config: str, output: Optional[str]) -> None:
    """Execute the run described in CONFIG."""
    try:
        cfg = load_config(config)
        execute_run(cfg, output)
    except DivergenceError as e:
        click.echo(f'error: {e}', err=True)
        sys.exit(EXIT_DIVERGED)
    except WPCGError as e:
        click.echo(f'error: {e}', err=True)
        sys.exit(EXIT_CONFIG)


@cli.command()
@click.argument('suite')
def verify(suite: str) -> None:
    """Run an acceptance SUITE and print PASS/FAIL per criterion."""
    if suite not in SUITES:
        click.echo(f'error: unknown suite {suite!r}; choose one of '
                   f'{", ".join(SUITES)}', err=True)
        sys.exit(EXIT_CONFIG)
    results = run_suite(suite)
    for result in results:
        click.echo(str(result))
    sys.exit(EXIT_OK if all(r.passed for r in results) else EXIT_CONFIG)


@cli.command()
@click.argument('config', type=click.Path(dir_okay=False))
@click.option('--param', 'parameter', required=True,
              type=click.Choice(sorted(SWEEP_PARAMETERS)),
              help='Parameter to sweep.')
@click.option('--values', required=True, help='Comma-separated values.')
@click.option('-o', '--output', type=click.Path(file_okay=False),
              default=None, help='Output directory (overrides `output`).')
def sweep(config: str, parameter: str, values: str,
          output: Optional[str]) -> None:
    """Repeat the run in CONFIG for each value of a parameter."""
    try:
        cfg = load_config(config)
        rows = execute_sweep(cfg, parameter, _parse_values(values), output)
    except WPCGError as e:
        click.echo(f'error: {e}', err=True)
        sys.exit(EXIT_CONFIG)
    for row in rows:
        click.echo(f'{parameter}={row.value:g}: final W2^2 '
                   f'{row.final_w2sq:.6g}, slope {row.slope:.6g}')


def main() -> None:
    cli(prog_name='wpcg')


if __name__ == '__main__':
    main()
