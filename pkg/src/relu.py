#!/usr/bin/python
#
# Copyright (C) 2010 Google Inc.
#
# Licensed under the Apache License, Version 2.0 (the "License");
# you may not use this file except in compliance with the License.
# You may obtain a copy of the License at
#
#      http://www.apache.org/licenses/LICENSE-2.0
#
# Unless required by applicable law or agreed to in writing, software
# distributed under the License is distributed on an "AS IS" BASIS,
# WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
# See the License for the specific language governing permissions and
# limitations under the License.


"""Main function for relu, the command line front end of relucl.

Example usage (omitting the initial "./relu"):
  # Sample the teacher of an experiment file
  gen-teacher --config acceptance.json --out runs/acceptance

  # Train, writing every artifact under runs/acceptance
  train --config acceptance.json --out runs/acceptance

  # Geometry suite and test statistics of a checkpoint
  diagnose --teacher runs/acceptance/teacher.json \
      --student runs/acceptance/checkpoints/epoch_14.json --lambda 3.0e-6

  # Dual certificate of a teacher
  certify --teacher runs/acceptance/teacher.json

  # Closed forms against Monte Carlo
  mc-check --n 1000000 --seed 7

Exit codes: 0 on success, 2 on a validation error (including bad flags),
3 on a numerical failure.
"""
import logging
import optparse
import sys

import relucl
import relucl.config
import relucl.harness
from relucl import base

LOG = logging.getLogger(relucl.LOGGER_NAME)


class NonFatalOptionParser(optparse.OptionParser):
  """Records option errors instead of exiting."""

  def error(self, message):
    self.error_message = message

  def bailout_message(self):
    return getattr(self, 'error_message', None)


def get_task_help(tasks):
  help_lines = []
  for name in sorted(tasks):
    help_lines.append('  ' + name + ': ' + tasks[name].description)
    help_lines.append('    ' + tasks[name].usage)
  return '\n'.join(help_lines)


def print_usage(parser, message=None):
  print(parser.usage)
  if message:
    print('\nERROR:\n' + message + '\n')


def setup_logger(options):
  """Setup the global (root, basic) configuration for logging."""
  msg_format = '%(message)s'
  if options.debug:
    level = logging.DEBUG
    msg_format = '%(levelname)s:%(name)s:%(message)s'
  elif options.verbose:
    level = logging.DEBUG
  elif options.quiet:
    level = logging.ERROR
  else:
    level = logging.INFO
  # basicConfig does nothing if it's been called before
  logging.basicConfig(level=level, format=msg_format)
  LOG.setLevel(level)


def setup_parser():
  """Set up the parser.

  Returns:
    NonFatalOptionParser with options configured.
  """
  usage = ('Usage: relu TASK [options]\n'
           '\n'
           'Recovery experiments for two-layer ReLU teacher networks.\n'
           '\n'
           'Tasks:\n' + get_task_help(relucl.harness.TASKS) + '\n')
  parser = NonFatalOptionParser(usage=usage, version='relu ' + relucl.VERSION,
                                add_help_option=False)
  parser.add_option('--config', dest='config',
                    help='Experiment file (JSON).')
  parser.add_option('--debug', dest='debug', action='store_true',
                    help='Enable all debugging output, with logger names.')
  parser.add_option('--lambda', dest='lam', type='float',
                    help='Weight decay to evaluate a checkpoint at.')
  parser.add_option('--n', dest='n', type='int',
                    help='Monte Carlo sample count.')
  parser.add_option('--out', dest='out',
                    help='Output directory. Overrides the experiment file.')
  parser.add_option('--quiet', dest='quiet', action='store_true',
                    help='Print only error messages.')
  parser.add_option('--seed', dest='seed', type='int',
                    help='Seed override.')
  parser.add_option('--settings', dest='settings',
                    help='Tool defaults file (INI). Default: XDG location.')
  parser.add_option('--student', dest='student',
                    help='Student checkpoint (JSON).')
  parser.add_option('--teacher', dest='teacher',
                    help='Teacher file (JSON).')
  parser.add_option('-v', '--verbose', dest='verbose', action='store_true',
                    help='Print all messages.')
  return parser


def run_once(parser, options, args):
  """Run one task and return its exit code.

  Args:
    parser: Parser, for usage text.
    options: Options as returned by optparse.
    args: Positional arguments; the first is the task name.
  """
  task_name = args[0]
  task = relucl.harness.TASKS.get(task_name)
  if task is None:
    print_usage(parser, 'Did not recognize task ' + task_name +
                ', please use one of ' +
                ', '.join(sorted(relucl.harness.TASKS)))
    return base.EXIT_VALIDATION
  task.name = task_name
  missing = task.get_outstanding_requirements(options)
  if missing:
    print_usage(parser, 'Task ' + task_name + ' is missing: ' +
                ', '.join(missing) + '\n' + task.usage)
    return base.EXIT_VALIDATION
  try:
    config = relucl.config.load_configuration(options.settings)
    return task.run(config, options, args[1:])
  except base.Error as err:
    LOG.error(str(err))
    return getattr(err, 'exit_code', base.EXIT_NUMERIC)


def main(argv=None):
  """Entry point for the relu script. Returns the exit code."""
  if argv is None:
    argv = sys.argv[1:]
  parser = setup_parser()
  if '--help' in argv or '-h' in argv:
    print(parser.usage)
    return base.EXIT_OK
  (options, args) = parser.parse_args(list(argv))
  message = parser.bailout_message()
  if message:
    print_usage(parser, message)
    return base.EXIT_VALIDATION
  setup_logger(options)
  if not args:
    print_usage(parser, 'Must specify a task.')
    return base.EXIT_VALIDATION
  return run_once(parser, options, args)


if __name__ == '__main__':
  sys.exit(main())
