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


"""Error hierarchy, task descriptions and row formatting shared by relucl."""
import logging
import math
import numbers

LOG = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_NUMERIC = 3


class Error(Exception):
  """Base error for relucl exceptions."""
  pass


class ValidationError(Error):
  """Input, configuration or precondition problem. Exit code 2."""
  exit_code = EXIT_VALIDATION


class NumericError(Error):
  """Numerical failure during a computation. Exit code 3."""
  exit_code = EXIT_NUMERIC


class Task(object):
  """A container of requirements.

  Each requirement matches up with one of the attributes of the option parser
  used to parse command line arguments. Requirements are given as lists.
  For example, if a task needs to have attr1 and attr2 and either attr3 or 4,
  the list would look like ['attr1', 'attr2', ['attr3', 'attr4']]
  """

  def __init__(self, description, callback=None, required=None, optional=None,
               args_desc=''):
    """Constructor.

    Keyword arguments:
      description: Description of what the task does.
      callback: Function to use to execute task, called as
                callback(config, options, args). Must return an exit code.
                (Default None, logs a message instead of running)
      required: Required options for the task. (Default None)
      optional: Optional options for the task. (Default None)
      args_desc: Description of what the arguments should be.
                 (Default '', for no arguments necessary for this task)
    """
    if isinstance(required, str):
      required = [required]
    if isinstance(optional, str):
      optional = [optional]
    self.description = description
    self.run = callback or self._not_impl
    self.required = required or []
    self.optional = optional or []
    self.name = None
    if self.required:
      req_str = ' AND '.join(['(' + ' OR '.join(a) + ')'
                              if isinstance(a, list) else a
                              for a in self.required])
    else:
      req_str = 'none'
    if self.optional:
      opt_str = ' Optional: ' + ', '.join(self.optional)
    else:
      opt_str = ''
    if args_desc:
      args_desc = ' Arguments: ' + args_desc
    self.usage = 'Requires: ' + req_str + opt_str + args_desc

  def get_outstanding_requirements(self, options):
    """Return a list of required options that are missing.

    Sublists in self.required are satisfied when any one of their members is
    set; an unsatisfied sublist is reported by its first member.

    Args:
      options: instance Has attributes with names corresponding to the
               requirements specified by self.required and self.optional

    Returns:
      A subset of self.required containing only strings representing unmet
      requirements.
    """
    missing_options_set = set(attr for attr in dir(options)
                              if not attr.startswith('_') and
                              getattr(options, attr) is None)
    missing_requirements = []
    for requirement in self.required:
      if isinstance(requirement, list):
        if set(requirement) <= missing_options_set:
          missing_requirements.append(requirement[0])
      elif requirement in missing_options_set:
        missing_requirements.append(requirement)
    return missing_requirements

  def _not_impl(self, *args):
    LOG.error('Task ' + str(self.name) + ' is not implemented')
    return EXIT_VALIDATION


def format_value(value, missing_field_value='nan'):
  """Render one value for a delimited row.

  Floats use full-precision scientific notation, so a float written and read
  back is bit-identical. Integers and booleans are written plainly.
  """
  if value is None:
    return missing_field_value
  if isinstance(value, bool):
    return 'true' if value else 'false'
  if isinstance(value, numbers.Integral):
    return str(int(value))
  if isinstance(value, numbers.Real):
    value = float(value)
    if math.isnan(value):
      return missing_field_value
    return '%.16e' % value
  return str(value)


def compile_row(values, delimiter=',', missing_field_value='nan'):
  """Return one delimited line (without newline) for a row of values.

  Keyword arguments:
    values: Sequence of values, rendered by format_value().
    delimiter: String to use as the delimiter between fields. Default ','.
    missing_field_value: Put this in place of None or NaN. Default 'nan'.
  """
  if not delimiter:
    delimiter = ','
  fields = []
  for value in values:
    text = format_value(value, missing_field_value)
    # Ensure the delimiter won't appear in a non-delineation role.
    fields.append(text.replace(delimiter, ' '))
  return delimiter.join(fields)
