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


"""Writers and readers for experiment artifacts.

JSON goes through simplejson with sorted keys, and non-finite floats become
null, so every file re-parses and identical runs give identical bytes.
"""
import logging
import os

import simplejson as json

from relucl import base

LOG = logging.getLogger(__name__)


def dumps(doc, indent=2):
  return json.dumps(doc, indent=indent, sort_keys=True, ignore_nan=True)


def ensure_dir(path):
  """Create path (and parents) if missing; return path."""
  if not os.path.isdir(path):
    os.makedirs(path)
    LOG.debug('Created directory ' + path)
  return path


def write_json(path, doc):
  with open(path, 'w') as json_file:
    json_file.write(dumps(doc) + '\n')
  LOG.debug('Wrote ' + path)


def read_json(path):
  with open(path) as json_file:
    return json.load(json_file)


class JsonLinesWriter(object):
  """One compact JSON document per line."""

  def __init__(self, path):
    self.path = path
    self._file = open(path, 'w')

  def write(self, doc):
    self._file.write(json.dumps(doc, sort_keys=True, ignore_nan=True) + '\n')
    self._file.flush()

  def close(self):
    if not self._file.closed:
      self._file.close()

  def __enter__(self):
    return self

  def __exit__(self, *exc_info):
    self.close()


def read_json_lines(path):
  with open(path) as lines_file:
    return [json.loads(line) for line in lines_file if line.strip()]


def write_rows(path, header, rows, delimiter=',', missing_field_value='nan'):
  """Write a header line and one delimited line per row."""
  with open(path, 'w') as csv_file:
    csv_file.write(delimiter.join(header) + '\n')
    for row in rows:
      csv_file.write(base.compile_row(row, delimiter, missing_field_value) +
                     '\n')
  LOG.debug('Wrote %d rows to %s', len(rows), path)


def read_rows(path, delimiter=','):
  """Return (header, rows) with every field left as a string."""
  with open(path) as csv_file:
    lines = [line.rstrip('\n') for line in csv_file if line.strip()]
  if not lines:
    return [], []
  return (lines[0].split(delimiter),
          [line.split(delimiter) for line in lines[1:]])
