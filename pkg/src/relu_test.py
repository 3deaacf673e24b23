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

"""End-to-end tests of the relu command line."""

import os
import shutil
import tempfile
import unittest

import relu
from relucl.harness import output

EXPERIMENT = {'schema_version': 1,
              'teacher': {'d': 4, 'r': 1, 'm_star': 1, 'delta_min': 0.5,
                          'a_magnitudes': [1.0], 'seed': 0},
              'student': {'m': 4, 'seed': 1},
              'schedule': {'halvings': 1, 'per_epoch_cap': 30, 't2_max': 50,
                           'log_every': 5}}


class CommandLineTest(unittest.TestCase):

  def setUp(self):
    self.tmp_dir = tempfile.mkdtemp()
    self.settings = os.path.join(self.tmp_dir, 'settings')
    self.config = os.path.join(self.tmp_dir, 'experiment.json')
    output.write_json(self.config, EXPERIMENT)

  def tearDown(self):
    shutil.rmtree(self.tmp_dir)

  def relu(self, *argv):
    return relu.main(list(argv) + ['--settings', self.settings, '--quiet'])

  def path(self, *parts):
    return os.path.join(self.tmp_dir, *parts)

  def testUnknownFlag(self):
    self.assertEqual(2, self.relu('mc-check', '--frobnicate'))

  def testUnknownTask(self):
    self.assertEqual(2, self.relu('fly'))

  def testNoTask(self):
    self.assertEqual(2, self.relu())

  def testHelp(self):
    self.assertEqual(0, relu.main(['--help']))

  def testMissingRequirement(self):
    self.assertEqual(2, self.relu('diagnose', '--teacher', self.config))
    self.assertEqual(2, self.relu('certify'))

  def testInvalidConfig(self):
    output.write_json(self.config, dict(EXPERIMENT, schema_version=3))
    self.assertEqual(2, self.relu('train', '--config', self.config,
                                  '--out', self.path('run')))
    self.assertEqual(2, self.relu('gen-teacher', '--config',
                                  self.path('missing.json')))

  def testMonteCarloCheck(self):
    self.assertEqual(0, self.relu('mc-check', '--n', '20000', '--seed', '7',
                                  '--out', self.path('mc')))
    report = output.read_json(self.path('mc', 'mc_check.json'))
    self.assertEqual(0, report['failed'])

  def testTrainThenDiagnose(self):
    run_dir = self.path('run')
    self.assertEqual(0, self.relu('train', '--config', self.config,
                                  '--out', run_dir))
    self.assertEqual('ok', output.read_json(
        os.path.join(run_dir, 'summary.json'))['status'])
    self.assertEqual(0, self.relu(
        'diagnose', '--teacher', os.path.join(run_dir, 'teacher.json'),
        '--student', os.path.join(run_dir, 'checkpoints', 'epoch_01.json'),
        '--lambda', '0.25', '--n', '2000', '--out', self.path('diag')))
    doc = output.read_json(self.path('diag', 'diagnose.json'))
    self.assertEqual(1, len(doc['test_statistics']))
    self.assertTrue('residuals' in doc)
    self.assertTrue('audit' in doc)

  def testGenerateThenCertify(self):
    self.assertEqual(0, self.relu('gen-teacher', '--config', self.config,
                                  '--out', self.path('teacher')))
    self.assertEqual(0, self.relu(
        'certify', '--teacher', self.path('teacher', 'teacher.json'),
        '--out', self.path('cert')))
    report = output.read_json(self.path('cert', 'certify.json'))
    self.assertTrue(report['rho_fit'] > 0)


if __name__ == '__main__':
  unittest.main()
