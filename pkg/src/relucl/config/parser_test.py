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

"""Tests for the tool-defaults parser."""

import configparser
import os
import shutil
import tempfile
import unittest

import relucl.config
from relucl.config import parser


class LazyGetTest(unittest.TestCase):

  def setUp(self):
    self.config = parser.ConfigParser(configparser.RawConfigParser)
    self.config.ensure_basic_options({'GENERAL': {'eta3': '0.5',
                                                  'flag': 'True'},
                                      'TRAIN': {'eta3': '0.01',
                                                'lambda30': 'auto',
                                                'bad': 'x1'}})

  def testSectionBeatsBackup(self):
    self.assertEqual(0.01, self.config.lazy_get('TRAIN', 'eta3',
                                                option_type=float))

  def testBackupSection(self):
    self.assertEqual(0.5, self.config.lazy_get('CERTIFICATE', 'eta3',
                                               option_type=float))
    self.assertTrue(self.config.lazy_get('TRAIN', 'flag', option_type=bool))

  def testDefaultAndAuto(self):
    self.assertEqual(7, self.config.lazy_get('TRAIN', 'missing', default=7,
                                             option_type=int))
    self.assertEqual(None, self.config.lazy_get('TRAIN', 'lambda30',
                                                option_type=float))

  def testBadType(self):
    self.assertRaises(parser.OptionTypeError, self.config.lazy_get,
                      'TRAIN', 'bad', option_type=float)

  def testSetMissingDefault(self):
    self.config.set_missing_default('TRAIN', 'eta3', 9)
    self.config.set_missing_default('NEW', 'x', 9)
    self.assertEqual('0.01', self.config.get('TRAIN', 'eta3'))
    self.assertEqual('9', self.config.get('NEW', 'x'))


class LoadConfigurationTest(unittest.TestCase):

  def setUp(self):
    self.tmp_dir = tempfile.mkdtemp()

  def tearDown(self):
    shutil.rmtree(self.tmp_dir)

  def testWritesDefaults(self):
    path = os.path.join(self.tmp_dir, 'config')
    config = relucl.config.load_configuration(path)
    self.assertTrue(os.path.exists(path))
    self.assertEqual(8192, config.lazy_get('HERMITE', 'k_max',
                                           option_type=int))
    self.assertEqual(None, config.lazy_get('TRAIN', 'eta3',
                                           option_type=float))

  def testKeepsUserValues(self):
    path = os.path.join(self.tmp_dir, 'config')
    with open(path, 'w') as config_file:
      config_file.write('[TRAIN]\neta3 = 0.02\n')
    config = relucl.config.load_configuration(path)
    self.assertEqual(0.02, config.lazy_get('TRAIN', 'eta3', option_type=float))
    self.assertEqual(5000, config.lazy_get('TRAIN', 't2_max', option_type=int))


if __name__ == '__main__':
  unittest.main()
