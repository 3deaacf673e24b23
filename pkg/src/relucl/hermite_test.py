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

"""Tests for Hermite polynomials and activation coefficients."""

import csv
import math
import os
import shutil
import tempfile
import unittest

import numpy as np

from relucl import hermite


# (k, x, h_k(x))
POLYNOMIAL_TESTS = [(0, 3.7, 1.0),
                    (1, 2.0, 2.0),
                    (2, 1.0, 0.0),
                    (3, 2.0, (8.0 - 6.0) / math.sqrt(6.0)),
                    (4, 0.0, 3.0 / math.sqrt(24.0))]

# (activation, k, sigma_hat_k)
COEFFICIENT_TESTS = [('relu', 0, 1.0 / math.sqrt(2.0 * math.pi)),
                     ('relu', 1, 0.5),
                     ('relu', 2, 1.0 / math.sqrt(4.0 * math.pi)),
                     ('relu', 3, 0.0),
                     ('relu', 4, -1.0 / (math.sqrt(2.0 * math.pi) *
                                         math.sqrt(24.0))),
                     ('abs', 0, math.sqrt(2.0 / math.pi)),
                     ('abs', 1, 0.0),
                     ('abs', 2, 1.0 / math.sqrt(math.pi))]


def _h(k):
  return lambda z: hermite.hermite_normalized(k, z)


class HermiteTestCase(unittest.TestCase):
  def assertCloseTo(self, expected, actual, tol, label=''):
    if not abs(expected - actual) <= tol:
      self.fail('%s: %r differs from %r by more than %g'
                % (label, actual, expected, tol))


class PolynomialTest(HermiteTestCase):

  def testKnownValues(self):
    for k, x, expected in POLYNOMIAL_TESTS:
      self.assertCloseTo(expected, hermite.hermite_normalized(k, x), 1e-14,
                         'h_%d(%g)' % (k, x))

  def testArrayMatchesScalar(self):
    xs = np.linspace(-3.0, 3.0, 7)
    values = hermite.hermite_normalized(5, xs)
    for x, value in zip(xs, values):
      self.assertCloseTo(hermite.hermite_normalized(5, float(x)), value, 1e-14)

  def testAllOrders(self):
    xs = np.array([-1.5, 0.3, 2.0])
    table = hermite.hermite_all(6, xs)
    for k in range(7):
      np.testing.assert_allclose(table[k], hermite.hermite_normalized(k, xs),
                                 rtol=0, atol=1e-13)

  def testLargeOrderStaysFinite(self):
    self.assertTrue(np.isfinite(hermite.hermite_normalized(2000, 10.0)))

  def testOrthonormality(self):
    for m in range(21):
      for n in range(21):
        value = hermite.quadrature_inner(_h(m), _h(n), 200)
        self.assertCloseTo(1.0 if m == n else 0.0, value, 1e-8,
                           '<h_%d, h_%d>' % (m, n))


class QuadratureTest(HermiteTestCase):

  def testExamples(self):
    self.assertCloseTo(1.0, hermite.quadrature_inner(_h(3), _h(3), 50), 1e-12)
    self.assertCloseTo(0.0, hermite.quadrature_inner(_h(2), _h(5), 50), 1e-12)
    value = hermite.quadrature_inner(hermite.relu, _h(0), 200,
                                     breakpoints=(0.0,))
    self.assertCloseTo(1.0 / math.sqrt(2.0 * math.pi), value, 1e-10)

  def testTooFewNodes(self):
    self.assertRaises(ValueError, hermite.quadrature_inner, _h(0), _h(0), 1)


class TableTest(HermiteTestCase):

  def setUp(self):
    self.relu = hermite.build_table('relu', 512)
    self.abs = hermite.build_table('abs', 512)

  def testClosedForms(self):
    tables = {'relu': self.relu, 'abs': self.abs}
    for tag, k, expected in COEFFICIENT_TESTS:
      self.assertCloseTo(expected, tables[tag][k], 1e-15, '%s[%d]' % (tag, k))

  def testOddVanish(self):
    self.assertTrue(np.all(self.relu.coeffs[3::2] == 0.0))
    self.assertTrue(np.all(self.abs.coeffs[1::2] == 0.0))

  def testAbsIsTwiceReluOnEven(self):
    np.testing.assert_allclose(self.abs.coeffs[0::2],
                               2.0 * self.relu.coeffs[0::2], rtol=1e-12)

  def testMatchesQuadrature(self):
    for k in range(31):
      value = hermite.quadrature_inner(hermite.relu, _h(k), 400,
                                       breakpoints=(0.0,))
      self.assertCloseTo(value, self.relu[k], 1e-8, 'relu[%d]' % k)
    for k in range(0, 21, 2):
      value = hermite.quadrature_inner(hermite.abs_activation, _h(k), 400,
                                       breakpoints=(0.0,))
      self.assertCloseTo(value, self.abs[k], 1e-8, 'abs[%d]' % k)

  def testSignAlternation(self):
    for k in range(2, 40, 2):
      expected_sign = 1.0 if (k // 2 - 1) % 2 == 0 else -1.0
      self.assertEqual(expected_sign, np.sign(self.relu[k]))

  def testDecay(self):
    scaled = [self.relu[k] ** 2 * k ** 2.5 for k in range(10, 301, 2)]
    for value in scaled:
      self.assertTrue(0.01 <= value <= 100.0, value)
    for prev, cur in zip(scaled[:-1], scaled[1:]):
      self.assertTrue(0.5 <= cur / prev <= 2.0)

  def testDefaultTableIsFinite(self):
    table = hermite.get_table('relu')
    self.assertEqual(hermite.DEFAULT_K_MAX, table.k_max)
    self.assertTrue(np.all(np.isfinite(table.coeffs)))
    self.assertTrue(table[hermite.DEFAULT_K_MAX] != 0.0)

  def testTailSum(self):
    # sum over all k of sigma_hat_k^2 is E[relu(z)^2] = 1/2
    head = self.relu.squared_tail(0)
    self.assertTrue(0.49 < head < 0.5)
    self.assertCloseTo(head - self.relu[0] ** 2 - self.relu[1] ** 2,
                       self.relu.squared_tail(2), 1e-15)

  def testBadArguments(self):
    self.assertRaises(hermite.UnknownActivationError, hermite.build_table,
                      'tanh', 10)
    self.assertRaises(hermite.TableSizeError, hermite.build_table, 'relu', 1)

  def testImmutable(self):
    self.assertRaises(ValueError, self.relu.coeffs.__setitem__, 0, 1.0)


class DumpTest(unittest.TestCase):

  def setUp(self):
    self.tmp_dir = tempfile.mkdtemp()

  def tearDown(self):
    shutil.rmtree(self.tmp_dir)

  def testCsv(self):
    path = os.path.join(self.tmp_dir, 'relu.csv')
    table = hermite.build_table('relu', 10)
    table.dump_csv(path)
    with open(path) as csv_file:
      rows = list(csv.reader(csv_file))
    self.assertEqual(['k', 'sigma_hat_k'], rows[0])
    self.assertEqual(12, len(rows))
    self.assertEqual(table[2], float(rows[3][1]))


if __name__ == '__main__':
  unittest.main()
