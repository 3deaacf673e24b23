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

"""Tests for the three training stages and the pipeline."""

import math
import os
import shutil
import tempfile
import unittest

import numpy as np

from relucl import certificate
from relucl import config
from relucl import gauss_expect
from relucl import geometry
from relucl import network
from relucl import objective
from relucl import train


def unit_rows(rng, m, d):
  rows = rng.standard_normal((m, d))
  return rows / gauss_expect.row_norms(rows)[:, None]


def balanced_teacher_copy(teacher):
  """Zero-residual student with |a_j| = |w_j|."""
  scale = np.sqrt(np.abs(teacher.a_star))
  return network.Student(np.sign(teacher.a_star) * scale,
                         scale[:, None] * teacher.W_star,
                         -teacher.alpha_star, -teacher.beta_star)


def small_teacher(seed=3):
  return network.sample_teacher(8, 2, 2, 0.5, [1.0, -1.5], seed)


class TrainTestCase(unittest.TestCase):
  def assertNonIncreasing(self, values, slack=1e-12):
    for before, after in zip(values, values[1:]):
      if after > before + slack * max(1.0, abs(before)):
        self.fail('sequence increased from %r to %r' % (before, after))

  def assertStudentsEqual(self, first, second):
    np.testing.assert_array_equal(first.a, second.a)
    np.testing.assert_array_equal(first.W, second.W)
    self.assertEqual(first.alpha, second.alpha)
    np.testing.assert_array_equal(first.beta, second.beta)


class ScheduleTest(TrainTestCase):

  def testDefaults(self):
    schedule = train.Schedule()
    self.assertAlmostEqual(train.LAMBDA_SCALE * math.sqrt(0.3),
                           schedule.lambda_stage2, 15)
    self.assertEqual(schedule.lambda_stage2, schedule.lambda30)
    self.assertEqual(5, schedule.halvings)
    self.assertAlmostEqual(0.025, schedule.stage3_step_size(32), 15)
    self.assertEqual(5000, schedule.t2_max)

  def testUnitLambdaScale(self):
    schedule = train.Schedule(lambda_scale=1.0)
    self.assertAlmostEqual(math.sqrt(0.3), schedule.lambda_stage2, 15)
    self.assertEqual(12, schedule.halvings)

  def testStage2KeepsNeurons(self):
    # A relu student fit at the default weight decay keeps some mass.
    teacher = small_teacher()
    schedule = train.Schedule(t2_max=500)
    student = train.stage1_one_step(network.init_student(16, 8, 0), teacher)
    fitted = train.stage2_fit(student, teacher, schedule.lambda_stage2,
                              schedule.eta2, schedule.t2_max,
                              schedule.stage2_tol)
    self.assertTrue(np.count_nonzero(fitted.a) > 0)
    self.assertTrue(objective.population_square_loss(fitted, teacher) <
                    objective.population_square_loss(student, teacher))

  def testEpochLambdas(self):
    schedule = train.Schedule(lambda30=1.0, halvings=3)
    self.assertEqual([0.5, 0.25, 0.125], schedule.epoch_lambdas())
    self.assertEqual([], train.Schedule(halvings=0).epoch_lambdas())

  def testExplicitStepSize(self):
    self.assertEqual(0.5, train.Schedule(eta3=0.5).stage3_step_size(1000))

  def testInvalid(self):
    for field, value in (('eta0', 0.0), ('eps0', -1.0), ('eps0', 0.0),
                         ('eps_target', 0.0), ('eps_target', -1.0),
                         ('eps_target', float('nan')), ('lambda_scale', 0.0),
                         ('lambda_scale', -0.5), ('halvings', -1),
                         ('halvings', float('inf')), ('t2_max', 2.5),
                         ('t2_max', float('nan')), ('eta2', 'fast'),
                         ('c_stop', float('nan'))):
      try:
        train.Schedule(**{field: value})
      except train.InvalidScheduleError as err:
        self.assertEqual(field, err.field)
      else:
        self.fail('%s=%r accepted' % (field, value))
    self.assertRaises(train.InvalidScheduleError, train.Schedule, epochs=3)

  def testTinyTargetGivesManyHalvings(self):
    schedule = train.Schedule(lambda30=1.0, eps_target=1e-300)
    self.assertEqual(997, schedule.halvings)

  def testFromConfig(self):
    tempdir = tempfile.mkdtemp()
    try:
      conf = config.load_configuration(os.path.join(tempdir, 'config'))
      conf.set(train.SECTION_HEADER, 'eps0', '0.16')
      schedule = train.Schedule.from_config(conf, halvings=2, eta3=None)
    finally:
      shutil.rmtree(tempdir)
    self.assertAlmostEqual(0.4 * train.LAMBDA_SCALE, schedule.lambda_stage2,
                           15)
    self.assertEqual(2, schedule.halvings)
    self.assertEqual(None, schedule.eta3)
    self.assertEqual(20000, schedule.per_epoch_cap)


class TrainTraceTest(TrainTestCase):

  def _row(self, trace, epoch, iteration, loss):
    return trace.record(stage=3, epoch=epoch, iter=iteration, reg_loss=loss,
                        wall_time=1.5, **{'lambda': 0.1})

  def testEpochEnds(self):
    trace = train.TrainTrace()
    self._row(trace, 1, 0, 3.0)
    self._row(trace, 1, 10, 2.0)
    self._row(trace, 2, 0, 1.0)
    self._row(trace, 2, 5, 0.5)
    self.assertEqual([2.0, 0.5],
                     [row['reg_loss'] for row in trace.epoch_ends()])
    self.assertEqual([3.0, 2.0, 1.0, 0.5], trace.column('reg_loss'))
    self.assertEqual(None, trace.rows[0]['grad_norm'])

  def testIterationsMustNotDecrease(self):
    trace = train.TrainTrace()
    self._row(trace, 1, 10, 1.0)
    self.assertRaises(ValueError, self._row, trace, 1, 5, 1.0)
    self._row(trace, 2, 0, 1.0)

  def testWriteCsv(self):
    trace = train.TrainTrace()
    self._row(trace, 1, 0, 0.1)
    tempdir = tempfile.mkdtemp()
    try:
      path = os.path.join(tempdir, 'trace.csv')
      trace.write_csv(path)
      with open(path) as trace_file:
        lines = trace_file.read().splitlines()
      trace.write_csv(path, record_wall_time=True)
      with open(path) as trace_file:
        timed = trace_file.read().splitlines()
    finally:
      shutil.rmtree(tempdir)
    header = lines[0].split(',')
    self.assertEqual(list(train.TRACE_FIELDS[:-1]), header)
    fields = dict(zip(header, lines[1].split(',')))
    self.assertEqual('3', fields['stage'])
    self.assertEqual(0.1, float(fields['reg_loss']))
    self.assertEqual('nan', fields['grad_norm'])
    self.assertEqual('wall_time', timed[0].split(',')[-1])


class Stage1Test(TrainTestCase):

  def _step(self, d, m, seed=0):
    direction = np.zeros(d)
    direction[0] = 1.0
    teacher = network.teacher_with_directions([1.0], [direction])
    start = network.init_student(m, d, seed)
    return start, train.stage1_one_step(start, teacher)

  def _alignment(self, stepped):
    # |cos| between w_i^1 and H w_i^0 with H = e1 e1^T
    _, units, _ = gauss_expect.unit_rows(stepped.W)
    return np.abs(units[:, 0])

  def testAlignsWithTeacher(self):
    _, stepped = self._step(32, 16)
    self.assertTrue(np.all(self._alignment(stepped) >= 0.9))

  def testHeadStaysZero(self):
    _, stepped = self._step(32, 16)
    self.assertTrue(abs(stepped.alpha) <= 1e-12)
    self.assertTrue(np.linalg.norm(stepped.beta) <= 1e-12)

  def testNormsBounded(self):
    _, stepped = self._step(32, 16)
    norms = gauss_expect.row_norms(stepped.W)
    self.assertTrue(np.all(norms > 0.0))
    self.assertTrue(np.all(norms <= math.sqrt(32)))

  def testAlignmentImprovesWithDimension(self):
    medians = []
    for d in (16, 32, 64):
      _, stepped = self._step(d, 128, seed=5)
      medians.append(float(np.median(self._alignment(stepped))))
    self.assertTrue(medians[0] < medians[1] < medians[2], medians)
    self.assertTrue(medians[2] >= 0.9)

  def testAsymmetricStartRejected(self):
    rng = np.random.default_rng(0)
    teacher = small_teacher()
    student = network.Student(rng.standard_normal(4), unit_rows(rng, 4, 8),
                              0.0, np.zeros(8))
    self.assertRaises(train.SymmetryBreakError, train.stage1_one_step,
                      student, teacher)


class Stage2Test(TrainTestCase):

  def setUp(self):
    self.rng = np.random.default_rng(11)
    self.teacher = small_teacher()

  def testSingleStepIsProx(self):
    W = unit_rows(self.rng, 4, 8)
    student = network.Student(np.zeros(4), W, 0.0, np.zeros(8))
    fitted = train.stage2_fit(student, self.teacher, 0.1, eta2=0.5, t2_max=1)
    linear = gauss_expect.sigma_ge2_gram(W, self.teacher.W_star).dot(
        self.teacher.a_star)
    expected = train.soft_threshold(0.5 * 2.0 * linear, 0.5 * 0.1 * np.ones(4))
    np.testing.assert_allclose(fitted.a, expected, rtol=1e-12, atol=1e-15)
    np.testing.assert_array_equal(W, fitted.W)

  def testInterpolatesWithoutPenalty(self):
    W = np.vstack([self.teacher.W_star, unit_rows(self.rng, 2, 8)])
    student = network.Student(np.zeros(4), W, 0.0, np.zeros(8))
    fitted = train.stage2_fit(student, self.teacher, 0.0, eta2=1.0,
                              t2_max=5000, tol=1e-20)
    self.assertTrue(objective.population_square_loss(fitted, self.teacher)
                    <= 1e-6)

  def testObjectiveMonotone(self):
    W = unit_rows(self.rng, 6, 8) * self.rng.uniform(0.5, 2.0, (6, 1))
    student = network.Student(self.rng.standard_normal(6), W, 0.0, np.zeros(8))
    trace = train.TrainTrace()
    train.stage2_fit(student, self.teacher, 0.3, eta2=4.0, t2_max=300,
                     tol=0.0, trace=trace, log_every=1)
    losses = trace.column('reg_loss', stage=2)
    self.assertEqual(300, len(losses))
    self.assertNonIncreasing(losses, slack=0.0)

  def testHeadIsOptimal(self):
    W = unit_rows(self.rng, 4, 8)
    student = network.Student(np.zeros(4), W, 0.0, np.zeros(8))
    fitted = train.stage2_fit(student, self.teacher, 0.1, t2_max=50)
    alpha_hat, beta_hat = objective.head_optimum(fitted)
    self.assertEqual(alpha_hat, fitted.alpha)
    np.testing.assert_array_equal(beta_hat, fitted.beta)


class BalanceTest(TrainTestCase):

  def testExample(self):
    student = network.Student([4.0], [[0.25, 0.0, 0.0]], 0.0, np.zeros(3))
    balanced = train.balance_norms(student)
    self.assertAlmostEqual(1.0, balanced.a[0], 15)
    np.testing.assert_allclose(balanced.W[0], [1.0, 0.0, 0.0], atol=1e-15)

  def testFixedPoint(self):
    rng = np.random.default_rng(2)
    W = unit_rows(rng, 5, 4) * rng.uniform(0.5, 2.0, (5, 1))
    norms = gauss_expect.row_norms(W)
    student = network.Student(rng.choice([-1.0, 1.0], 5) * norms, W, 0.0,
                              np.zeros(4))
    balanced = train.balance_norms(student)
    np.testing.assert_allclose(balanced.a, student.a, rtol=1e-15, atol=0)
    np.testing.assert_allclose(balanced.W, student.W, rtol=0, atol=1e-15 * 2)

  def testRandomStudent(self):
    rng = np.random.default_rng(3)
    teacher = small_teacher()
    student = network.Student(rng.standard_normal(6),
                              rng.standard_normal((6, 8)),
                              rng.standard_normal(), rng.standard_normal(8))
    balanced = train.balance_norms(student)
    np.testing.assert_allclose(np.abs(balanced.a),
                               gauss_expect.row_norms(balanced.W), rtol=1e-12)
    np.testing.assert_allclose(balanced.masses(), student.masses(), rtol=1e-12)
    self.assertTrue(objective.population_square_loss(balanced, teacher) <=
                    objective.population_square_loss(student, teacher) + 1e-12)
    self.assertAlmostEqual(objective.high_order_loss(student, teacher),
                           objective.high_order_loss(balanced, teacher), 12)

  def testDeadNeurons(self):
    student = network.Student([0.0, 2.0, 1.0], [[1.0, 0.0], [0.0, 0.0],
                                                [0.0, 4.0]], 0.0, np.zeros(2))
    balanced = train.balance_norms(student)
    np.testing.assert_array_equal([0.0, 0.0, 2.0], balanced.a)
    np.testing.assert_array_equal([[0.0, 0.0], [0.0, 0.0], [0.0, 2.0]],
                                  balanced.W)


class Stage3Test(TrainTestCase):

  def setUp(self):
    self.teacher = small_teacher()

  def testStopsAtOptimum(self):
    student = balanced_teacher_copy(self.teacher)
    result, trace = train.stage3_epoch(student, self.teacher, 0.05, 0.04, 100)
    self.assertEqual(1, len(trace))
    self.assertEqual(0, trace.rows[0]['iter'])
    self.assertStudentsEqual(student, result)

  def _random_epoch(self, cap):
    rng = np.random.default_rng(8)
    student = network.Student(0.5 * rng.standard_normal(6),
                              0.5 * unit_rows(rng, 6, 8), 0.0, np.zeros(8))
    student = train.balance_norms(student)
    eta3 = train.Schedule().stage3_step_size(8)
    _, trace = train.stage3_epoch(student, self.teacher, 0.1, eta3, cap,
                                  c_stop=1e-12, log_every=1)
    return trace

  def testLossNonIncreasing(self):
    trace = self._random_epoch(200)
    losses = trace.column('reg_loss')
    self.assertTrue(len(losses) > 1)
    self.assertNonIncreasing(losses)
    self.assertEqual(list(range(len(losses))), trace.column('iter'))
    last = trace.rows[-1]
    self.assertTrue(last['iter'] == 200 or
                    max(last['gap_surrogate'], 0.0) <= 1e-12 * 0.1 ** 2)

  def testStopsWhenGapTurnsNegative(self):
    # The surrogate drops below zero before the penalized optimum.
    trace = self._random_epoch(2000)
    last = trace.rows[-1]
    self.assertTrue(last['iter'] < 2000)
    self.assertTrue(last['gap_surrogate'] <= 0.0)
    self.assertTrue(all(row['gap_surrogate'] > 0.0 for row in trace.rows[:-1]))

  def testGradRatioColumn(self):
    rng = np.random.default_rng(12)
    student = balanced_teacher_copy(self.teacher)
    student.W = student.W + 0.05 * rng.standard_normal(student.W.shape)
    student = train.balance_norms(student)
    lam = 0.02
    _, trace = train.stage3_epoch(student, self.teacher, lam, 0.04, 50,
                                  c_stop=1e-12, log_every=1)
    expected = [geometry.lower_bound_ratio(row['grad_norm'] ** 2, lam,
                                           row['gap_surrogate'])
                for row in trace]
    expected[0] = geometry.grad_lower_bound_ratio(student, self.teacher, lam)
    for value, row in zip(expected, trace):
      if math.isinf(value):
        self.assertEqual(value, row['grad_ratio'])
      else:
        self.assertTrue(row['grad_ratio'] > 0.0)
        self.assertAlmostEqual(value, row['grad_ratio'], delta=1e-9 * value)

  def testBalanceKept(self):
    rng = np.random.default_rng(9)
    student = balanced_teacher_copy(self.teacher)
    student.W = student.W + 1e-3 * rng.standard_normal(student.W.shape)
    student = train.balance_norms(student)
    _, trace = train.stage3_epoch(student, self.teacher, 0.05, 0.04, 300,
                                  c_stop=1e-12, log_every=1)
    self.assertTrue(max(trace.column('balance_violation')) <= 1e-6)

  def testDivergence(self):
    rng = np.random.default_rng(10)
    student = network.Student(rng.standard_normal(4), unit_rows(rng, 4, 8),
                              0.0, np.zeros(8))
    self.assertRaises(train.DivergenceError, train.stage3_epoch, student,
                      self.teacher, 0.1, 100.0, 50, c_stop=1e-12)

  def testBadArguments(self):
    student = balanced_teacher_copy(self.teacher)
    self.assertRaises(train.InvalidScheduleError, train.stage3_epoch, student,
                      self.teacher, 0.0, 0.04, 10)
    self.assertRaises(train.InvalidScheduleError, train.stage3_epoch, student,
                      self.teacher, 0.1, -1.0, 10)


class PipelineTest(TrainTestCase):

  def setUp(self):
    self.teacher = network.sample_teacher(6, 2, 2, 0.5, [1.0, 1.0], 4)

  def _schedule(self, **overrides):
    values = dict(t2_max=200, halvings=2, per_epoch_cap=40, log_every=5)
    values.update(overrides)
    return train.Schedule(**values)

  def testNoEpochs(self):
    schedule = self._schedule(halvings=0)
    student, trace = train.run_pipeline(self.teacher, schedule, 8, 1)
    expected = network.init_student(8, 6, 1)
    expected = train.stage1_one_step(expected, self.teacher)
    expected = train.stage2_fit(expected, self.teacher,
                                schedule.lambda_stage2, schedule.eta2,
                                schedule.t2_max, schedule.stage2_tol)
    expected = train.balance_norms(expected)
    self.assertStudentsEqual(expected, student)
    self.assertEqual([], trace.epoch_ends())

  def testDeterministic(self):
    first, first_trace = train.run_pipeline(self.teacher, self._schedule(), 8, 2)
    second, second_trace = train.run_pipeline(self.teacher, self._schedule(), 8,
                                              2)
    self.assertStudentsEqual(first, second)
    strip = lambda trace: [dict(row, wall_time=None) for row in trace]
    self.assertEqual(strip(first_trace), strip(second_trace))

  def testCallback(self):
    calls = []
    def callback(epoch, lam, student, epoch_trace):
      calls.append((epoch, lam, student.m, len(epoch_trace)))
    schedule = self._schedule()
    train.run_pipeline(self.teacher, schedule, 8, 2, epoch_callback=callback)
    self.assertEqual([0, 1, 2], [call[0] for call in calls])
    self.assertEqual([schedule.lambda_stage2] + schedule.epoch_lambdas(),
                     [call[1] for call in calls])
    self.assertEqual(0, calls[0][3])
    self.assertTrue(all(call[3] > 0 for call in calls[1:]))

  def testTraceStages(self):
    _, trace = train.run_pipeline(self.teacher, self._schedule(), 8, 2)
    stages = trace.column('stage')
    self.assertEqual(1, stages[0])
    self.assertEqual(sorted(stages), stages)
    self.assertEqual(set([1, 2, 3]), set(stages))


@unittest.skipUnless(os.environ.get('RELUCL_SLOW'), 'set RELUCL_SLOW=1')
class RecoveryTest(TrainTestCase):

  @classmethod
  def setUpClass(cls):
    cls.teacher = network.sample_teacher(24, 2, 3, 0.4, [1.0, -1.0, 2.0], 0)
    cls.epoch_reports = []
    def callback(epoch, lam, student, epoch_trace):
      if epoch:
        cls.epoch_reports.append((lam, geometry.partition(student,
                                                          cls.teacher)))
    schedule = train.Schedule(eps0=0.3, halvings=14)
    cls.student, cls.trace = train.run_pipeline(cls.teacher, schedule, 64, 0,
                                                epoch_callback=callback)

  def testRecovery(self):
    teacher, student = self.teacher, self.student
    self.assertTrue(objective.population_square_loss(student, teacher) <= 1e-4)
    report = geometry.partition(student, teacher)
    self.assertTrue(np.all(report.min_close <= 0.05), report.min_close)
    massive = np.abs(student.masses()) > 1e-3
    self.assertTrue(np.all(report.delta[massive] <= 0.08))

  def testEpochInvariants(self):
    for row in self.trace:
      if row['stage'] == 3:
        self.assertTrue(row['balance_violation'] <= 1e-6)
        self.assertTrue(row['norm_sq'] <= 3.3 * self.teacher.a_l1)
    far = [r.weighted_far for _, r in self.epoch_reports]
    self.assertNonIncreasing(far[1:], slack=1e-9)
    self.assertTrue(far[-1] <= 10 * self.epoch_reports[-1][0])
    for i in range(self.teacher.m_star):
      self.assertNonIncreasing([r.min_close[i] for _, r in self.epoch_reports],
                               slack=1e-6)
    cap = train.Schedule().per_epoch_cap
    for row in self.trace.epoch_ends():
      self.assertTrue(row['iter'] == cap or
                      max(row['gap_surrogate'], 0.0) <= row['lambda'] ** 2)
    gaps = [row['gap_surrogate'] for row in self.trace.epoch_ends()]
    self.assertNonIncreasing(gaps, slack=1e-9)

  def testGradientLowerBound(self):
    ratios = [row['grad_ratio'] for row in self.trace
              if row['stage'] == 3 and
              geometry.in_regime(row['gap_surrogate'], row['lambda'])]
    self.assertTrue(len(ratios) >= 50, len(ratios))
    self.assertTrue(min(ratios) > 0.0)

  def testTestStatistic(self):
    teacher, student = self.teacher, self.student
    assign = geometry.partition(student, teacher).assign
    for i in range(teacher.m_star):
      ell_t = certificate.default_test_ell(teacher, i)
      scale = (abs(teacher.a_star[i]) *
               certificate.test_statistic_scale(ell_t))
      intact = certificate.test_statistic(student, teacher, i, ell_t)
      self.assertTrue(abs(intact) < 0.05 * scale, (i, intact, scale))
      keep = assign != i
      pruned = network.Student(student.a[keep], student.W[keep],
                               student.alpha, student.beta)
      removed = certificate.test_statistic(pruned, teacher, i, ell_t)
      self.assertTrue(removed > 0.25 * scale, (i, removed, scale))


if __name__ == '__main__':
  unittest.main()
