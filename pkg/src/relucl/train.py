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


"""Three-stage training of the student on the population loss.

Stage 1 takes a single gradient step from the symmetric initialization.
Stage 2 freezes W and fits the second layer by proximal gradient on the
lasso-type objective E[(a^T s(Wx) - y~)^2] + lambda sum_j |w_j||a_j|, where
s is the ReLU minus its degree <= 1 part. The result is then norm balanced.
Stage 3 runs full gradient descent in epochs, halving weight decay at each.
"""
import logging
import math
import time

import numpy as np

from relucl import base
from relucl import gauss_expect
from relucl import geometry
from relucl import network
from relucl import objective

LOG = logging.getLogger(__name__)
SECTION_HEADER = 'TRAIN'

SYMMETRY_TOLERANCE = 1e-9
MIN_STEP = 1e-12
ROUNDING = 1e-14
BALANCE_TOLERANCE = 1e-6
# E[s(z)^2] for z ~ N(0, 1), s = relu minus its degree <= 1 Hermite part.
LAMBDA_SCALE = 0.25 - 0.5 / math.pi

TRACE_FIELDS = ('stage', 'epoch', 'iter', 'lambda', 'reg_loss', 'square_loss',
                'gap_surrogate', 'grad_norm', 'grad_ratio', 'balance_violation',
                'norm_sq', 'wall_time')


class Error(base.Error):
  """Base error for this module."""
  pass


class InvalidScheduleError(Error, base.ValidationError):
  """A schedule field is out of range."""
  def __init__(self, field, value):
    self.field = field
    self.value = value

  def __str__(self):
    return 'Schedule field %s has invalid value %r' % (self.field, self.value)


class StepSizeCollapseError(Error, base.NumericError):
  """Backtracking in Stage 2 shrank the step below MIN_STEP."""
  def __init__(self, step, iteration):
    self.step = step
    self.iteration = iteration

  def __str__(self):
    return ('Stage 2 step size collapsed to %g at iteration %d'
            % (self.step, self.iteration))


class DivergenceError(Error, base.NumericError):
  """Stage 3 loss grew past the divergence guard."""
  def __init__(self, epoch, iteration, loss, start_loss):
    self.epoch = epoch
    self.iteration = iteration
    self.loss = loss
    self.start_loss = start_loss

  def __str__(self):
    return ('Stage 3 diverged in epoch %d at iteration %d: loss %g, epoch '
            'start %g' % (self.epoch, self.iteration, self.loss,
                          self.start_loss))


class SymmetryBreakError(Error, base.NumericError):
  """The Stage 1 step moved the affine head off zero."""
  def __init__(self, alpha, beta_norm):
    self.alpha = alpha
    self.beta_norm = beta_norm

  def __str__(self):
    return ('Stage 1 head is not zero: |alpha| = %g, |beta| = %g'
            % (abs(self.alpha), self.beta_norm))


# name: (type, default). None defaults are derived in Schedule.__init__ or at
# run time from the input dimension.
SCHEDULE_FIELDS = {'eta0': (float, 1.0),
                   'lambda0': (float, 1.0),
                   'eps0': (float, 0.3),
                   'lambda_scale': (float, LAMBDA_SCALE),
                   'lambda_stage2': (float, None),
                   'eta2': (float, 1.0),
                   't2_max': (int, 5000),
                   'stage2_tol': (float, 1e-12),
                   'lambda30': (float, None),
                   'halvings': (int, None),
                   'eps_target': (float, 1e-4),
                   'eta3': (float, None),
                   'per_epoch_cap': (int, 20000),
                   'c_stop': (float, 1.0),
                   'log_every': (int, 10),
                   'balance_check_every': (int, 100),
                   'divergence_factor': (float, 10.0)}


def _coerce(name, value, option_type):
  """Convert a raw schedule value, rejecting non-integral ints."""
  if value is None:
    return None
  try:
    converted = option_type(value)
  except (TypeError, ValueError, OverflowError):
    raise InvalidScheduleError(name, value)
  if option_type is int and converted != value:
    raise InvalidScheduleError(name, value)
  return converted


def _derived_halvings(lambda30, eps_target):
  ratio = lambda30 * lambda30 / eps_target
  if not math.isfinite(ratio):
    raise InvalidScheduleError('halvings', ratio)
  if ratio <= 1.0:
    return 0
  return int(math.ceil(math.log2(ratio)))


class Schedule(object):
  """Step sizes, weight decays and iteration limits for all three stages.

  Derived defaults:
    lambda_stage2 = lambda_scale * sqrt(eps0)
    lambda30 = lambda_stage2
    halvings = ceil(log2(lambda30^2 / eps_target)), at least 0
    eta3 = 0.05 / (1 + d/32), resolved by stage3_step_size(d)

  lambda_scale defaults to |sigma_>=2|^2, the energy of a unit ReLU feature
  once its affine part is removed, so eps0 is measured against the part of
  the target the penalty competes with.
  """

  def __init__(self, **kwargs):
    unknown = sorted(set(kwargs) - set(SCHEDULE_FIELDS))
    if unknown:
      raise InvalidScheduleError(unknown[0], kwargs[unknown[0]])
    for name, (option_type, default) in SCHEDULE_FIELDS.items():
      value = kwargs.get(name)
      if value is None:
        value = default
      setattr(self, name, _coerce(name, value, option_type))
    # Derived values take logs and square roots of the raw ones.
    self.validate()
    if self.lambda_stage2 is None:
      self.lambda_stage2 = self.lambda_scale * math.sqrt(self.eps0)
    if self.lambda30 is None:
      self.lambda30 = self.lambda_stage2
    if self.halvings is None:
      self.halvings = _derived_halvings(self.lambda30, self.eps_target)
    self.validate()

  def validate(self):
    """Raise InvalidScheduleError unless every field is in range."""
    for name in SCHEDULE_FIELDS:
      value = getattr(self, name)
      if value is None:
        continue
      if name == 'halvings':
        ok = value >= 0
      else:
        ok = value > 0 and math.isfinite(value)
      if not ok:
        raise InvalidScheduleError(name, value)

  def stage3_step_size(self, d):
    if self.eta3 is not None:
      return self.eta3
    return 0.05 / (1.0 + d / 32.0)

  def epoch_lambdas(self):
    """Weight decay of epochs 1..halvings."""
    return [self.lambda30 / 2.0 ** k for k in range(1, self.halvings + 1)]

  def to_json_dict(self):
    return dict((name, getattr(self, name)) for name in sorted(SCHEDULE_FIELDS))

  @classmethod
  def from_config(cls, config, **overrides):
    """Build from the TRAIN section, with keyword overrides taking priority."""
    kwargs = {}
    for name, (option_type, _) in SCHEDULE_FIELDS.items():
      kwargs[name] = config.lazy_get(SECTION_HEADER, name,
                                     option_type=option_type)
    for name, value in overrides.items():
      if value is not None:
        kwargs[name] = value
    return cls(**kwargs)

  def __repr__(self):
    return 'Schedule(%s)' % ', '.join('%s=%r' % item for item in
                                      sorted(self.to_json_dict().items()))


class TrainTrace(object):
  """Ordered per-step records of a training run."""

  def __init__(self, rows=None):
    self.rows = list(rows or [])

  def record(self, **values):
    row = dict((field, values.get(field)) for field in TRACE_FIELDS)
    if self.rows:
      last = self.rows[-1]
      if (last['stage'], last['epoch']) == (row['stage'], row['epoch']) and \
          row['iter'] < last['iter']:
        raise ValueError('Trace iterations must not decrease within an epoch')
    self.rows.append(row)
    return row

  def extend(self, other):
    self.rows.extend(other.rows)

  def epoch_ends(self, stage=3):
    """Last row of each epoch of the given stage."""
    ends = {}
    for row in self.rows:
      if row['stage'] == stage:
        ends[row['epoch']] = row
    return [ends[epoch] for epoch in sorted(ends)]

  def column(self, field, stage=None):
    return [row[field] for row in self.rows
            if stage is None or row['stage'] == stage]

  def write_csv(self, path, delimiter=',', missing_field_value='nan',
                record_wall_time=False):
    """Write a header row and one row per record."""
    fields = [f for f in TRACE_FIELDS if record_wall_time or f != 'wall_time']
    with open(path, 'w') as trace_file:
      trace_file.write(delimiter.join(fields) + '\n')
      for row in self.rows:
        trace_file.write(base.compile_row([row[f] for f in fields], delimiter,
                                          missing_field_value) + '\n')

  def __len__(self):
    return len(self.rows)

  def __iter__(self):
    return iter(self.rows)


def balance_violation(student):
  """max_j (|a_j| - |w_j|) / max(1, |w_j|); -inf for an empty student."""
  if not student.m:
    return -math.inf
  norms = gauss_expect.row_norms(student.W)
  return float(np.max((np.abs(student.a) - norms) / np.maximum(1.0, norms)))


def _take_step(student, grad, eta):
  return network.Student(student.a - eta * grad.g_a,
                         student.W - eta * grad.g_W,
                         student.alpha - eta * grad.g_alpha,
                         student.beta - eta * grad.g_beta)


def _elapsed(clock):
  return time.perf_counter() - clock if clock is not None else None


def stage1_one_step(student, teacher, eta0=1.0, lambda0=1.0):
  """One full gradient step theta - eta0 * grad L_lambda0(theta).

  From a symmetric initialization the head stays at zero.

  Raises:
    SymmetryBreakError: |alpha| or |beta| after the step exceeds
        SYMMETRY_TOLERANCE, meaning the input was not symmetric.
  """
  grad = objective.population_gradient(student, teacher, lambda0)
  updated = _take_step(student, grad, eta0)
  beta_norm = float(np.linalg.norm(updated.beta))
  if abs(updated.alpha) > SYMMETRY_TOLERANCE or beta_norm > SYMMETRY_TOLERANCE:
    raise SymmetryBreakError(updated.alpha, beta_norm)
  LOG.debug('Stage 1 step done, |alpha| = %g, |beta| = %g',
            abs(updated.alpha), beta_norm)
  return updated


def soft_threshold(values, thresholds):
  return np.sign(values) * np.maximum(np.abs(values) - thresholds, 0.0)


class _SecondLayerProblem(object):
  """Quadratic a^T G a - 2 h^T a + c0 plus the weighted l1 penalty."""

  def __init__(self, W, teacher, lam):
    self.gram = gauss_expect.sigma_ge2_gram(W, W)
    self.linear = gauss_expect.sigma_ge2_gram(W, teacher.W_star).dot(
        teacher.a_star)
    self.const = float(teacher.a_star.dot(
        gauss_expect.sigma_ge2_gram(teacher.W_star, teacher.W_star)).dot(
            teacher.a_star))
    self.weights = lam * gauss_expect.row_norms(W)

  def smooth(self, a):
    return max(float(a.dot(self.gram).dot(a)) - 2.0 * float(self.linear.dot(a))
               + self.const, 0.0)

  def smooth_gradient(self, a):
    return 2.0 * (self.gram.dot(a) - self.linear)

  def objective(self, a):
    return self.smooth(a) + float(self.weights.dot(np.abs(a)))


def stage2_fit(student, teacher, lam, eta2=1.0, t2_max=5000, tol=1e-12,
               trace=None, log_every=10, clock=None):
  """Fit the second layer with W frozen, then set the head to its optimum.

  Each iteration takes a gradient step on the smooth part and soft-thresholds
  coordinate j at eta * lambda * |w_j|. A step that increases the objective is
  retried at half the step size.

  Args:
    student: Student after Stage 1. Only a is changed.
    teacher: Teacher.
    lam: Weight decay, lambda > 0 (lambda = 0 gives plain least squares).
    eta2: Initial step size.
    t2_max: Iteration limit.
    tol: Stop once an accepted step decreases the objective by less than this.
    trace: Optional TrainTrace for stage 2 rows.
    log_every: Trace cadence in iterations.
    clock: perf_counter() reading of the run start, for wall_time.

  Returns:
    Student with the fitted a, the same W, and (alpha, beta) = head_optimum.

  Raises:
    StepSizeCollapseError: backtracking shrank the step below MIN_STEP.
  """
  problem = _SecondLayerProblem(student.W, teacher, lam)
  a = student.a.copy()
  value = problem.objective(a)
  eta = float(eta2)
  iteration = 0
  for iteration in range(1, int(t2_max) + 1):
    grad = problem.smooth_gradient(a)
    while True:
      candidate = soft_threshold(a - eta * grad, eta * problem.weights)
      candidate_value = problem.objective(candidate)
      if candidate_value <= value:
        break
      # An increase at rounding level means a is optimal to working precision.
      if candidate_value - value <= ROUNDING * max(1.0, abs(value)):
        candidate, candidate_value = a, value
        break
      eta /= 2.0
      LOG.debug('Stage 2 backtracking to step %g at iteration %d', eta,
                iteration)
      if eta < MIN_STEP:
        raise StepSizeCollapseError(eta, iteration)
    decrease = value - candidate_value
    a, value = candidate, candidate_value
    if trace is not None and (iteration % log_every == 0 or decrease < tol or
                              iteration == t2_max):
      _record_stage2(trace, problem, a, student.W, teacher, lam, iteration,
                     clock)
    if decrease < tol:
      break
  LOG.info('Stage 2 finished after %d iterations, objective %.6e', iteration,
           value)
  fitted = network.Student(a, student.W, 0.0, np.zeros(student.d))
  fitted.alpha, fitted.beta = objective.head_optimum(fitted)
  return fitted


def _record_stage2(trace, problem, a, W, teacher, lam, iteration, clock):
  smooth = problem.smooth(a)
  reg = smooth + float(problem.weights.dot(np.abs(a)))
  trace.record(stage=2, epoch=0, iter=iteration, **{
      'lambda': lam,
      'reg_loss': reg,
      'square_loss': smooth,
      'gap_surrogate': reg - lam * teacher.a_l1,
      'grad_norm': float(np.linalg.norm(problem.smooth_gradient(a))),
      'balance_violation': None,
      'norm_sq': float(a.dot(a) + np.sum(W * W)),
      'wall_time': _elapsed(clock)})


def balance_norms(student):
  """Rescale every neuron so |a_j| = |w_j| with a_j |w_j| unchanged.

  Neurons with a_j = 0 or w_j = 0 become (0, 0). The head is refit to its
  optimum afterwards.
  """
  norms, units, alive = gauss_expect.unit_rows(student.W)
  scale = np.sqrt(np.abs(student.a) * norms)
  alive &= scale > 0
  a = np.where(alive, np.sign(student.a) * scale, 0.0)
  W = np.where(alive[:, None], units * scale[:, None], 0.0)
  balanced = network.Student(a, W, 0.0, np.zeros(student.d))
  balanced.alpha, balanced.beta = objective.head_optimum(balanced)
  dead = int(np.sum(~alive))
  if dead:
    LOG.debug('Balancing zeroed %d dead neurons', dead)
  return balanced


def _record_stage3(trace, epoch, iteration, lam, reg, square, gap, grad,
                   student, clock):
  return trace.record(stage=3, epoch=epoch, iter=iteration, **{
      'lambda': lam,
      'reg_loss': reg,
      'square_loss': square,
      'gap_surrogate': gap,
      'grad_norm': grad.frobenius_norm(),
      'grad_ratio': geometry.lower_bound_ratio(grad.norm_sq(), lam, gap),
      'balance_violation': balance_violation(student),
      'norm_sq': student.norm_sq(),
      'wall_time': _elapsed(clock)})


def stage3_epoch(student, teacher, lambda_k, eta3, cap, c_stop=1.0, epoch=1,
                 log_every=10, balance_check_every=100, divergence_factor=10.0,
                 clock=None):
  """Gradient descent at fixed weight decay until the gap is O(lambda^2).

  Stops as soon as max(gap surrogate, 0) <= c_stop * lambda_k^2, or after cap
  steps. The check happens before each step, so a student that already
  satisfies it is returned unchanged.

  Returns:
    (Student, TrainTrace) with the trace covering this epoch only.

  Raises:
    DivergenceError: the regularized loss rose above divergence_factor times
        its value at the start of the epoch, or became non-finite.
  """
  if lambda_k <= 0:
    raise InvalidScheduleError('lambda_k', lambda_k)
  if eta3 <= 0:
    raise InvalidScheduleError('eta3', eta3)
  trace = TrainTrace()
  current = student.copy()
  threshold = c_stop * lambda_k ** 2
  start = None
  for iteration in range(int(cap) + 1):
    reg, square, grad = objective.loss_and_gradient(current, teacher, lambda_k)
    if start is None:
      start = reg
    if not (math.isfinite(reg) and grad.is_finite()) or \
        reg > divergence_factor * start:
      raise DivergenceError(epoch, iteration, reg, start)
    gap = reg - lambda_k * teacher.a_l1
    done = max(gap, 0.0) <= threshold or iteration == cap
    if iteration % log_every == 0 or done:
      row = _record_stage3(trace, epoch, iteration, lambda_k, reg, square, gap,
                           grad, current, clock)
      LOG.debug('epoch %d iter %d: loss %.6e gap %.3e |grad| %.3e', epoch,
                iteration, reg, gap, row['grad_norm'])
    if iteration % balance_check_every == 0:
      violation = balance_violation(current)
      if violation > BALANCE_TOLERANCE:
        LOG.warning('Balance invariant violated by %g in epoch %d at '
                    'iteration %d', violation, epoch, iteration)
    if done:
      break
    current = _take_step(current, grad, eta3)
  if max(gap, 0.0) > threshold:
    LOG.warning('Epoch %d hit the iteration cap %d with gap %.3e > %.3e',
                epoch, cap, gap, threshold)
  LOG.info('Epoch %d (lambda %.4e) ended at iteration %d: loss %.6e, square '
           'loss %.6e, gap %.3e', epoch, lambda_k, iteration, reg, square, gap)
  return current, trace


def run_pipeline(teacher, schedule, m, seed, epoch_callback=None,
                 clock=None):
  """Initialize, then run Stage 1, Stage 2, balancing and all Stage 3 epochs.

  Args:
    teacher: Teacher.
    schedule: Schedule.
    m: Student width, even.
    seed: Student initialization seed.
    epoch_callback: Optional callback(epoch, lambda, student, epoch_trace),
        called after balancing with epoch 0 and after each Stage 3 epoch.
    clock: perf_counter() reading to measure wall time from. Default now.

  Returns:
    (Student, TrainTrace).
  """
  if clock is None:
    clock = time.perf_counter()
  trace = TrainTrace()
  student = network.init_student(m, teacher.d, seed)
  student = stage1_one_step(student, teacher, schedule.eta0, schedule.lambda0)
  reg, square, grad = objective.loss_and_gradient(student, teacher,
                                                  schedule.lambda0)
  trace.record(stage=1, epoch=0, iter=1, **{
      'lambda': schedule.lambda0, 'reg_loss': reg, 'square_loss': square,
      'gap_surrogate': geometry.gap_surrogate(student, teacher,
                                              schedule.lambda0),
      'grad_norm': grad.frobenius_norm(),
      'balance_violation': balance_violation(student),
      'norm_sq': student.norm_sq(), 'wall_time': _elapsed(clock)})
  student = stage2_fit(student, teacher, schedule.lambda_stage2,
                       schedule.eta2, schedule.t2_max, schedule.stage2_tol,
                       trace=trace, log_every=schedule.log_every, clock=clock)
  student = balance_norms(student)
  if epoch_callback:
    epoch_callback(0, schedule.lambda_stage2, student, TrainTrace())
  eta3 = schedule.stage3_step_size(teacher.d)
  for epoch, lam in enumerate(schedule.epoch_lambdas(), 1):
    student, epoch_trace = stage3_epoch(
        student, teacher, lam, eta3, schedule.per_epoch_cap, schedule.c_stop,
        epoch=epoch, log_every=schedule.log_every,
        balance_check_every=schedule.balance_check_every,
        divergence_factor=schedule.divergence_factor, clock=clock)
    trace.extend(epoch_trace)
    if epoch_callback:
      epoch_callback(epoch, lam, student, epoch_trace)
  return student, trace
