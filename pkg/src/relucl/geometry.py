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


"""Structure diagnostics of a student relative to its teacher.

Neurons are partitioned by unsigned angle to the nearest teacher direction.
On top of that partition this module reports average neurons, far-away mass,
the gap surrogate, the residual decomposition R = R1 + R2 + R3 and audits of
the descent directions.

Teacher indices are 0-based everywhere.
"""
import logging
import math

import numpy as np

from relucl import base
from relucl import gauss_expect
from relucl import network
from relucl import objective

LOG = logging.getLogger(__name__)
SECTION_HEADER = 'GEOMETRY'

DEFAULT_MC_N = 200000
DELTA_CLOSE_MAX = 0.3
DELTA_SIGN_MAX = math.pi / 4.0
ZETA_FLOOR = 1e-300
LOG_FLOAT_MAX = math.log(np.finfo(float).max)


class Error(base.Error):
  """Base error for this module."""
  pass


class EmptyNeighborhoodError(Error, base.NumericError):
  """No same-sign student mass within delta_close of a teacher direction."""
  def __init__(self, teacher_index, delta_close):
    self.teacher_index = teacher_index
    self.delta_close = delta_close

  def __str__(self):
    return ('Teacher %d has no same-sign neuron within %g rad'
            % (self.teacher_index, self.delta_close))


class InvalidRadiusError(Error, base.ValidationError):
  """Audit radii outside 0 < delta_close < delta_sign <= pi/2."""
  def __init__(self, delta_close, delta_sign):
    self.delta_close = delta_close
    self.delta_sign = delta_sign

  def __str__(self):
    return ('Need 0 < delta_close < delta_sign <= pi/2, got delta_close=%r '
            'delta_sign=%r' % (self.delta_close, self.delta_sign))


def _json_float(value):
  value = float(value)
  return value if math.isfinite(value) else None


def unsigned_angles(W, W_star):
  """Matrix of unsigned angles between rows of W and rows of W_star.

  Computed as atan2 of the perpendicular and parallel components, which keeps
  full precision for nearly parallel vectors. Zero rows of W give pi/2.
  """
  _, units, alive = gauss_expect.unit_rows(np.atleast_2d(W))
  _, units_star, _ = gauss_expect.unit_rows(np.atleast_2d(W_star))
  cos = units.dot(units_star.T)
  perp = units[:, None, :] - cos[:, :, None] * units_star[None, :, :]
  sin = np.sqrt(np.einsum('ijk,ijk->ij', perp, perp))
  angles = np.arctan2(sin, np.abs(cos))
  angles[~alive] = math.pi / 2.0
  return angles


class PartitionReport(object):
  """Assignment of student neurons to teacher directions.

  Attributes:
    assign: Teacher index of each neuron.
    delta: Unsigned angle of each neuron to its teacher; 0 for zero neurons.
    mass: Per-teacher signed mass sum a_j |w_j|.
    avg_neuron: Per-teacher sum a_j w_j, shape (m_star, d).
    avg_dist: Per-teacher |v_i - a*_i w*_i|.
    weighted_far: sum_j |a_j| |w_j| delta_j^2.
    min_close: Per-teacher smallest delta over its nonzero neurons, nan if it
        has none.
  """

  def __init__(self, assign, delta, alive, mass, avg_neuron, avg_dist,
               weighted_far, min_close):
    self.assign = assign
    self.delta = delta
    self.alive = alive
    self.mass = mass
    self.avg_neuron = avg_neuron
    self.avg_dist = avg_dist
    self.weighted_far = weighted_far
    self.min_close = min_close

  def members(self, i):
    """Indices of the nonzero neurons assigned to teacher i."""
    return np.flatnonzero((self.assign == i) & self.alive)

  def to_json_dict(self):
    return {'assign': [int(i) for i in self.assign],
            'delta': [float(x) for x in self.delta],
            'mass': [float(x) for x in self.mass],
            'avg_dist': [float(x) for x in self.avg_dist],
            'weighted_far': float(self.weighted_far),
            'min_close': [_json_float(x) for x in self.min_close]}


def partition(student, teacher):
  """Assign each neuron to its angularly nearest teacher direction.

  Ties go to the lowest teacher index. Neurons with |w_j| below the norm
  floor go to teacher 0 with delta 0 and are left out of min_close.
  """
  norms = gauss_expect.row_norms(student.W)
  alive = norms >= gauss_expect.NORM_FLOOR
  m_star = teacher.m_star
  if student.m:
    angles = unsigned_angles(student.W, teacher.W_star)
    assign = np.argmin(angles, axis=1)
    delta = angles[np.arange(student.m), assign]
  else:
    assign = np.zeros(0, dtype=int)
    delta = np.zeros(0)
  assign = np.where(alive, assign, 0)
  delta = np.where(alive, delta, 0.0)
  masses = student.a * norms
  mass = np.zeros(m_star)
  avg_neuron = np.zeros((m_star, teacher.d))
  min_close = np.full(m_star, math.nan)
  for i in range(m_star):
    mine = assign == i
    mass[i] = math.fsum(masses[mine])
    avg_neuron[i] = student.a[mine].dot(student.W[mine])
    close = delta[mine & alive]
    if len(close):
      min_close[i] = float(np.min(close))
  avg_dist = gauss_expect.row_norms(
      avg_neuron - teacher.a_star[:, None] * teacher.W_star)
  weighted_far = math.fsum(np.abs(masses) * delta ** 2)
  return PartitionReport(assign, delta, alive, mass, avg_neuron, avg_dist,
                         weighted_far, min_close)


def canonicalize_signs(student, teacher):
  """Flip neurons pointing away from their teacher, keeping f unchanged.

  relu(z) - relu(-z) = z, so replacing w_j by -w_j and adding a_j w_j to beta
  leaves the network output identical at every x.
  """
  report = partition(student, teacher)
  canonical = student.copy()
  if not student.m:
    return canonical
  dots = np.einsum('ij,ij->i', student.W, teacher.W_star[report.assign])
  flip = dots < 0
  if np.any(flip):
    canonical.beta = canonical.beta + student.a[flip].dot(student.W[flip])
    canonical.W[flip] = -student.W[flip]
    LOG.debug('Flipped %d neurons', int(np.sum(flip)))
  return canonical


def gap_surrogate(student, teacher, lam):
  """zeta_hat = L_lambda(theta) - lambda |a*|_1."""
  return objective.regularized_loss(student, teacher, lam) - lam * teacher.a_l1


def gap_report(student, teacher, lam, p_norm=None):
  """The gap surrogate with the +-lambda^2 |p|^2 band when |p| is known."""
  zeta = gap_surrogate(student, teacher, lam)
  report = {'lambda': lam, 'zeta_hat': zeta, 'lower': None, 'upper': None}
  if p_norm is not None:
    band = lam * lam * p_norm * p_norm
    report['lower'] = zeta - band
    report['upper'] = zeta + band
  return report


def in_regime(zeta, lam):
  """True when lambda^2 <= zeta <= lambda^(9/5)."""
  return lam * lam <= zeta <= lam ** 1.8


def _sign_pair_moment(u, v, a, b):
  """E[(u.x)(v.x) sign(a.x) sign(b.x)] for unit a, b."""
  c = float(np.clip(np.dot(a, b), -1.0, 1.0))
  sin = math.sqrt(max(1.0 - c * c, 0.0))
  theta = math.atan2(sin, c)
  value = float(np.dot(u, v)) * (1.0 - 2.0 * theta / math.pi)
  if sin >= 1e-12:
    value += 2.0 / (math.pi * sin) * (
        np.dot(u, a) * np.dot(v, b - c * a) + np.dot(u, b) * np.dot(v, a - c * b))
  return value


class ResidualReport(object):
  """L2 norms of R and its three parts, with the Monte Carlo cross-checks.

  Iterating yields (R, R1, R2, R3).
  """

  def __init__(self, R, R1, R2, R3, r2_sq, mc_loss, mc_parts, mc_identity):
    self.R = R
    self.R1 = R1
    self.R2 = R2
    self.R3 = R3
    self.r2_sq = r2_sq
    self.mc_loss = mc_loss
    self.mc_parts = mc_parts
    self.mc_identity = mc_identity

  def __iter__(self):
    return iter((self.R, self.R1, self.R2, self.R3))

  def to_json_dict(self):
    return {'R': self.R, 'R1': self.R1, 'R2': self.R2, 'R3': self.R3,
            'R2_sq': self.r2_sq.to_dict(),
            'mc_loss': self.mc_loss.to_dict(),
            'mc_parts': self.mc_parts.to_dict(),
            'mc_identity': self.mc_identity.to_dict()}


class _ResidualParts(object):
  """Pointwise R1, R2, R3 for a fixed partition."""

  def __init__(self, student, teacher, report):
    self.student = student
    self.teacher = teacher
    self.assign = report.assign
    self.half_gap = 0.5 * (report.avg_neuron -
                           teacher.a_star[:, None] * teacher.W_star)
    _, beta_hat = objective.head_optimum(student)
    self.head_const = student.alpha + teacher.alpha_star
    self.head_lin = student.beta - beta_hat

  def r1(self, x):
    signs = np.sign(x.dot(self.teacher.W_star.T))
    return np.sum(x.dot(self.half_gap.T) * signs, axis=1)

  def r2(self, x):
    pre = x.dot(self.student.W.T)
    own = np.sign(x.dot(self.teacher.W_star.T))[:, self.assign]
    return 0.5 * (pre * (np.sign(pre) - own)).dot(self.student.a)

  def r3(self, x):
    return self.head_const + x.dot(self.head_lin)

  def residual(self, x):
    return network.forward(self.student, self.teacher, x)[1]


def residual_norms(student, teacher, n=DEFAULT_MC_N, seed=0,
                   chunk_size=gauss_expect.DEFAULT_CHUNK_SIZE):
  """Norms of R = f - y~ and of its parts R1, R2, R3.

  R1 = sum_i u_i.x sign(w*_i.x) with u_i = (v_i - a*_i w*_i)/2,
  R2 = (1/2) sum_j a_j (w_j.x)(sign(w_j.x) - sign(w*_{i(j)}.x)),
  R3 = (alpha + alpha_*) + (beta - beta_hat).x.

  |R|, |R1| and |R3| are exact; |R2| and the cross-checks use mc_expectation.
  Canonicalize signs first for a meaningful R2.

  Returns:
    ResidualReport.
  """
  report = partition(student, teacher)
  parts = _ResidualParts(student, teacher, report)
  R = math.sqrt(objective.population_square_loss(student, teacher))
  r1_terms = []
  for i in range(teacher.m_star):
    for k in range(teacher.m_star):
      r1_terms.append(_sign_pair_moment(parts.half_gap[i], parts.half_gap[k],
                                        teacher.W_star[i], teacher.W_star[k]))
  R1 = math.sqrt(max(math.fsum(r1_terms), 0.0))
  R3 = math.sqrt(parts.head_const ** 2 +
                 float(np.dot(parts.head_lin, parts.head_lin)))
  d = teacher.d
  r2_sq = gauss_expect.mc_expectation(lambda x: parts.r2(x) ** 2, d, n, seed,
                                      chunk_size)
  mc_loss = gauss_expect.mc_expectation(lambda x: parts.residual(x) ** 2, d,
                                        n, seed, chunk_size)
  mc_parts = gauss_expect.mc_expectation(
      lambda x: (parts.r1(x) + parts.r2(x) + parts.r3(x)) ** 2, d, n, seed,
      chunk_size)
  mc_identity = gauss_expect.mc_expectation(
      lambda x: (parts.residual(x) - parts.r1(x) - parts.r2(x) -
                 parts.r3(x)) ** 2, d, n, seed, chunk_size)
  return ResidualReport(R, R1, math.sqrt(max(r2_sq.mean, 0.0)), R3, r2_sq,
                        mc_loss, mc_parts, mc_identity)


def default_radii(zeta, lam, delta_close_max=DELTA_CLOSE_MAX,
                  delta_sign_max=DELTA_SIGN_MAX, delta_sign_scale=1.0):
  """(delta_close, delta_sign) scaled like zeta^(1/3) and lambda/zeta^(1/2).

  zeta is floored at lambda^2. delta_sign is raised to at least twice
  delta_close and capped at pi/2.
  """
  zeta = max(zeta, lam * lam, ZETA_FLOOR)
  delta_close = min(delta_close_max, zeta ** (1.0 / 3.0))
  delta_sign = min(delta_sign_max, delta_sign_scale * lam / math.sqrt(zeta))
  delta_sign = min(max(delta_sign, 2.0 * delta_close), math.pi / 2.0)
  return delta_close, delta_sign


class AuditReport(object):
  """Scalars of the descent-direction audit."""

  def __init__(self, delta_close, delta_sign, balance_term, cancellation_mass,
               q, q_sq_sum, inner_product, skipped):
    self.delta_close = delta_close
    self.delta_sign = delta_sign
    self.balance_term = balance_term
    self.cancellation_mass = cancellation_mass
    self.q = q
    self.q_sq_sum = q_sq_sum
    self.inner_product = inner_product
    self.skipped = skipped

  def to_json_dict(self):
    return {'delta_close': self.delta_close,
            'delta_sign': self.delta_sign,
            'balance_term': self.balance_term,
            'cancellation_mass': [float(x) for x in self.cancellation_mass],
            'q_sq_sum': self.q_sq_sum,
            'inner_product': self.inner_product,
            'skipped': [err.teacher_index for err in self.skipped]}


def descent_audit(student, teacher, lam, delta_close=None, delta_sign=None,
                  delta_sign_scale=1.0):
  """Evaluate the balance, cancellation and feature-improvement directions.

  Signs are canonicalized first. For teacher i, T_{i,+}(r) and T_{i,-}(r)
  are the neurons of T_i within angle r whose a_j has the same, respectively
  the opposite, sign as a*_i. On T_{i,+}(delta_close)
  q_ij = a_j a*_i / sum a_j^2; elsewhere q_ij = 0. The audited inner product
  is <grad L_lambda, D> with D = (0, W - Q, alpha + alpha_*, beta + beta_*),
  where row j of Q is q_ij w*_i. Teachers with an empty T_{i,+} are
  reported in skipped and their neurons get no W component.

  Args:
    student: Student.
    teacher: Teacher.
    lam: Weight decay.
    delta_close, delta_sign: Radii; None picks default_radii() from the gap
        surrogate.
    delta_sign_scale: Scale of the default delta_sign.

  Returns:
    AuditReport.

  Raises:
    InvalidRadiusError: explicit radii do not satisfy
        0 < delta_close < delta_sign <= pi/2.
  """
  student = canonicalize_signs(student, teacher)
  if delta_close is None or delta_sign is None:
    close, sign = default_radii(gap_surrogate(student, teacher, lam), lam,
                                delta_sign_scale=delta_sign_scale)
    delta_close = close if delta_close is None else delta_close
    delta_sign = sign if delta_sign is None else delta_sign
  if not 0 < delta_close < delta_sign <= math.pi / 2.0:
    raise InvalidRadiusError(delta_close, delta_sign)
  report = partition(student, teacher)
  norms = gauss_expect.row_norms(student.W)
  balance_term = lam * math.fsum(np.abs(student.a ** 2 - norms ** 2))
  cancellation = np.zeros(teacher.m_star)
  q = np.zeros(student.m)
  target = np.zeros_like(student.W)
  use_neuron = np.zeros(student.m, dtype=bool)
  skipped = []
  for i in range(teacher.m_star):
    members = report.members(i)
    same = np.sign(student.a[members]) == np.sign(teacher.a_star[i])
    near_sign = report.delta[members] <= delta_sign
    opposite = members[near_sign & ~same]
    cancellation[i] = math.fsum(np.abs(student.a[opposite]) * norms[opposite])
    positive = members[(report.delta[members] <= delta_close) & same]
    weight = math.fsum(student.a[positive] ** 2)
    if weight <= 0.0:
      err = EmptyNeighborhoodError(i, delta_close)
      LOG.warning(str(err) + '; skipping it in the audit')
      skipped.append(err)
      continue
    q[positive] = student.a[positive] * teacher.a_star[i] / weight
    target[members] = q[members, None] * teacher.W_star[i]
    use_neuron[members] = True
  grad = objective.population_gradient(student, teacher, lam)
  direction = objective.Gradient(
      np.zeros(student.m),
      np.where(use_neuron[:, None], student.W - target, 0.0),
      student.alpha + teacher.alpha_star,
      student.beta + teacher.beta_star)
  return AuditReport(delta_close, delta_sign, balance_term, cancellation, q,
                     float(np.dot(q, q)), grad.dot(direction), skipped)


def lower_bound_ratio(grad_sq, lam, zeta):
  """grad_sq lambda^2 / max(zeta, 1e-300)^4, in log space; inf on overflow."""
  if grad_sq == 0.0 or lam == 0.0:
    return 0.0
  zeta = max(zeta, ZETA_FLOOR)
  log_ratio = math.log(grad_sq) + 2.0 * math.log(lam) - 4.0 * math.log(zeta)
  if log_ratio >= LOG_FLOAT_MAX:
    return math.inf
  return math.exp(log_ratio)


def grad_lower_bound_ratio(student, teacher, lam):
  """|grad L_lambda|_F^2 lambda^2 / max(zeta_hat, 1e-300)^4.

  Only meaningful for students with in_regime(zeta_hat, lambda).
  """
  reg, _, grad = objective.loss_and_gradient(student, teacher, lam)
  return lower_bound_ratio(grad.norm_sq(), lam, reg - lam * teacher.a_l1)
