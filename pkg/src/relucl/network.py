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


"""Teacher and student networks, teacher sampling and symmetric initialization.

The teacher is f_*(x) = sum_i a*_i relu(w*_i . x) with unit w*_i spanning an
r-dimensional subspace. Labels are preprocessed to
y~ = f_*(x) - alpha_* - beta_* . x, which removes the degree 0 and 1 Hermite
parts of f_*. The student is f(x) = sum_j a_j relu(w_j . x) + alpha + beta . x.
"""
import logging
import math

import numpy as np
import scipy.linalg

from relucl import base
from relucl import gauss_expect

LOG = logging.getLogger(__name__)

MAX_ATTEMPTS = 100000
RANK_TOLERANCE = 1e-10
UNIT_TOLERANCE = 1e-12
TEACHER_STREAM = 1
STUDENT_STREAM = 2


class Error(base.Error):
  """Base error for this module."""
  pass


class InvalidTeacherSpecError(Error, base.ValidationError):
  """Teacher sampling arguments are inconsistent."""
  def __init__(self, field, message):
    self.field = field
    self.message = message

  def __str__(self):
    return '%s: %s' % (self.field, self.message)


class RejectionBudgetExhaustedError(Error, base.NumericError):
  """No draw satisfied the separation and rank conditions."""
  def __init__(self, attempts, best_separation):
    self.attempts = attempts
    self.best_separation = best_separation

  def __str__(self):
    return ('Rejection budget exhausted after %d attempts (best separation '
            'seen %.4f rad); teacher geometry is infeasible'
            % (self.attempts, self.best_separation))


class OddWidthError(Error, base.ValidationError):
  """Symmetric initialization needs an even, positive width."""
  def __init__(self, m):
    self.m = m

  def __str__(self):
    return 'Student width must be even and >= 2, got %s' % (self.m,)


class MalformedNetworkError(Error, base.ValidationError):
  """A serialized network has missing fields or inconsistent shapes."""
  def __init__(self, reason):
    self.reason = reason

  def __str__(self):
    return 'Malformed network document: ' + self.reason


def _as_list(array):
  return np.asarray(array, dtype=float).tolist()


def _require(doc, key):
  if key not in doc:
    raise MalformedNetworkError('missing field "%s"' % key)
  return doc[key]


def _matrix(rows, width, name):
  matrix = np.array(rows, dtype=float).reshape(len(rows), width)
  if not np.all(np.isfinite(matrix)):
    raise MalformedNetworkError(name + ' has non-finite entries')
  return matrix


class Teacher(object):
  """Ground-truth network with its preprocessing constants."""

  def __init__(self, a_star, W_star, subspace_basis, delta_sep, kappa):
    self.a_star = np.asarray(a_star, dtype=float)
    self.W_star = np.atleast_2d(np.asarray(W_star, dtype=float))
    self.subspace_basis = np.asarray(subspace_basis, dtype=float)
    self.delta_sep = float(delta_sep)
    self.kappa = float(kappa)
    self.alpha_star = float(np.sum(self.a_star)) * gauss_expect.INV_SQRT_2PI
    self.beta_star = 0.5 * self.a_star.dot(self.W_star)

  @property
  def m_star(self):
    return len(self.a_star)

  @property
  def d(self):
    return self.W_star.shape[1]

  @property
  def r(self):
    return self.subspace_basis.shape[1]

  @property
  def a_l1(self):
    return float(np.sum(np.abs(self.a_star)))

  def value(self, x):
    """f_*(x) for x of shape (d,) or (n, d)."""
    return np.maximum(np.asarray(x).dot(self.W_star.T), 0.0).dot(self.a_star)

  def target(self, x):
    """Preprocessed label y~(x) = f_*(x) - alpha_* - beta_* . x."""
    x = np.asarray(x, dtype=float)
    return self.value(x) - self.alpha_star - x.dot(self.beta_star)

  def to_json_dict(self):
    return {'a': _as_list(self.a_star),
            'W': _as_list(self.W_star),
            'alpha': self.alpha_star,
            'beta': _as_list(self.beta_star),
            'subspace_basis': _as_list(self.subspace_basis),
            'delta_sep': self.delta_sep,
            'kappa': self.kappa}

  @classmethod
  def from_json_dict(cls, doc):
    a_star = np.array(_require(doc, 'a'), dtype=float).reshape(-1)
    rows = _require(doc, 'W')
    if not len(rows) or len(rows) != len(a_star):
      raise MalformedNetworkError('W must have one row per entry of a')
    d = len(rows[0])
    W_star = _matrix(rows, d, 'W')
    basis = np.array(doc.get('subspace_basis') or
                     scipy.linalg.orth(W_star.T), dtype=float).reshape(d, -1)
    norms = gauss_expect.row_norms(W_star)
    if np.any(np.abs(norms - 1.0) > 1e-9):
      raise MalformedNetworkError('teacher rows of W must be unit vectors')
    teacher = cls(a_star, W_star, basis,
                  doc.get('delta_sep', pairwise_separation(W_star)),
                  doc.get('kappa', subspace_kappa(a_star, W_star, basis)))
    return teacher

  def __repr__(self):
    return ('Teacher(d=%d, r=%d, m_star=%d, delta_sep=%.4f, kappa=%.4f)'
            % (self.d, self.r, self.m_star, self.delta_sep, self.kappa))


class Student(object):
  """Trainable network (a, W, alpha, beta)."""

  def __init__(self, a, W, alpha, beta):
    self.a = np.array(a, dtype=float).reshape(-1)
    self.beta = np.array(beta, dtype=float).reshape(-1)
    self.W = np.array(W, dtype=float).reshape(len(self.a), len(self.beta))
    self.alpha = float(alpha)

  @property
  def m(self):
    return len(self.a)

  @property
  def d(self):
    return len(self.beta)

  def copy(self):
    return Student(self.a, self.W, self.alpha, self.beta)

  def norm_sq(self):
    """|a|^2 + |W|_F^2."""
    return float(np.dot(self.a, self.a) + np.sum(self.W * self.W))

  def masses(self):
    """Per-neuron a_j |w_j|."""
    return self.a * gauss_expect.row_norms(self.W)

  def value(self, x):
    x = np.asarray(x, dtype=float)
    return (np.maximum(x.dot(self.W.T), 0.0).dot(self.a) + self.alpha +
            x.dot(self.beta))

  def is_finite(self):
    return bool(np.all(np.isfinite(self.a)) and np.all(np.isfinite(self.W)) and
                math.isfinite(self.alpha) and np.all(np.isfinite(self.beta)))

  def to_json_dict(self):
    return {'a': _as_list(self.a),
            'W': _as_list(self.W),
            'alpha': self.alpha,
            'beta': _as_list(self.beta)}

  @classmethod
  def from_json_dict(cls, doc):
    beta = np.array(_require(doc, 'beta'), dtype=float).reshape(-1)
    a = np.array(_require(doc, 'a'), dtype=float).reshape(-1)
    rows = _require(doc, 'W')
    if len(rows) != len(a):
      raise MalformedNetworkError('W must have one row per entry of a')
    W = _matrix(rows, len(beta), 'W')
    return cls(a, W, float(_require(doc, 'alpha')), beta)

  def __repr__(self):
    return 'Student(m=%d, d=%d)' % (self.m, self.d)


def unsigned_angle_matrix(a, b):
  """Angles arccos(|a_p . b_q| / |a_p||b_q|) in [0, pi/2]."""
  _, units_a, _ = gauss_expect.unit_rows(a)
  _, units_b, _ = gauss_expect.unit_rows(b)
  return np.arccos(np.clip(np.abs(units_a.dot(units_b.T)), 0.0, 1.0))


def pairwise_separation(W_star):
  """Minimum unsigned angle between distinct rows; pi/2 for a single row."""
  if len(W_star) < 2:
    return math.pi / 2.0
  angles = unsigned_angle_matrix(W_star, W_star)
  upper = np.triu_indices(len(W_star), k=1)
  return float(np.min(angles[upper]))


def subspace_kappa(a_star, W_star, basis):
  """Smallest eigenvalue magnitude of H = sum a*_i w*_i w*_i^T on the subspace."""
  coords = np.asarray(W_star).dot(basis)
  h_reduced = coords.T.dot(np.asarray(a_star)[:, None] * coords)
  return float(np.min(np.abs(scipy.linalg.eigvalsh(h_reduced))))


def _check_teacher_spec(d, r, m_star, delta_min, a_magnitudes):
  for name, value in (('d', d), ('r', r), ('m_star', m_star)):
    if int(value) != value or value < 1:
      raise InvalidTeacherSpecError(name, 'must be a positive integer')
  if r > d:
    raise InvalidTeacherSpecError('r', 'must not exceed d')
  if r > m_star:
    raise InvalidTeacherSpecError('r', 'must not exceed m_star')
  if not 0.0 < delta_min < math.pi / 2.0:
    raise InvalidTeacherSpecError('delta_min', 'must lie in (0, pi/2)')
  if len(a_magnitudes) != m_star:
    raise InvalidTeacherSpecError('a_magnitudes',
                                  'needs exactly m_star entries')
  if any(a == 0.0 or not math.isfinite(a) for a in a_magnitudes):
    raise InvalidTeacherSpecError('a_magnitudes',
                                  'entries must be finite and nonzero')


def haar_basis(rng, d, r):
  """Orthonormal d x r basis of a Haar-uniform r-dimensional subspace."""
  q, upper = scipy.linalg.qr(rng.standard_normal((d, r)), mode='economic')
  return q * np.sign(np.diag(upper))


def sample_teacher(d, r, m_star, delta_min, a_magnitudes, seed,
                   kappa_floor=None, max_attempts=MAX_ATTEMPTS):
  """Sample a separated, non-degenerate teacher.

  The subspace is Haar-uniform. Directions are uniform on its unit sphere and
  redrawn as a set until every pair is at least delta_min apart (unsigned
  angle) and H restricted to the subspace has all |eigenvalues| >= kappa_floor.

  Args:
    d: Ambient dimension.
    r: Subspace dimension, r <= m_star.
    m_star: Number of teacher neurons.
    delta_min: Minimum separation in (0, pi/2).
    a_magnitudes: Second-layer weights, signs included.
    seed: Integer seed.
    kappa_floor: Minimum |eigenvalue| of H. Default 0.1 * min |a_i*|.
    max_attempts: Rejection budget.

  Returns:
    Teacher.

  Raises:
    InvalidTeacherSpecError: arguments are inconsistent.
    RejectionBudgetExhaustedError: no draw within max_attempts was accepted.
  """
  a_magnitudes = [float(a) for a in a_magnitudes]
  _check_teacher_spec(d, r, m_star, delta_min, a_magnitudes)
  a_star = np.array(a_magnitudes)
  if kappa_floor is None:
    kappa_floor = 0.1 * float(np.min(np.abs(a_star)))
  kappa_floor = max(kappa_floor, RANK_TOLERANCE)
  rng = gauss_expect.counter_generator(seed, TEACHER_STREAM)
  basis = haar_basis(rng, d, r)
  # Separation is a cosine test: |cos| <= cos(delta_min).
  cos_limit = math.cos(delta_min)
  upper = np.triu_indices(m_star, k=1)
  best_separation = 0.0
  for attempt in range(1, max_attempts + 1):
    coords = rng.standard_normal((m_star, r))
    coords /= gauss_expect.row_norms(coords)[:, None]
    if m_star > 1:
      max_cos = float(np.max(np.abs(coords.dot(coords.T))[upper]))
      if max_cos > cos_limit:
        best_separation = max(best_separation,
                              math.acos(min(max_cos, 1.0)))
        continue
    h_reduced = coords.T.dot(a_star[:, None] * coords)
    kappa = float(np.min(np.abs(scipy.linalg.eigvalsh(h_reduced))))
    if kappa < kappa_floor:
      continue
    W_star = coords.dot(basis.T)
    W_star /= gauss_expect.row_norms(W_star)[:, None]
    teacher = Teacher(a_star, W_star, basis, pairwise_separation(W_star),
                      kappa)
    LOG.debug('Accepted teacher after ' + str(attempt) + ' attempts: ' +
              repr(teacher))
    return teacher
  raise RejectionBudgetExhaustedError(max_attempts, best_separation)


def init_student(m, d, seed):
  """Symmetric initialization.

  a_j ~ Unif{+-sqrt(d)}, w_j ~ Unif(sphere of radius 1/sqrt(m)) for the first
  half, drawn independently; the second half mirrors it with
  a_{j+m/2} = -a_j and w_{j+m/2} = w_j. alpha = 0 and beta = 0, so the
  network output is identically zero.

  Raises:
    OddWidthError: m is odd or below 2.
  """
  if int(m) != m or m < 2 or m % 2:
    raise OddWidthError(m)
  m = int(m)
  half = m // 2
  rng = gauss_expect.counter_generator(seed, STUDENT_STREAM)
  signs = 2.0 * rng.integers(0, 2, size=half) - 1.0
  directions = rng.standard_normal((half, d))
  directions /= gauss_expect.row_norms(directions)[:, None]
  a_half = signs * math.sqrt(d)
  W_half = directions / math.sqrt(m)
  return Student(np.concatenate([a_half, -a_half]),
                 np.vstack([W_half, W_half]), 0.0, np.zeros(d))


def empty_student(d):
  """Student with no neurons and a zero head."""
  return Student(np.zeros(0), np.zeros((0, d)), 0.0, np.zeros(d))


def zero_residual_student(teacher):
  """The student whose output equals the preprocessed label exactly.

  Preprocessing moves the constant and linear parts of f_* to the label side,
  so the matching head is (alpha, beta) = (-alpha_*, -beta_*).
  """
  return Student(teacher.a_star, teacher.W_star, -teacher.alpha_star,
                 -teacher.beta_star)


def forward(student, teacher, x):
  """Return (f(x), f(x) - y~(x)) for x of shape (d,) or (n, d)."""
  f = student.value(x)
  residual = f - teacher.target(x)
  if np.ndim(x) == 1:
    return float(f), float(residual)
  return f, residual


def teacher_with_directions(a_star, W_star):
  """Build a Teacher from explicit weights, deriving basis, Delta and kappa."""
  W_star = np.atleast_2d(np.asarray(W_star, dtype=float))
  W_star = W_star / gauss_expect.row_norms(W_star)[:, None]
  basis = scipy.linalg.orth(W_star.T)
  return Teacher(a_star, W_star, basis, pairwise_separation(W_star),
                 subspace_kappa(a_star, W_star, basis))
