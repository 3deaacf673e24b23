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


"""Gaussian expectations of ReLU features, closed form and Monte Carlo.

For x ~ N(0, I_d) and theta the angle between w and u,

  E[relu(w.x) relu(u.x)] = |w||u| (sin theta + (pi - theta) cos theta) / (2 pi).

Everything without a closed form goes through mc_expectation(), which draws
from a counter-based generator so that a (seed, chunk) pair always names the
same block of samples.
"""
import logging
import math

import numpy as np

from relucl import base

LOG = logging.getLogger(__name__)
SECTION_HEADER = 'MC'

NORM_FLOOR = 1e-14
UNIT_TOLERANCE = 1e-10
DEFAULT_CHUNK_SIZE = 65536
INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)
TWO_PI = 2.0 * math.pi


class Error(base.Error):
  """Base error for this module."""
  pass


class DegenerateInputError(Error, base.NumericError):
  """A gradient was requested at a vector with vanishing norm."""
  def __init__(self, norm):
    self.norm = norm

  def __str__(self):
    return ('Gradient undefined at vector of norm %g (floor %g)'
            % (self.norm, NORM_FLOOR))


class NotUnitError(Error, base.ValidationError):
  """An argument that must be a unit vector is not."""
  def __init__(self, norm):
    self.norm = norm

  def __str__(self):
    return 'Expected a unit vector, got norm %.17g' % self.norm


class MCEstimate(object):
  """Sample mean of a Monte Carlo run with its standard error."""

  def __init__(self, mean, stderr, samples):
    self.mean = mean
    self.stderr = stderr
    self.samples = samples

  def within(self, value, n_stderr=5.0, floor=0.0):
    """True if value lies within n_stderr standard errors of the mean."""
    return abs(self.mean - value) <= n_stderr * self.stderr + floor

  def to_dict(self):
    return {'mean': self.mean, 'stderr': self.stderr, 'samples': self.samples}

  def __repr__(self):
    return 'MCEstimate(mean=%r, stderr=%r, samples=%d)' % (
        self.mean, self.stderr, self.samples)


def row_norms(matrix):
  """Return the Euclidean norm of each row of a 2-D array."""
  matrix = np.asarray(matrix, dtype=float)
  return np.sqrt(np.einsum('ij,ij->i', matrix, matrix))


def unit_rows(matrix):
  """Return (norms, unit rows, alive mask); rows below NORM_FLOOR map to 0."""
  matrix = np.asarray(matrix, dtype=float)
  norms = row_norms(matrix)
  alive = norms >= NORM_FLOOR
  units = np.zeros_like(matrix)
  units[alive] = matrix[alive] / norms[alive, None]
  return norms, units, alive


def _angles(units_a, units_b):
  cos = np.clip(units_a.dot(units_b.T), -1.0, 1.0)
  theta = np.arccos(cos)
  sin = np.sqrt(np.maximum(1.0 - cos * cos, 0.0))
  return cos, theta, sin


def unit_kernel(cos):
  """Arc-cosine kernel of unit vectors as a function of their cosine."""
  cos = np.clip(cos, -1.0, 1.0)
  theta = np.arccos(cos)
  sin = np.sqrt(np.maximum(1.0 - cos * cos, 0.0))
  return (sin + (math.pi - theta) * cos) / TWO_PI


def relu_kernel_matrix(a, b):
  """Return the matrix E[relu(a_p.x) relu(b_q.x)] over rows of a and b."""
  norms_a, units_a, alive_a = unit_rows(np.atleast_2d(a))
  norms_b, units_b, alive_b = unit_rows(np.atleast_2d(b))
  cos, theta, sin = _angles(units_a, units_b)
  kernel = np.outer(norms_a, norms_b) * (sin + (math.pi - theta) * cos) / TWO_PI
  kernel[~alive_a, :] = 0.0
  kernel[:, ~alive_b] = 0.0
  return kernel


def relu_kernel_grad_sum(a, b, coef):
  """Return G with G_p = sum_q coef_q * grad_{a_p} E[relu(a_p.x) relu(b_q.x)].

  Rows of a below NORM_FLOOR get a zero row; callers decide what the
  subgradient there should be.
  """
  a = np.atleast_2d(np.asarray(a, dtype=float))
  b = np.atleast_2d(np.asarray(b, dtype=float))
  coef = np.asarray(coef, dtype=float)
  norms_a, units_a, alive_a = unit_rows(a)
  norms_b, units_b, alive_b = unit_rows(b)
  coef = np.where(alive_b, coef, 0.0)
  cos, theta, sin = _angles(units_a, units_b)
  radial = (sin / TWO_PI).dot(coef * norms_b)
  tangent = ((math.pi - theta) / TWO_PI * coef).dot(np.where(alive_b[:, None],
                                                             b, 0.0))
  grad = units_a * radial[:, None] + tangent
  grad[~alive_a] = 0.0
  return grad


def relu_pair_kernel(w, u):
  """E[relu(w.x) relu(u.x)]; zero if either norm is below NORM_FLOOR."""
  return float(relu_kernel_matrix(w, u)[0, 0])


def relu_pair_kernel_grad(w, u):
  """Gradient in w of E[relu(w.x) relu(u.x)].

  Equals (|u| sin theta / (2 pi)) w_bar + ((pi - theta) / (2 pi)) u.

  Raises:
    DegenerateInputError: |w| < NORM_FLOOR.
  """
  w = np.asarray(w, dtype=float)
  norm = float(np.linalg.norm(w))
  if norm < NORM_FLOOR:
    raise DegenerateInputError(norm)
  return relu_kernel_grad_sum(w, u, [1.0])[0]


def relu_low_order_moments(w):
  """Return (E[relu(w.x)], E[relu(w.x) x]) = (|w|/sqrt(2 pi), w/2)."""
  w = np.asarray(w, dtype=float)
  return float(np.linalg.norm(w)) * INV_SQRT_2PI, 0.5 * w


def check_unit(v):
  norm = float(np.linalg.norm(v))
  if abs(norm - 1.0) > UNIT_TOLERANCE:
    raise NotUnitError(norm)


def sigma_ge2_gram(a, b):
  """Matrix of E[s(a_p.x) s(b_q.x)] with s the ReLU minus its degree <= 1 part.

  Rows need not be unit; the result scales with both norms.
  """
  norms_a, units_a, _ = unit_rows(np.atleast_2d(a))
  norms_b, units_b, _ = unit_rows(np.atleast_2d(b))
  cos = np.clip(units_a.dot(units_b.T), -1.0, 1.0)
  low = 1.0 / TWO_PI + 0.25 * cos
  return np.outer(norms_a, norms_b) * (unit_kernel(cos) - low)


def sigma_ge2_kernel(wbar, ubar):
  """E[s(wbar.x) s(ubar.x)] for unit inputs, s(z) = relu(z) - 1/sqrt(2 pi) - z/2.

  Raises:
    NotUnitError: an argument is not unit within UNIT_TOLERANCE.
  """
  wbar = np.asarray(wbar, dtype=float)
  ubar = np.asarray(ubar, dtype=float)
  check_unit(wbar)
  check_unit(ubar)
  cos = float(np.clip(np.dot(wbar, ubar), -1.0, 1.0))
  return float(unit_kernel(cos)) - 1.0 / TWO_PI - 0.25 * cos


def sigma_ge2_series(cos, table, k_max=None):
  """Truncated series sum_{2 <= k <= k_max} sigma_hat_k^2 cos^k."""
  if k_max is None:
    k_max = table.k_max
  k = np.arange(2, k_max + 1)
  weights = table.coeffs[2:k_max + 1] ** 2
  cos = np.asarray(cos, dtype=float)
  return np.sum(weights * np.power.outer(cos, k), axis=-1)


def counter_generator(seed, stream=0):
  """Return a Generator for block <stream> of a counter-based seed.

  Philox is counter based; jumped(stream) advances the counter by
  stream * 2**128 draws, so blocks never overlap and each block can be
  produced independently of the others.
  """
  bit_generator = np.random.Philox(key=int(seed))
  if stream:
    bit_generator = bit_generator.jumped(int(stream))
  return np.random.Generator(bit_generator)


def mc_expectation(f, d, n, seed, chunk_size=DEFAULT_CHUNK_SIZE):
  """Monte Carlo estimate of E[f(x)] for x ~ N(0, I_d).

  Samples are drawn in chunks; chunk c always comes from
  counter_generator(seed, c), and chunk statistics are merged in chunk order,
  so the result depends only on (f, d, n, seed, chunk_size).

  Args:
    f: Function taking an array of shape (batch, d) and returning (batch,)
        or a scalar.
    d: Input dimension.
    n: Number of samples, >= 2.
    seed: Integer seed.
    chunk_size: Samples per chunk.

  Returns:
    MCEstimate.
  """
  if n < 2:
    raise ValueError('Monte Carlo needs at least 2 samples, got %s' % n)
  count = 0
  mean = 0.0
  m2 = 0.0
  chunk = 0
  while count < n:
    size = min(chunk_size, n - count)
    x = counter_generator(seed, chunk).standard_normal((size, d))
    values = np.asarray(f(x), dtype=float)
    if values.size == size:
      values = values.reshape(size)
    else:
      values = np.broadcast_to(values, (size,))
    chunk_mean = float(np.mean(values))
    chunk_m2 = float(np.sum((values - chunk_mean) ** 2))
    total = count + size
    delta = chunk_mean - mean
    mean += delta * size / total
    m2 += chunk_m2 + delta * delta * count * size / total
    count = total
    chunk += 1
  stderr = math.sqrt(max(m2, 0.0) / (n - 1) / n)
  LOG.debug('MC estimate over %d samples in %d chunks: %r +- %r',
            n, chunk, mean, stderr)
  return MCEstimate(mean, stderr, n)
