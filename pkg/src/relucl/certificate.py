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


"""Dual certificate for the sparse teacher measure.

The kernel is the high-order part of the activation's Hermite series,
K(w, u) = (1/Z^2) sum_{ell <= k <= k_max} sigma_hat_k^2 cos^k, with
Z^2 = sum_{ell <= k <= k_max} sigma_hat_k^2. The certificate

  eta(w) = sum_j alpha1_j K(w*_j, w) + sum_j alpha2_j . grad_1 K(w*_j, w)

interpolates sign(a*_j) with zero tangential gradient at every teacher
direction. verify_nondegeneracy() scans eta for the quadratic decay
|eta(w)| <= 1 - rho delta(w)^2.

The module also holds the test-function statistic used to detect a teacher
direction that no student neuron covers.
"""
import logging
import math

import numpy as np
import scipy.linalg

from relucl import base
from relucl import gauss_expect
from relucl import geometry
from relucl import hermite

LOG = logging.getLogger(__name__)
SECTION_HEADER = 'CERTIFICATE'

ELL_CONST = 8.0
K_MAX_FACTOR = 20
PINV_CUTOFF = 1e-10
CONDITION_FLOOR = 1e-8
MIN_GRID_N = 90
MIN_DELTA = 1e-3
DEFAULT_GRID_N = 720
DEFAULT_AMBIENT_SAMPLES = 1000
SUBSPACE_STREAM = 0
AMBIENT_STREAM = 1
# Upper bound on entries of one power block in series evaluation.
_BLOCK_ENTRIES = 1 << 21


class Error(base.Error):
  """Base error for this module."""
  pass


class EllTooSmallError(Error, base.ValidationError):
  def __init__(self, ell):
    self.ell = ell

  def __str__(self):
    return 'ell must be an integer >= 2, got %s' % (self.ell,)


class EllAboveKmaxError(Error, base.ValidationError):
  def __init__(self, ell, k_max):
    self.ell = ell
    self.k_max = k_max

  def __str__(self):
    return 'ell=%s exceeds k_max=%s' % (self.ell, self.k_max)


class GridTooSmallError(Error, base.ValidationError):
  def __init__(self, grid_n):
    self.grid_n = grid_n

  def __str__(self):
    return 'grid_n must be at least %d, got %s' % (MIN_GRID_N, self.grid_n)


class IllConditionedError(Error, base.NumericError):
  """Interpolation system too close to singular."""
  def __init__(self, smallest, largest):
    self.smallest = smallest
    self.largest = largest

  def __str__(self):
    return ('Interpolation system is ill-conditioned: sigma_min=%.3e, '
            'sigma_max=%.3e' % (self.smallest, self.largest))


class CertificateDegenerateError(Error, base.NumericError):
  """eta fails the quadratic decay somewhere on the verification grid."""
  def __init__(self, rho_fit, worst):
    self.rho_fit = rho_fit
    self.worst = worst

  def __str__(self):
    return ('Certificate is degenerate: rho_fit=%.6g at eta=%.6g, delta=%.6g'
            % (self.rho_fit, self.worst['eta'], self.worst['delta']))


class KernelSeries(object):
  """Truncated series sum_k s_k c^k, s_k = sigma_hat_k^2, and derivatives.

  Only the nonzero coefficients with ell <= k <= k_max are kept. The j-th
  derivative in c is sum_k s_k k(k-1)..(k-j+1) c^(k-j).
  """

  def __init__(self, ell, k_max, table):
    k = np.arange(ell, k_max + 1)
    weights = table.coeffs[ell:k_max + 1] ** 2
    keep = weights > 0.0
    self.ell = ell
    self.k_max = k_max
    self.k = k[keep]
    self.weights = weights[keep]
    self.z2 = math.fsum(self.weights)
    self._coef = []
    self._exps = []
    falling = np.ones(len(self.k))
    for j in range(4):
      self._coef.append(self.weights * falling)
      self._exps.append(np.maximum(self.k - j, 0))
      falling = falling * (self.k - j)

  def at(self, c, j=0):
    """Scalar j-th derivative at c, summed exactly."""
    return math.fsum(self._coef[j] * np.power(float(c), self._exps[j]))

  def values(self, cos, j=0):
    """j-th derivative at every entry of an array of cosines."""
    cos = np.asarray(cos, dtype=float)
    flat = cos.reshape(-1)
    out = np.empty(len(flat))
    step = max(1, _BLOCK_ENTRIES // max(1, len(self.k)))
    for start in range(0, len(flat), step):
      block = flat[start:start + step]
      out[start:start + step] = np.power.outer(block, self._exps[j]).dot(
          self._coef[j])
    return out.reshape(cos.shape)


_SERIES_CACHE = {}


def _check_orders(ell, k_max):
  if int(ell) != ell or ell < 2:
    raise EllTooSmallError(ell)
  if k_max < ell:
    raise EllAboveKmaxError(ell, k_max)


def get_series(ell, k_max=None, table=None):
  """Return the (cached) KernelSeries for ell <= k <= k_max.

  Raises:
    EllTooSmallError: ell < 2.
    EllAboveKmaxError: ell > k_max.
  """
  if k_max is None:
    k_max = K_MAX_FACTOR * ell
  _check_orders(ell, k_max)
  ell = int(ell)
  k_max = int(k_max)
  if table is None:
    table = hermite.get_table('relu', max(hermite.DEFAULT_K_MAX, k_max))
  elif table.k_max < k_max:
    LOG.debug('Table for %s stops at %d, extending to %d',
              table.activation_tag, table.k_max, k_max)
    table = hermite.get_table(table.activation_tag, k_max)
  key = (table.activation_tag, ell, k_max)
  if key not in _SERIES_CACHE:
    _SERIES_CACHE[key] = KernelSeries(ell, k_max, table)
  return _SERIES_CACHE[key]


class KernelDerivatives(object):
  """K and its derivatives at one pair (wbar, ubar).

  K10 is the tangential gradient in the first argument, K11 the matrix
  M with v.M.t the mixed second derivative for tangents v at wbar and t at
  ubar, K20 the second derivative along the geodesic from wbar with unit
  tangent v, K21_bound a bound on the third-order terms.
  """

  def __init__(self, K, K10, K11, K20, K21_bound):
    self.K = K
    self.K10 = K10
    self.K11 = K11
    self.K20 = K20
    self.K21_bound = K21_bound

  def __iter__(self):
    return iter((self.K, self.K10, self.K11, self.K20, self.K21_bound))


def kernel_and_derivatives(wbar, ubar, ell, table=None, k_max=None):
  """Evaluate the truncated kernel K(wbar, ubar) and its derivatives.

  Args:
    wbar: Unit d-vector.
    ubar: Unit d-vector.
    ell: Lowest Hermite order kept, >= 2.
    table: HermiteTable. Default None for the relu table.
    k_max: Highest order kept. Default None for K_MAX_FACTOR * ell.

  Returns:
    KernelDerivatives, which unpacks as (K, K10, K11, K20, K21_bound).

  Raises:
    NotUnitError: an input is not a unit vector.
    EllTooSmallError, EllAboveKmaxError: bad orders.
  """
  wbar = np.asarray(wbar, dtype=float)
  ubar = np.asarray(ubar, dtype=float)
  gauss_expect.check_unit(wbar)
  gauss_expect.check_unit(ubar)
  series = get_series(ell, k_max, table)
  z2 = series.z2
  c = float(np.clip(np.dot(wbar, ubar), -1.0, 1.0))
  s0, s1, s2 = series.at(c, 0), series.at(c, 1), series.at(c, 2)
  eye = np.eye(len(wbar))
  proj_w = eye - np.outer(wbar, wbar)
  proj_u = eye - np.outer(ubar, ubar)
  tangent_u = proj_w.dot(ubar)
  k10 = s1 / z2 * tangent_u
  k11 = (s2 * np.outer(tangent_u, proj_u.dot(wbar)) +
         s1 * proj_w.dot(proj_u)) / z2

  def k20(v):
    v = proj_w.dot(np.asarray(v, dtype=float))
    return (s2 * np.dot(v, ubar) ** 2 - s1 * c * np.dot(v, v)) / z2

  # All coefficients are nonnegative, so evaluating at |c| bounds the sums.
  abs_c = abs(c)
  k21_bound = (series.at(abs_c, 3) + 3.0 * series.at(abs_c, 2) +
               series.at(abs_c, 1)) / z2
  return KernelDerivatives(s0 / z2, k10, k11, k20, k21_bound)


def default_ell(teacher, ell_const=ELL_CONST):
  """ceil(ell_const Delta^-2 ln(8 m*/Delta)), rounded up to even."""
  delta = teacher.delta_sep
  ell = int(math.ceil(ell_const / delta ** 2 *
                      math.log(8.0 * teacher.m_star / delta)))
  return max(ell + ell % 2, 2)


def tangent_basis(y):
  """Orthonormal basis (columns) of the complement of the unit vector y."""
  q, _ = scipy.linalg.qr(np.asarray(y, dtype=float).reshape(-1, 1))
  return q[:, 1:]


class Certificate(object):
  """Solved certificate coefficients. alpha2 rows live in R^d."""

  def __init__(self, alpha1, alpha2, series, p_norm_est, singular_values):
    self.alpha1 = np.array(alpha1, dtype=float)
    self.alpha2 = np.array(alpha2, dtype=float)
    self.alpha1.setflags(write=False)
    self.alpha2.setflags(write=False)
    self.series = series
    self.p_norm_est = float(p_norm_est)
    self.singular_values = singular_values
    self.rho_fit = None

  @property
  def ell(self):
    return self.series.ell

  @property
  def k_max(self):
    return self.series.k_max

  @property
  def Z2(self):
    return self.series.z2

  def to_json_dict(self):
    return {'alpha1': self.alpha1.tolist(),
            'alpha2': self.alpha2.tolist(),
            'ell': self.ell,
            'k_max': self.k_max,
            'Z2': self.Z2,
            'p_norm_est': self.p_norm_est,
            'rho_fit': self.rho_fit}

  def __repr__(self):
    return 'Certificate(m_star=%d, ell=%d, k_max=%d)' % (
        len(self.alpha1), self.ell, self.k_max)


def _interpolation_system(series, Y, tangents):
  """Normalized system matrix for unknowns (alpha1, beta_1, .., beta_m).

  Y holds unit teacher directions as rows, tangents[j] the tangent basis
  at Y[j]; the gradient coefficient of teacher j is tangents[j] beta_j.
  """
  m = len(Y)
  t = tangents[0].shape[1]
  cos = np.clip(Y.dot(Y.T), -1.0, 1.0)
  s0 = series.values(cos, 0) / series.z2
  s1 = series.values(cos, 1) / series.z2
  s2 = series.values(cos, 2) / series.z2
  size = m * (1 + t)
  system = np.zeros((size, size))
  system[:m, :m] = s0
  for i in range(m):
    rows = slice(m + i * t, m + (i + 1) * t)
    for j in range(m):
      cols = slice(m + j * t, m + (j + 1) * t)
      yi_tj = tangents[j].T.dot(Y[i])
      ti_yj = tangents[i].T.dot(Y[j])
      system[i, cols] = s1[i, j] * yi_tj
      system[rows, j] = s1[i, j] * ti_yj
      system[rows, cols] = (s2[i, j] * np.outer(ti_yj, yi_tj) +
                            s1[i, j] * tangents[i].T.dot(tangents[j]))
  return system


def assemble_certificate(teacher, ell=None, k_max=None, table=None,
                         reduced=True, ell_const=ELL_CONST,
                         k_max_factor=K_MAX_FACTOR):
  """Solve for eta(w*_i) = sign(a*_i) and zero tangential gradient there.

  Args:
    teacher: Teacher.
    ell: Lowest Hermite order. Default None for default_ell(teacher); odd
        values are rounded up.
    k_max: Highest order. Default None for k_max_factor * ell.
    table: HermiteTable. Default None for the relu table.
    reduced: Solve in the coordinates of the teacher subspace. The full
        solve in R^d gives the same certificate at higher cost.
    ell_const: Constant of default_ell().
    k_max_factor: Ratio k_max / ell when k_max is not given.

  Returns:
    Certificate.

  Raises:
    IllConditionedError: sigma_min < CONDITION_FLOOR * sigma_max.
  """
  if ell is None:
    ell = default_ell(teacher, ell_const)
  elif ell % 2:
    LOG.debug('Rounding ell=%d up to the next even order', ell)
    ell += 1
  if k_max is None:
    k_max = int(k_max_factor * ell)
  series = get_series(ell, k_max, table)
  if reduced:
    basis = teacher.subspace_basis
    Y = teacher.W_star.dot(basis)
    Y /= gauss_expect.row_norms(Y)[:, np.newaxis]
  else:
    basis = None
    Y = teacher.W_star
  tangents = [tangent_basis(y) for y in Y]
  system = _interpolation_system(series, Y, tangents)
  m = teacher.m_star
  rhs = np.zeros(len(system))
  rhs[:m] = np.sign(teacher.a_star)
  left, sing, right_t = scipy.linalg.svd(system)
  if sing[-1] < CONDITION_FLOOR * sing[0]:
    raise IllConditionedError(sing[-1], sing[0])
  keep = sing > PINV_CUTOFF * sing[0]
  solution = right_t[keep].T.dot(left[:, keep].T.dot(rhs) / sing[keep])
  LOG.debug('Certificate system of size %d, condition %.3e',
            len(system), sing[0] / sing[-1])
  t = tangents[0].shape[1]
  alpha2 = np.array([tangents[j].dot(solution[m + j * t:m + (j + 1) * t])
                     for j in range(m)]).reshape(m, -1)
  if basis is not None:
    alpha2 = alpha2.dot(basis.T)
  p_norm_sq = max(float(solution.dot(system.dot(solution))), 0.0) / series.z2
  return Certificate(solution[:m], alpha2, series, math.sqrt(p_norm_sq), sing)


def eta_values(cert, teacher, points):
  """eta at each row of points (unit vectors)."""
  points = np.atleast_2d(np.asarray(points, dtype=float))
  series = cert.series
  cos = np.clip(points.dot(teacher.W_star.T), -1.0, 1.0)
  along = points.dot(cert.alpha2.T)
  return (series.values(cos, 0).dot(cert.alpha1) +
          np.sum(series.values(cos, 1) * along, axis=1)) / series.z2


def eval_eta(cert, teacher, w):
  """eta(w) for a unit d-vector w."""
  w = np.asarray(w, dtype=float)
  gauss_expect.check_unit(w)
  return float(eta_values(cert, teacher, w)[0])


def eta_gradient(cert, teacher, w):
  """Tangential gradient of eta at the unit vector w."""
  w = np.asarray(w, dtype=float)
  gauss_expect.check_unit(w)
  series = cert.series
  cos = np.clip(teacher.W_star.dot(w), -1.0, 1.0)
  s1 = series.values(cos, 1)
  s2 = series.values(cos, 2)
  along = cert.alpha2.dot(w)
  grad = ((cert.alpha1 * s1 + s2 * along).dot(teacher.W_star) +
          s1.dot(cert.alpha2)) / series.z2
  return grad - np.dot(grad, w) * w


def interpolation_error(cert, teacher):
  """max_i |eta(w*_i) - sign(a*_i)|."""
  values = eta_values(cert, teacher, teacher.W_star)
  return float(np.max(np.abs(values - np.sign(teacher.a_star))))


def gradient_error(cert, teacher):
  """max_i |tangential grad eta(w*_i)|."""
  return max(float(np.linalg.norm(eta_gradient(cert, teacher, w)))
             for w in teacher.W_star)


def subspace_grid(basis, grid_n, seed=0):
  """Unit directions spread over the span of basis (d x r).

  r = 1 gives the two poles, r = 2 a circle of grid_n points, r = 3 a
  Fibonacci sphere; larger r falls back to grid_n random directions.
  """
  r = basis.shape[1]
  if r == 1:
    coords = np.array([[1.0], [-1.0]])
  elif r == 2:
    angle = 2.0 * math.pi * np.arange(grid_n) / grid_n
    coords = np.column_stack([np.cos(angle), np.sin(angle)])
  elif r == 3:
    index = np.arange(grid_n)
    z = 1.0 - 2.0 * (index + 0.5) / grid_n
    phi = math.pi * (3.0 - math.sqrt(5.0)) * index
    ring = np.sqrt(1.0 - z * z)
    coords = np.column_stack([ring * np.cos(phi), ring * np.sin(phi), z])
  else:
    rng = gauss_expect.counter_generator(seed, SUBSPACE_STREAM)
    coords = rng.standard_normal((grid_n, r))
    coords /= gauss_expect.row_norms(coords)[:, np.newaxis]
  return coords.dot(basis.T)


def ambient_directions(d, n, seed=0):
  """n uniform unit directions in R^d."""
  rng = gauss_expect.counter_generator(seed, AMBIENT_STREAM)
  points = rng.standard_normal((n, d))
  return points / gauss_expect.row_norms(points)[:, np.newaxis]


def verify_nondegeneracy(cert, teacher, grid_n=DEFAULT_GRID_N,
                         ambient_samples=DEFAULT_AMBIENT_SAMPLES, seed=0):
  """Fit rho in |eta(w)| <= 1 - rho delta(w)^2 over a verification grid.

  Points within MIN_DELTA of a teacher direction are skipped. Sets
  cert.rho_fit.

  Returns:
    Tuple (rho_fit, worst) with worst a dict of w, margin, eta, delta and
    eta_max (the largest |eta| over all points).

  Raises:
    GridTooSmallError: grid_n < MIN_GRID_N.
    CertificateDegenerateError: rho_fit <= 0.
  """
  if grid_n < MIN_GRID_N:
    raise GridTooSmallError(grid_n)
  points = subspace_grid(teacher.subspace_basis, grid_n, seed)
  if ambient_samples:
    points = np.vstack([points,
                        ambient_directions(teacher.d, ambient_samples, seed)])
  eta = eta_values(cert, teacher, points)
  delta = np.min(geometry.unsigned_angles(points, teacher.W_star), axis=1)
  eta_max = float(np.max(np.abs(eta)))
  usable = np.flatnonzero(delta > MIN_DELTA)
  if not len(usable):
    LOG.warning('No verification point farther than %g from the teacher',
                MIN_DELTA)
    cert.rho_fit = math.inf
    return cert.rho_fit, {'w': None, 'margin': None, 'eta': None,
                          'delta': None, 'eta_max': eta_max}
  margins = (1.0 - np.abs(eta[usable])) / delta[usable] ** 2
  pick = usable[int(np.argmin(margins))]
  rho_fit = float(np.min(margins))
  worst = {'w': points[pick].tolist(),
           'margin': rho_fit,
           'eta': float(eta[pick]),
           'delta': float(delta[pick]),
           'eta_max': eta_max}
  cert.rho_fit = rho_fit
  LOG.debug('rho_fit=%.6g over %d points, max |eta|=%.12g', rho_fit,
            len(points), eta_max)
  if rho_fit <= 0.0:
    raise CertificateDegenerateError(rho_fit, worst)
  return rho_fit, worst


def certificate_report(teacher, ell=None, k_max=None, grid_n=DEFAULT_GRID_N,
                       ambient_samples=DEFAULT_AMBIENT_SAMPLES, seed=0,
                       table=None, ell_const=ELL_CONST,
                       k_max_factor=K_MAX_FACTOR):
  """Assemble and verify a certificate.

  Returns:
    Tuple (Certificate, JSON-ready report dict).
  """
  cert = assemble_certificate(teacher, ell, k_max, table, ell_const=ell_const,
                              k_max_factor=k_max_factor)
  rho_fit, worst = verify_nondegeneracy(cert, teacher, grid_n,
                                        ambient_samples, seed)
  return cert, {'ell': cert.ell,
                'k_max': cert.k_max,
                'rho_fit': rho_fit,
                'interp_error': interpolation_error(cert, teacher),
                'grad_error': gradient_error(cert, teacher),
                'eta_max': worst['eta_max'],
                'worst_point': worst,
                'p_norm_est': cert.p_norm_est}


def default_test_ell(teacher, i):
  """ceil((5/delta^2) ln(16 |a*|_1 / |a*_i|)) with delta = Delta/2, made even."""
  delta = teacher.delta_sep / 2.0
  ell = int(math.ceil(5.0 / delta ** 2 *
                      math.log(16.0 * teacher.a_l1 / abs(teacher.a_star[i]))))
  return max(ell + ell % 2, 2)


def _table_for(ell_t, table):
  if table is None or table.k_max < 2 * ell_t - 1:
    table = hermite.get_table('relu', max(hermite.DEFAULT_K_MAX, 2 * ell_t))
  return table


def test_statistic_scale(ell_t, table=None):
  """sum_{ell_t <= k < 2 ell_t} |sigma_hat_k|."""
  table = _table_for(ell_t, table)
  return math.fsum(np.abs(table.coeffs[ell_t:2 * ell_t]))


def test_statistic(student, teacher, i, ell_t, table=None):
  """<-R, g> for g = sum_{ell_t <= k < 2 ell_t} sign(a*_i sigma_hat_k) h_k(w*_i.x).

  Only degree >= 2 terms enter, so the affine head drops out. A direction v
  with mass c contributes c sigma_hat_k (v_bar.w*_i)^k to degree k.
  """
  if ell_t < 2:
    raise EllTooSmallError(ell_t)
  table = _table_for(ell_t, table)
  k = np.arange(ell_t, 2 * ell_t)
  weights = np.abs(table.coeffs[ell_t:2 * ell_t])
  anchor = teacher.W_star[i]
  _, units, _ = gauss_expect.unit_rows(student.W)
  teacher_cos = np.clip(teacher.W_star.dot(anchor), -1.0, 1.0)
  student_cos = np.clip(units.dot(anchor), -1.0, 1.0)
  teacher_part = teacher.a_star.dot(np.power.outer(teacher_cos, k))
  if student.m:
    student_part = student.masses().dot(np.power.outer(student_cos, k))
  else:
    student_part = np.zeros(len(k))
  return float(np.sign(teacher.a_star[i]) *
               math.fsum(weights * (teacher_part - student_part)))
