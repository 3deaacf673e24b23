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


"""Normalized Hermite polynomials and Hermite coefficients of activations.

h_k = He_k / sqrt(k!) are orthonormal under the standard Gaussian. The
coefficients sigma_hat_k = E[sigma(z) h_k(z)] of ReLU and of the absolute
value are available in closed form and are tabulated by build_table().
"""
import csv
import logging
import math

import numpy as np
from scipy.special import gammaln

from relucl import base

LOG = logging.getLogger(__name__)
SECTION_HEADER = 'HERMITE'

ACTIVATIONS = ('relu', 'abs')
DEFAULT_K_MAX = 8192
# Legendre panels extend this far past the outermost breakpoint; the Gaussian
# density there is below 1e-55.
_PANEL_REACH = 16.0


class Error(base.Error):
  """Base error for this module."""
  pass


class UnknownActivationError(Error, base.ValidationError):
  """Activation tag is not one of ACTIVATIONS."""
  def __init__(self, tag):
    self.tag = tag

  def __str__(self):
    return ('Unknown activation "%s", expected one of %s' %
            (self.tag, ', '.join(ACTIVATIONS)))


class TableSizeError(Error, base.ValidationError):
  """Requested truncation order is too small."""
  def __init__(self, k_max):
    self.k_max = k_max

  def __str__(self):
    return 'K_max must be an integer >= 2, got %s' % (self.k_max,)


class HermiteTable(object):
  """Hermite coefficients sigma_hat_0..sigma_hat_K_max of one activation."""

  def __init__(self, activation_tag, coeffs):
    self.activation_tag = activation_tag
    self.coeffs = np.array(coeffs, dtype=float)
    self.coeffs.setflags(write=False)
    self.k_max = len(self.coeffs) - 1

  def __getitem__(self, k):
    return self.coeffs[k]

  def __len__(self):
    return len(self.coeffs)

  def squared_tail(self, ell, k_max=None):
    """Return sum of sigma_hat_k^2 for ell <= k <= k_max."""
    if k_max is None:
      k_max = self.k_max
    return math.fsum(self.coeffs[ell:k_max + 1] ** 2)

  def dump_csv(self, path):
    """Write the table as CSV with columns k, sigma_hat_k."""
    with open(path, 'w', newline='') as csv_file:
      writer = csv.writer(csv_file)
      writer.writerow(['k', 'sigma_hat_k'])
      for k, value in enumerate(self.coeffs):
        writer.writerow([k, base.format_value(value)])
    LOG.debug('Wrote ' + str(len(self.coeffs)) + ' coefficients to ' + path)


def hermite_normalized(k, x):
  """Evaluate h_k(x) = He_k(x)/sqrt(k!).

  Uses the recurrence on normalized values,
  h_{j+1} = (x h_j - sqrt(j) h_{j-1}) / sqrt(j+1), which never forms k!.

  Args:
    k: Non-negative integer order.
    x: Float or numpy array of evaluation points.

  Returns:
    Float when x is a scalar, otherwise an array shaped like x.
  """
  if k < 0:
    raise ValueError('Hermite order must be non-negative, got %s' % k)
  scalar = np.ndim(x) == 0
  x = np.asarray(x, dtype=float)
  h_prev = np.zeros_like(x)
  h_cur = np.ones_like(x)
  for j in range(k):
    h_prev, h_cur = h_cur, (x * h_cur - math.sqrt(j) * h_prev) / math.sqrt(j + 1)
  if scalar:
    return float(h_cur)
  return h_cur


def hermite_all(k_max, x):
  """Return an array of shape (k_max + 1,) + shape(x) holding h_0..h_k_max."""
  x = np.asarray(x, dtype=float)
  values = np.empty((k_max + 1,) + x.shape)
  values[0] = 1.0
  if k_max >= 1:
    values[1] = x
  for j in range(1, k_max):
    values[j + 1] = (x * values[j] - math.sqrt(j) * values[j - 1]) / math.sqrt(j + 1)
  return values


def _even_coefficients(k, base_value):
  # (-1)^(k/2-1) * base * (k-2)! / (sqrt(k!) 2^(k/2-1) (k/2-1)!) in log form.
  half = k // 2
  log_mag = (math.log(base_value) + gammaln(k - 1) - 0.5 * gammaln(k + 1) -
             (half - 1) * math.log(2.0) - gammaln(half))
  sign = np.where((half - 1) % 2 == 0, 1.0, -1.0)
  return sign * np.exp(log_mag)


def build_table(activation_tag='relu', k_max=DEFAULT_K_MAX):
  """Tabulate the Hermite coefficients of an activation.

  Args:
    activation_tag: 'relu' or 'abs'.
    k_max: Highest order to tabulate, at least 2.

  Returns:
    HermiteTable.

  Raises:
    UnknownActivationError: activation_tag is not recognized.
    TableSizeError: k_max < 2.
  """
  if activation_tag not in ACTIVATIONS:
    raise UnknownActivationError(activation_tag)
  if int(k_max) != k_max or k_max < 2:
    raise TableSizeError(k_max)
  k_max = int(k_max)
  coeffs = np.zeros(k_max + 1)
  if activation_tag == 'relu':
    base_value = 1.0 / math.sqrt(2.0 * math.pi)
    coeffs[1] = 0.5
  else:
    base_value = math.sqrt(2.0 / math.pi)
  coeffs[0] = base_value
  even_k = np.arange(2, k_max + 1, 2)
  coeffs[even_k] = _even_coefficients(even_k, base_value)
  LOG.debug('Built ' + activation_tag + ' table up to k=' + str(k_max))
  return HermiteTable(activation_tag, coeffs)


_TABLE_CACHE = {}


def get_table(activation_tag='relu', k_max=DEFAULT_K_MAX):
  """Return a shared table, building it on first use."""
  key = (activation_tag, int(k_max))
  if key not in _TABLE_CACHE:
    _TABLE_CACHE[key] = build_table(activation_tag, k_max)
  return _TABLE_CACHE[key]


def relu(z):
  return np.maximum(z, 0.0)


def abs_activation(z):
  return np.abs(z)


def quadrature_inner(f, g, nodes, breakpoints=None):
  """Estimate E[f(z) g(z)] for z ~ N(0, 1).

  Without breakpoints this is nodes-point Gauss-Hermite quadrature, exact for
  polynomial integrands of total degree <= 2*nodes - 1. Integrands with kinks
  (ReLU, absolute value) converge slowly under Gauss-Hermite; passing the kink
  locations as breakpoints switches to Gauss-Legendre panels between them,
  each with nodes points, weighted by the Gaussian density.

  Args:
    f: Vectorized real function.
    g: Vectorized real function.
    nodes: Number of quadrature nodes (per panel with breakpoints), >= 2.
    breakpoints: Optional sequence of kink locations.

  Returns:
    Float estimate.
  """
  if nodes < 2:
    raise ValueError('Quadrature needs at least 2 nodes, got %s' % nodes)
  if not breakpoints:
    x, w = np.polynomial.hermite.hermgauss(nodes)
    z = math.sqrt(2.0) * x
    return float(np.dot(w / math.sqrt(math.pi), f(z) * g(z)))

  points = sorted(float(b) for b in breakpoints)
  reach = _PANEL_REACH + max(abs(b) for b in points)
  edges = [-reach] + points + [reach]
  x, w = np.polynomial.legendre.leggauss(nodes)
  parts = []
  for lo, hi in zip(edges[:-1], edges[1:]):
    if hi <= lo:
      continue
    half = 0.5 * (hi - lo)
    z = 0.5 * (hi + lo) + half * x
    density = np.exp(-0.5 * z * z) / math.sqrt(2.0 * math.pi)
    parts.append(half * np.dot(w, f(z) * g(z) * density))
  return math.fsum(parts)
