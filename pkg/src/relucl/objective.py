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


"""Exact population loss, its gradient, and the three-part decomposition.

The residual R(x) = f(x) - y~(x) is a signed combination of ReLU features
plus an affine head:

  R(x) = sum_p c_p relu(u_p . x) + A + B . x,

with c = (a, -a*), u = (w_1..w_m, w*_1..w*_m*), A = alpha + alpha_* and
B = beta + beta_*. Every expectation below follows from the arc-cosine kernel
and the moments E[relu(u.x)] = |u|/sqrt(2 pi), E[relu(u.x) x] = u/2.
The loss is E[R^2] with no 1/2 factor.
"""
import logging
import math

import numpy as np

from relucl import gauss_expect

LOG = logging.getLogger(__name__)

INV_SQRT_2PI = gauss_expect.INV_SQRT_2PI


class Gradient(object):
  """Gradient of the regularized loss in (a, W, alpha, beta)."""

  def __init__(self, g_a, g_W, g_alpha, g_beta):
    self.g_a = g_a
    self.g_W = g_W
    self.g_alpha = float(g_alpha)
    self.g_beta = g_beta

  def norm_sq(self):
    return float(np.dot(self.g_a, self.g_a) + np.sum(self.g_W * self.g_W) +
                 self.g_alpha ** 2 + np.dot(self.g_beta, self.g_beta))

  def frobenius_norm(self):
    return math.sqrt(self.norm_sq())

  def is_finite(self):
    return bool(np.all(np.isfinite(self.g_a)) and
                np.all(np.isfinite(self.g_W)) and
                math.isfinite(self.g_alpha) and
                np.all(np.isfinite(self.g_beta)))

  def dot(self, other):
    """Inner product with another Gradient-shaped direction."""
    return float(np.dot(self.g_a, other.g_a) + np.sum(self.g_W * other.g_W) +
                 self.g_alpha * other.g_alpha +
                 np.dot(self.g_beta, other.g_beta))


def _combined(student, teacher):
  c = np.concatenate([student.a, -teacher.a_star])
  u = np.vstack([student.W, teacher.W_star])
  return c, u, student.alpha + teacher.alpha_star, student.beta + teacher.beta_star


def _square_loss_terms(c, u, head_const, head_lin, kernel):
  norms = gauss_expect.row_norms(u)
  terms = list((np.outer(c, c) * kernel).ravel())
  terms.append(2.0 * head_const * INV_SQRT_2PI * math.fsum(c * norms))
  terms.extend(c * u.dot(head_lin))
  terms.append(head_const * head_const)
  terms.append(float(np.dot(head_lin, head_lin)))
  return max(math.fsum(terms), 0.0)


def population_square_loss(student, teacher):
  """E[(f(x) - y~(x))^2], exactly."""
  c, u, head_const, head_lin = _combined(student, teacher)
  kernel = gauss_expect.relu_kernel_matrix(u, u)
  return _square_loss_terms(c, u, head_const, head_lin, kernel)


def regularizer(student):
  """(1/2)(|a|^2 + |W|_F^2)."""
  return 0.5 * student.norm_sq()


def regularized_loss(student, teacher, lam):
  """Square loss plus (lambda/2)(|a|^2 + |W|_F^2)."""
  return population_square_loss(student, teacher) + lam * regularizer(student)


def _gradient(student, c, u, head_const, head_lin, kernel, lam):
  m = student.m
  norms_w, units_w, alive = gauss_expect.unit_rows(student.W)
  u_norms = gauss_expect.row_norms(u)
  g_a = 2.0 * (kernel[:m].dot(c) + head_const * INV_SQRT_2PI * norms_w +
               0.5 * student.W.dot(head_lin)) + lam * student.a
  data_w = (gauss_expect.relu_kernel_grad_sum(student.W, u, c) +
            head_const * INV_SQRT_2PI * units_w + 0.5 * head_lin)
  data_w[~alive] = 0.0
  g_W = 2.0 * student.a[:, None] * data_w + lam * student.W
  g_alpha = 2.0 * (INV_SQRT_2PI * math.fsum(c * u_norms) + head_const)
  g_beta = 2.0 * (0.5 * c.dot(u) + head_lin)
  return Gradient(g_a, g_W, g_alpha, g_beta)


def population_gradient(student, teacher, lam):
  """Exact gradient of regularized_loss.

  Neurons with |w_j| below the norm floor get the zero data subgradient, so
  their W-gradient is lambda * w_j.
  """
  c, u, head_const, head_lin = _combined(student, teacher)
  kernel = gauss_expect.relu_kernel_matrix(student.W, u) if student.m else \
      np.zeros((0, len(c)))
  return _gradient(student, c, u, head_const, head_lin, kernel, lam)


def loss_and_gradient(student, teacher, lam):
  """Return (regularized loss, square loss, Gradient) from one kernel matrix."""
  c, u, head_const, head_lin = _combined(student, teacher)
  kernel = gauss_expect.relu_kernel_matrix(u, u)
  square = _square_loss_terms(c, u, head_const, head_lin, kernel)
  grad = _gradient(student, c, u, head_const, head_lin, kernel, lam)
  return square + lam * regularizer(student), square, grad


def head_optimum(student):
  """(alpha_hat, beta_hat) minimizing the square loss for fixed (a, W)."""
  norms = gauss_expect.row_norms(student.W)
  alpha_hat = -INV_SQRT_2PI * math.fsum(student.a * norms)
  beta_hat = -0.5 * student.a.dot(student.W)
  return alpha_hat, beta_hat


def high_order_loss(student, teacher):
  """E[(f_{>=2}(x) - y~(x))^2], the part no affine head can reduce."""
  c = np.concatenate([student.a, -teacher.a_star])
  u = np.vstack([student.W, teacher.W_star])
  gram = gauss_expect.sigma_ge2_gram(u, u)
  return max(math.fsum((np.outer(c, c) * gram).ravel()), 0.0)


def loss_decomposition(student, teacher):
  """Return ((alpha - alpha_hat)^2, |beta - beta_hat|^2, high-order part).

  The three parts sum to population_square_loss().
  """
  alpha_hat, beta_hat = head_optimum(student)
  diff = student.beta - beta_hat
  return ((student.alpha - alpha_hat) ** 2, float(np.dot(diff, diff)),
          high_order_loss(student, teacher))
