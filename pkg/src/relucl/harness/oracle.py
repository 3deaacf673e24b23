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


"""Closed-form Gaussian expectations checked against Monte Carlo."""
import logging

import numpy as np

from relucl import gauss_expect

LOG = logging.getLogger(__name__)

DEFAULT_INSTANCES = 20
DEFAULT_D = 8
N_STDERR = 5.0
# Counter block of the instance parameters, far from the Monte Carlo chunks.
PARAMETER_STREAM = 1 << 40


class CheckResult(object):
  """One closed-form value and its Monte Carlo estimate."""

  def __init__(self, name, instance, closed, estimate, n_stderr=N_STDERR):
    self.name = name
    self.instance = instance
    self.closed = float(closed)
    self.estimate = estimate
    self.passed = estimate.within(self.closed, n_stderr)

  def to_json_dict(self):
    return {'name': self.name,
            'instance': self.instance,
            'closed': self.closed,
            'mc': self.estimate.to_dict(),
            'passed': self.passed}


def _relu(z):
  return np.maximum(z, 0.0)


def _unit(v):
  return v / np.linalg.norm(v)


def _instance_checks(rng, instance, d, n, seed, chunk_size):
  w = rng.standard_normal(d) * rng.uniform(0.5, 2.0)
  u = rng.standard_normal(d) * rng.uniform(0.5, 2.0)
  probe = _unit(rng.standard_normal(d))
  wbar, ubar = _unit(w), _unit(u)
  mc_seed = seed + instance
  mean, first = gauss_expect.relu_low_order_moments(w)

  def estimate(f):
    return gauss_expect.mc_expectation(f, d, n, mc_seed, chunk_size)

  s_const = gauss_expect.INV_SQRT_2PI

  def sigma_ge2(z):
    return _relu(z) - s_const - 0.5 * z

  return [
      CheckResult('relu_pair_kernel', instance,
                  gauss_expect.relu_pair_kernel(w, u),
                  estimate(lambda x: _relu(x.dot(w)) * _relu(x.dot(u)))),
      CheckResult('relu_low_order_moments.mean', instance, mean,
                  estimate(lambda x: _relu(x.dot(w)))),
      CheckResult('relu_low_order_moments.first', instance,
                  np.dot(first, probe),
                  estimate(lambda x: _relu(x.dot(w)) * x.dot(probe))),
      CheckResult('sigma_ge2_kernel', instance,
                  gauss_expect.sigma_ge2_kernel(wbar, ubar),
                  estimate(lambda x: sigma_ge2(x.dot(wbar)) *
                           sigma_ge2(x.dot(ubar)))),
  ]


def run_battery(n=1000000, seed=0, instances=DEFAULT_INSTANCES, d=DEFAULT_D,
                chunk_size=gauss_expect.DEFAULT_CHUNK_SIZE):
  """Check every closed form on random instances.

  Instance k draws its weights from a dedicated counter block of seed and
  samples with Monte Carlo seed seed + k.

  Returns:
    List of CheckResult.
  """
  rng = gauss_expect.counter_generator(seed, PARAMETER_STREAM)
  results = []
  for instance in range(instances):
    results.extend(_instance_checks(rng, instance, d, n, seed, chunk_size))
  failed = [r for r in results if not r.passed]
  if failed:
    LOG.warning('%d of %d Monte Carlo checks failed', len(failed),
                len(results))
  else:
    LOG.debug('All %d Monte Carlo checks passed', len(results))
  return results
