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
"""Command-line tasks: teacher generation, training, diagnostics, checks.

Every callback is called as callback(config, options, args) and returns an
exit code.
"""
import logging
import os

from relucl import base
from relucl import certificate
from relucl import geometry
from relucl import hermite
from relucl import network
from relucl.base import Task
from relucl.harness import experiment
from relucl.harness import oracle
from relucl.harness import output

LOGGER_NAME = __name__
SECTION_HEADER = 'HARNESS'
LOG = logging.getLogger(LOGGER_NAME)


def _emit(doc, out_dir, filename):
  """Write doc to out_dir/filename, or print it when out_dir is unset."""
  if out_dir:
    path = os.path.join(output.ensure_dir(out_dir), filename)
    output.write_json(path, doc)
    LOG.info('Wrote ' + path)
  else:
    print(output.dumps(doc))


def _load_teacher(path):
  return network.Teacher.from_json_dict(output.read_json(path))


def _load_student(path):
  return network.Student.from_json_dict(output.read_json(path))


def _run_gen_teacher(config, options, args):
  exp = experiment.ExperimentConfig.load(options.config, config)
  exp.override_seed(options.seed)
  teacher = experiment.make_teacher(exp.teacher)
  LOG.info(repr(teacher))
  _emit(teacher.to_json_dict(), options.out or exp.output_dir, 'teacher.json')
  return base.EXIT_OK


def _run_train(config, options, args):
  summary, exit_code = experiment.run_experiment(options.config, config,
                                                 options.out, options.seed)
  LOG.info('Final square loss: %s', summary['final_square_loss'])
  return exit_code


def _run_diagnose(config, options, args):
  teacher = _load_teacher(options.teacher)
  student = _load_student(options.student)
  lam = float(options.lam)
  settings = experiment.Settings(config)
  mc_n = options.n or config.lazy_get(geometry.SECTION_HEADER, 'mc_n',
                                      default=geometry.DEFAULT_MC_N,
                                      option_type=int)
  mc_seed = options.seed
  if mc_seed is None:
    mc_seed = config.lazy_get(geometry.SECTION_HEADER, 'mc_seed', default=0,
                              option_type=int)
  doc = experiment.epoch_diagnostics(
      student, teacher, lam, settings,
      {'audit': True, 'residuals': True, 'mc_n': int(mc_n),
       'mc_seed': int(mc_seed)})
  statistics = []
  for i in range(teacher.m_star):
    ell_t = certificate.default_test_ell(teacher, i)
    scale = certificate.test_statistic_scale(ell_t)
    value = certificate.test_statistic(student, teacher, i, ell_t)
    statistics.append({'teacher': i, 'ell_t': ell_t, 'value': value,
                       'scale': scale,
                       'relative': value / (abs(teacher.a_star[i]) * scale)})
  doc['test_statistics'] = statistics
  _emit(doc, options.out, 'diagnose.json')
  return base.EXIT_OK


def _run_certify(config, options, args):
  if options.teacher:
    teacher = _load_teacher(options.teacher)
  else:
    exp = experiment.ExperimentConfig.load(options.config, config)
    exp.override_seed(options.seed)
    teacher = experiment.make_teacher(exp.teacher)
  settings = experiment.Settings(config)
  table = hermite.get_table(
      config.lazy_get(hermite.SECTION_HEADER, 'activation', default='relu'),
      config.lazy_get(hermite.SECTION_HEADER, 'k_max',
                      default=hermite.DEFAULT_K_MAX, option_type=int))
  seed = settings.certificate_seed if options.seed is None else options.seed
  _, report = certificate.certificate_report(
      teacher, grid_n=settings.grid_n,
      ambient_samples=settings.ambient_samples, seed=int(seed), table=table,
      ell_const=settings.ell_const, k_max_factor=settings.k_max_factor)
  _emit(report, options.out, 'certify.json')
  return base.EXIT_OK


def _run_mc_check(config, options, args):
  n = int(options.n or 1000000)
  seed = int(options.seed or 0)
  chunk_size = config.lazy_get('MC', 'chunk_size', default=65536,
                               option_type=int)
  results = oracle.run_battery(n, seed, chunk_size=chunk_size)
  failed = [result for result in results if not result.passed]
  for result in failed:
    LOG.error('%s (instance %d): closed form %.10g, Monte Carlo %.10g '
              '+- %.3g', result.name, result.instance, result.closed,
              result.estimate.mean, result.estimate.stderr)
  _emit({'n': n, 'seed': seed, 'passed': len(results) - len(failed),
         'failed': len(failed),
         'checks': [result.to_json_dict() for result in results]},
        options.out, 'mc_check.json')
  return base.EXIT_NUMERIC if failed else base.EXIT_OK


TASKS = {'gen-teacher': Task('Sample a teacher from an experiment file',
                             callback=_run_gen_teacher,
                             required='config',
                             optional=['out', 'seed']),
         'train': Task('Run the full training pipeline and write artifacts',
                       callback=_run_train,
                       required='config',
                       optional=['out', 'seed']),
         'diagnose': Task('Run the geometry suite on a checkpoint',
                          callback=_run_diagnose,
                          required=['teacher', 'student', 'lam'],
                          optional=['n', 'seed', 'out']),
         'certify': Task('Assemble and verify the dual certificate',
                         callback=_run_certify,
                         required=[['teacher', 'config']],
                         optional=['seed', 'out']),
         'mc-check': Task('Check closed forms against Monte Carlo',
                          callback=_run_mc_check,
                          optional=['n', 'seed', 'out'])}
