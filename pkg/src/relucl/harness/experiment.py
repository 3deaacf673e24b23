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


"""Experiment configuration and the end-to-end training run.

An experiment file is UTF-8 JSON:

  {"schema_version": 1,
   "teacher": {"d": 24, "r": 2, "m_star": 3, "delta_min": 0.4,
               "a_magnitudes": [1, -1, 2], "seed": 0},
   "student": {"m": 64, "seed": 1},
   "schedule": {"eps0": 0.3, "halvings": 14},
   "diagnostics": {"every": 1, "residuals": false, "certify": true},
   "output_dir": "runs/acceptance"}

schedule, diagnostics and output_dir are optional; missing values come from
the tool defaults. Unknown keys are rejected.

A run writes, under the output directory:
  teacher.json, student_final.json, trace.csv, diagnostics.jsonl,
  summary.json, checkpoints/epoch_XX.json, plotdata/gap_vs_iteration.csv and
  plotdata/angles_vs_epoch.csv.
"""
import logging
import math
import numbers
import os

import numpy as np
import simplejson as json

from relucl import base
from relucl import certificate
from relucl import gauss_expect
from relucl import geometry
from relucl import network
from relucl import objective
from relucl import train
from relucl.harness import output

LOG = logging.getLogger(__name__)
SECTION_HEADER = 'HARNESS'

SCHEMA_VERSION = 1
TOP_KEYS = ('schema_version', 'teacher', 'student', 'schedule', 'diagnostics',
            'output_dir')
TEACHER_KEYS = {'d': int, 'r': int, 'm_star': int, 'delta_min': float,
                'a_magnitudes': list, 'seed': int}
STUDENT_KEYS = {'m': int, 'seed': int}
DIAGNOSTICS_KEYS = {'every': int, 'residuals': bool, 'audit': bool,
                    'certify': bool, 'mc_n': int, 'mc_seed': int}
# Keys and order of summary.json.
SUMMARY_FIELDS = ('schema_version', 'status', 'error', 'exit_code',
                  'epochs_completed', 'final_lambda', 'final_reg_loss',
                  'final_square_loss', 'min_angle_per_teacher',
                  'dead_neurons', 'weighted_far', 'norm_sq', 'rho_fit',
                  'p_norm_est', 'trace_rows')


class Error(base.Error):
  """Base error for this module."""
  pass


class ConfigInvalidError(Error, base.ValidationError):
  """The experiment file fails validation at one field."""
  def __init__(self, field, message):
    self.field = field
    self.message = message

  def __str__(self):
    return 'config-invalid: %s: %s' % (self.field, self.message)


def _check_type(field, value, expected):
  if expected is bool:
    ok = isinstance(value, bool)
  elif expected is int:
    ok = isinstance(value, numbers.Integral) and not isinstance(value, bool)
  elif expected is float:
    ok = isinstance(value, numbers.Real) and not isinstance(value, bool)
  else:
    ok = isinstance(value, expected)
  if not ok:
    raise ConfigInvalidError(field, 'expected %s, got %r' %
                             (expected.__name__, value))
  return value


def _section(doc, name, keys, required):
  section = doc.get(name, {})
  if not isinstance(section, dict):
    raise ConfigInvalidError(name, 'must be an object')
  for key in sorted(section):
    if key not in keys:
      raise ConfigInvalidError(name + '.' + key, 'unknown key')
    _check_type(name + '.' + key, section[key], keys[key])
  for key in required:
    if key not in section:
      raise ConfigInvalidError(name + '.' + key, 'required')
  return section


class ExperimentConfig(object):
  """Validated experiment file merged with the tool defaults."""

  def __init__(self, teacher, student, schedule, diagnostics, output_dir):
    self.teacher = teacher
    self.student = student
    self.schedule = schedule
    self.diagnostics = diagnostics
    self.output_dir = output_dir

  @classmethod
  def from_json_dict(cls, doc, tool_config=None):
    """Validate doc.

    Args:
      doc: Parsed experiment file.
      tool_config: relucl.config parser for defaults, or None for the
          built-in ones.

    Raises:
      ConfigInvalidError: at the first offending field.
    """
    if not isinstance(doc, dict):
      raise ConfigInvalidError('<root>', 'must be an object')
    for key in sorted(doc):
      if key not in TOP_KEYS:
        raise ConfigInvalidError(key, 'unknown key')
    if doc.get('schema_version') != SCHEMA_VERSION:
      raise ConfigInvalidError('schema_version',
                               'must be %d, got %r' %
                               (SCHEMA_VERSION, doc.get('schema_version')))
    teacher = dict(_section(doc, 'teacher', TEACHER_KEYS, TEACHER_KEYS))
    for k, value in enumerate(teacher['a_magnitudes']):
      _check_type('teacher.a_magnitudes[%d]' % k, value, float)
    student = dict(_section(doc, 'student', STUDENT_KEYS, STUDENT_KEYS))
    schedule_doc = doc.get('schedule', {})
    if not isinstance(schedule_doc, dict):
      raise ConfigInvalidError('schedule', 'must be an object')
    for key in sorted(schedule_doc):
      if key not in train.SCHEDULE_FIELDS:
        raise ConfigInvalidError('schedule.' + key, 'unknown key')
      _check_type('schedule.' + key, schedule_doc[key],
                  train.SCHEDULE_FIELDS[key][0])
    try:
      if tool_config is None:
        schedule = train.Schedule(**schedule_doc)
      else:
        schedule = train.Schedule.from_config(tool_config, **schedule_doc)
    except train.InvalidScheduleError as err:
      raise ConfigInvalidError('schedule.' + err.field, str(err))
    diagnostics = _default_diagnostics(tool_config)
    diagnostics.update(_section(doc, 'diagnostics', DIAGNOSTICS_KEYS, ()))
    if diagnostics['every'] < 1:
      raise ConfigInvalidError('diagnostics.every', 'must be at least 1')
    output_dir = doc.get('output_dir')
    if output_dir is None:
      output_dir = _tool_value(tool_config, SECTION_HEADER, 'output_dir',
                               'runs', str)
    elif not isinstance(output_dir, str) or not output_dir:
      raise ConfigInvalidError('output_dir', 'must be a non-empty string')
    return cls(teacher, student, schedule, diagnostics, output_dir)

  @classmethod
  def load(cls, path, tool_config=None):
    try:
      with open(path, encoding='utf-8') as config_file:
        doc = json.load(config_file)
    except (IOError, OSError) as err:
      raise ConfigInvalidError('<file>', str(err))
    except json.JSONDecodeError as err:
      raise ConfigInvalidError('<file>', 'not valid JSON: ' + str(err))
    LOG.debug('Loaded experiment from ' + path)
    return cls.from_json_dict(doc, tool_config)

  def override_seed(self, seed):
    """Use seed for both the teacher and the student."""
    if seed is not None:
      self.teacher['seed'] = int(seed)
      self.student['seed'] = int(seed)

  def to_json_dict(self):
    return {'schema_version': SCHEMA_VERSION,
            'teacher': dict(self.teacher),
            'student': dict(self.student),
            'schedule': self.schedule.to_json_dict(),
            'diagnostics': dict(self.diagnostics),
            'output_dir': self.output_dir}


def _tool_value(tool_config, section, option, default, option_type):
  if tool_config is None:
    return default
  value = tool_config.lazy_get(section, option, option_type=option_type)
  return default if value is None else value


def _default_diagnostics(tool_config):
  return {'every': _tool_value(tool_config, SECTION_HEADER,
                               'diagnostics_every', 1, int),
          'residuals': False,
          'audit': True,
          'certify': _tool_value(tool_config, SECTION_HEADER, 'certify',
                                 False, bool),
          'mc_n': _tool_value(tool_config, geometry.SECTION_HEADER, 'mc_n',
                              geometry.DEFAULT_MC_N, int),
          'mc_seed': _tool_value(tool_config, geometry.SECTION_HEADER,
                                 'mc_seed', 0, int)}


class Settings(object):
  """Tool defaults the run reads besides the schedule."""

  def __init__(self, tool_config=None):
    def get(section, option, default, option_type):
      return _tool_value(tool_config, section, option, default, option_type)
    self.delimiter = get('GENERAL', 'csv_delimiter', ',', str)
    self.missing_field_value = get('GENERAL', 'missing_field_value', 'nan',
                                   str)
    self.record_wall_time = get('GENERAL', 'record_wall_time', False, bool)
    self.chunk_size = get(gauss_expect.SECTION_HEADER, 'chunk_size',
                          gauss_expect.DEFAULT_CHUNK_SIZE, int)
    self.delta_close_max = get(geometry.SECTION_HEADER, 'delta_close_max',
                               geometry.DELTA_CLOSE_MAX, float)
    self.delta_sign_max = get(geometry.SECTION_HEADER, 'delta_sign_max',
                              geometry.DELTA_SIGN_MAX, float)
    self.delta_sign_scale = get(geometry.SECTION_HEADER, 'delta_sign_scale',
                                1.0, float)
    self.dead_mass = get(geometry.SECTION_HEADER, 'dead_mass', 1e-3, float)
    self.ell_const = get(certificate.SECTION_HEADER, 'ell_const',
                         certificate.ELL_CONST, float)
    self.k_max_factor = get(certificate.SECTION_HEADER, 'k_max_factor',
                            certificate.K_MAX_FACTOR, int)
    self.grid_n = get(certificate.SECTION_HEADER, 'grid_n',
                      certificate.DEFAULT_GRID_N, int)
    self.ambient_samples = get(certificate.SECTION_HEADER, 'ambient_samples',
                               certificate.DEFAULT_AMBIENT_SAMPLES, int)
    self.certificate_seed = get(certificate.SECTION_HEADER, 'seed', 0, int)


def make_teacher(section):
  """Sample the teacher described by an ExperimentConfig teacher section."""
  return network.sample_teacher(section['d'], section['r'], section['m_star'],
                                section['delta_min'], section['a_magnitudes'],
                                section['seed'])


def dead_neuron_count(student, dead_mass):
  return int(np.sum(np.abs(student.masses()) <= dead_mass))


def epoch_diagnostics(student, teacher, lam, settings, diagnostics,
                      p_norm=None):
  """Geometry suite of one checkpoint as a JSON-ready dict."""
  reg, square, grad = objective.loss_and_gradient(student, teacher, lam)
  report = geometry.partition(student, teacher)
  gap = geometry.gap_report(student, teacher, lam, p_norm)
  doc = {'lambda': lam,
         'reg_loss': reg,
         'square_loss': square,
         'grad_norm': grad.frobenius_norm(),
         'gap': gap,
         'in_regime': geometry.in_regime(gap['zeta_hat'], lam),
         'grad_ratio': geometry.grad_lower_bound_ratio(student, teacher, lam),
         'partition': report.to_json_dict(),
         'dead_neurons': dead_neuron_count(student, settings.dead_mass),
         'balance_violation': train.balance_violation(student),
         'norm_sq': student.norm_sq()}
  if diagnostics.get('audit', True) and student.m:
    close, sign = geometry.default_radii(
        gap['zeta_hat'], lam, settings.delta_close_max,
        settings.delta_sign_max, settings.delta_sign_scale)
    doc['audit'] = geometry.descent_audit(student, teacher, lam, close,
                                          sign).to_json_dict()
  if diagnostics.get('residuals'):
    canonical = geometry.canonicalize_signs(student, teacher)
    doc['residuals'] = geometry.residual_norms(
        canonical, teacher, diagnostics['mc_n'], diagnostics['mc_seed'],
        settings.chunk_size).to_json_dict()
  return doc


def _json_float(value):
  if value is None or not math.isfinite(value):
    return None
  return float(value)


class _Recorder(object):
  """Epoch callback writing checkpoints, diagnostics and the angle rows."""

  def __init__(self, out_dir, teacher, config, settings, lines, p_norm):
    self.out_dir = out_dir
    self.teacher = teacher
    self.config = config
    self.settings = settings
    self.lines = lines
    self.p_norm = p_norm
    self.last_epoch = config.schedule.halvings
    self.angle_rows = []
    self.epochs_completed = -1
    self.lam = None

  def __call__(self, epoch, lam, student, epoch_trace):
    self.epochs_completed = epoch
    self.lam = lam
    output.write_json(os.path.join(self.out_dir, 'checkpoints',
                                   'epoch_%02d.json' % epoch),
                      student.to_json_dict())
    report = geometry.partition(student, self.teacher)
    self.angle_rows.append([epoch, lam] + list(report.min_close) +
                           [report.weighted_far])
    every = self.config.diagnostics['every']
    if epoch % every == 0 or epoch == self.last_epoch:
      doc = epoch_diagnostics(student, self.teacher, lam, self.settings,
                              self.config.diagnostics, self.p_norm)
      doc['epoch'] = epoch
      doc['steps'] = len(epoch_trace)
      self.lines.write(doc)


def run_experiment(config, tool_config=None, out_dir=None, seed=None):
  """Run the full pipeline and write every artifact.

  Args:
    config: ExperimentConfig or a path to an experiment file.
    tool_config: relucl.config parser, or None for built-in defaults.
    out_dir: Override of config.output_dir.
    seed: Override of both the teacher and the student seed.

  Returns:
    Tuple (summary dict, exit code). Stage errors are caught, recorded in the
    summary and reflected in the exit code.

  Raises:
    ConfigInvalidError: the experiment file does not validate.
  """
  if not isinstance(config, ExperimentConfig):
    config = ExperimentConfig.load(config, tool_config)
  config.override_seed(seed)
  settings = Settings(tool_config)
  out_dir = out_dir or config.output_dir
  for sub_dir in ('checkpoints', 'plotdata'):
    output.ensure_dir(os.path.join(out_dir, sub_dir))
  output.write_json(os.path.join(out_dir, 'config.json'),
                    config.to_json_dict())
  summary = dict((field, None) for field in SUMMARY_FIELDS)
  summary.update(schema_version=SCHEMA_VERSION, status='ok', exit_code=0)
  trace = train.TrainTrace()
  recorder = None
  try:
    teacher = make_teacher(config.teacher)
    output.write_json(os.path.join(out_dir, 'teacher.json'),
                      teacher.to_json_dict())
    p_norm = None
    if config.diagnostics['certify']:
      cert = certificate.assemble_certificate(
          teacher, ell_const=settings.ell_const,
          k_max_factor=settings.k_max_factor)
      certificate.verify_nondegeneracy(cert, teacher, settings.grid_n,
                                       settings.ambient_samples,
                                       settings.certificate_seed)
      p_norm = cert.p_norm_est
      summary.update(rho_fit=cert.rho_fit, p_norm_est=p_norm)
    with output.JsonLinesWriter(os.path.join(out_dir,
                                             'diagnostics.jsonl')) as lines:
      recorder = _Recorder(out_dir, teacher, config, settings, lines, p_norm)
      student, trace = train.run_pipeline(teacher, config.schedule,
                                          config.student['m'],
                                          config.student['seed'],
                                          epoch_callback=recorder)
    output.write_json(os.path.join(out_dir, 'student_final.json'),
                      student.to_json_dict())
    report = geometry.partition(student, teacher)
    summary.update(
        final_lambda=recorder.lam,
        final_reg_loss=objective.regularized_loss(student, teacher,
                                                  recorder.lam),
        final_square_loss=objective.population_square_loss(student, teacher),
        min_angle_per_teacher=[_json_float(x) for x in report.min_close],
        dead_neurons=dead_neuron_count(student, settings.dead_mass),
        weighted_far=report.weighted_far,
        norm_sq=student.norm_sq())
  except base.Error as err:
    LOG.error(str(err))
    summary.update(status='failed', error=str(err),
                   exit_code=getattr(err, 'exit_code', base.EXIT_NUMERIC))
  if recorder is not None:
    summary['epochs_completed'] = recorder.epochs_completed
    _write_plotdata(out_dir, trace, recorder, settings)
  summary['trace_rows'] = len(trace)
  trace.write_csv(os.path.join(out_dir, 'trace.csv'), settings.delimiter,
                  settings.missing_field_value, settings.record_wall_time)
  output.write_json(os.path.join(out_dir, 'summary.json'), summary)
  LOG.info('Run finished with status %s; artifacts in %s', summary['status'],
           out_dir)
  return summary, summary['exit_code']


def _write_plotdata(out_dir, trace, recorder, settings):
  plot_dir = os.path.join(out_dir, 'plotdata')
  gap_fields = ('stage', 'epoch', 'iter', 'lambda', 'gap_surrogate')
  output.write_rows(os.path.join(plot_dir, 'gap_vs_iteration.csv'),
                    gap_fields,
                    [[row[f] for f in gap_fields] for row in trace],
                    settings.delimiter, settings.missing_field_value)
  angle_header = (['epoch', 'lambda'] +
                  ['min_angle_%d' % i for i in range(recorder.teacher.m_star)]
                  + ['weighted_far'])
  output.write_rows(os.path.join(plot_dir, 'angles_vs_epoch.csv'),
                    angle_header, recorder.angle_rows, settings.delimiter,
                    settings.missing_field_value)
