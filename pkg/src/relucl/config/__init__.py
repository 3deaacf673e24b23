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
"""Loading of the tool-defaults file (INI) shared by every task."""
import configparser
import logging

import relucl
from relucl.config import parser

LOG = logging.getLogger(__name__)


def _create_basic_options():
  """Set the most basic options in the config file."""
  import relucl.certificate
  import relucl.gauss_expect
  import relucl.geometry
  import relucl.harness
  import relucl.hermite
  import relucl.train
  # REMEMBER: updating these means you need to update INSTALL.txt.
  _general = {'csv_delimiter': ',',
              'missing_field_value': 'nan',
              'record_wall_time': 'False'}
  _hermite = {'activation': 'relu',
              'k_max': '8192'}
  _mc = {'chunk_size': '65536'}
  _train = {'eta0': '1.0',
            'lambda0': '1.0',
            'eps0': '0.3',
            'lambda_scale': 'auto',
            'lambda_stage2': 'auto',
            'eta2': '1.0',
            't2_max': '5000',
            'stage2_tol': '1e-12',
            'lambda30': 'auto',
            'halvings': 'auto',
            'eps_target': '1e-4',
            'eta3': 'auto',
            'per_epoch_cap': '20000',
            'c_stop': '1.0',
            'log_every': '10',
            'balance_check_every': '100',
            'divergence_factor': '10.0'}
  _geometry = {'mc_n': '200000',
               'mc_seed': '0',
               'delta_close_max': '0.3',
               'delta_sign_max': '0.7853981633974483',
               'delta_sign_scale': '1.0',
               'dead_mass': '1e-3'}
  _certificate = {'ell_const': '8.0',
                  'k_max_factor': '20',
                  'grid_n': '720',
                  'ambient_samples': '1000',
                  'seed': '0'}
  _harness = {'diagnostics_every': '1',
              'certify': 'False',
              'output_dir': 'runs'}
  return {'GENERAL': _general,
          relucl.hermite.SECTION_HEADER: _hermite,
          relucl.gauss_expect.SECTION_HEADER: _mc,
          relucl.train.SECTION_HEADER: _train,
          relucl.geometry.SECTION_HEADER: _geometry,
          relucl.certificate.SECTION_HEADER: _certificate,
          relucl.harness.SECTION_HEADER: _harness}


def get_config_path(filename='config',
                    default_directories=None,
                    create_missing_dir=False):
  """Get the full path to the configuration file.

  See relucl.get_xdg_path()
  """
  return relucl.get_xdg_path(filename, 'CONFIG', default_directories,
                             create_missing_dir)


def load_configuration(path=None, write_missing=True):
  """Loads configuration file.

  Args:
    path: Path to the configuration file. Default None for the default location.
    write_missing: Write the basic options back to the file when some were
        missing. Default True.

  Returns:
    Configuration parser.
  """
  if not path:
    path = get_config_path(create_missing_dir=True)
  config = parser.ConfigParser(configparser.RawConfigParser)
  if path:
    config.associate(path)
  else:
    LOG.warning('Could not create config directory, using built-in defaults')
  made_changes = config.ensure_basic_options(_create_basic_options())
  if made_changes and path and write_missing:
    try:
      config.write_out_parser()
    except (IOError, OSError) as err:
      LOG.debug('Not saving defaults to ' + path + ': ' + str(err))
  return config
