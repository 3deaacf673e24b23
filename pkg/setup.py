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

try:
  from setuptools import setup
except ImportError:
  from distutils.core import setup
import filecmp
import os
import shutil
import sys

packages = ['relucl',
            'relucl.config',
            'relucl.harness']

SCRIPT_TO_INSTALL = 'src/relu'
SCRIPT_TO_RENAME = 'src/relu.py'

# Copy src/relu.py to src/relu, refusing a stale copy.
if os.path.exists(SCRIPT_TO_INSTALL):
  if (os.path.exists(SCRIPT_TO_RENAME) and
      not filecmp.cmp(SCRIPT_TO_INSTALL, SCRIPT_TO_RENAME, shallow=False)):
    print(SCRIPT_TO_INSTALL + ' exists and is not the same as ' +
          SCRIPT_TO_RENAME)
    print('Not trusting ' + SCRIPT_TO_INSTALL)
    print('Please update it or remove it.')
    sys.exit(-1)
else:
  shutil.copy(SCRIPT_TO_RENAME, SCRIPT_TO_INSTALL)

long_desc = """Training and diagnostics for two-layer ReLU networks fit to a
planted teacher with well-separated neurons. A three-stage schedule (a single
gradient step from a symmetric initialization, a lasso fit of the second
layer followed by norm balancing, then gradient descent epochs with halving
weight decay) drives an overparameterized student towards the teacher while
the harness records the geometry of the student neurons, closed-form losses,
Monte Carlo residuals and a dual certificate for the teacher."""

setup(name="relucl",
      version="0.1.0",
      description="Recover planted ReLU teachers from the command line",
      license="Apache Software License",
      packages=packages,
      package_dir={'relucl': 'src/relucl'},
      scripts=[SCRIPT_TO_INSTALL],
      install_requires=['numpy >=1.17',
                        'scipy >=1.4',
                        'simplejson >=3.0'],
      long_description=long_desc,
      classifiers=[
          'Topic :: Scientific/Engineering :: Mathematics',
          'Environment :: Console',
          'Development Status :: 3 - Alpha',
          'Operating System :: POSIX',
          'Intended Audience :: Science/Research',
      ]
     )
