#!/usr/bin/env python
# -*- coding: utf-8 -*-
import os
import sys

from setuptools import setup

version = '0.1.0'

if sys.argv[-1] == 'publish':
    try:
        import wheel
        print("Wheel version: ", wheel.__version__)
    except ImportError:
        print('Wheel library missing. Please run "pip install wheel"')
        sys.exit()
    os.system('python setup.py sdist upload')
    os.system('python setup.py bdist_wheel upload')
    sys.exit()

if sys.argv[-1] == 'tag':
    print("Tagging the version on git:")
    os.system("git tag -a %s -m 'version %s'" % (version, version))
    os.system("git push --tags")
    sys.exit()

readme = open('README.rst').read()
history = open('HISTORY.rst').read().replace('.. :changelog:', '')

setup(
    name='quantum-kalman-magnetometry',
    version=version,
    description="""Kalman-filter field estimation from a continuously measured spin ensemble""",
    long_description=readme + '\n\n' + history,
    author='quantum-kalman-magnetometry developers',
    packages=[
        'kalman_magnetometry',
    ],
    package_data={'kalman_magnetometry': ['presets/*.cfg']},
    include_package_data=True,
    install_requires=['numpy>=1.17', 'scipy>=1.4', 'python-decouple'],
    python_requires='>=3.7',
    entry_points={
        'console_scripts': [
            'qkf-magnetometry = kalman_magnetometry.cli:main',
        ],
    },
    license="MIT",
    zip_safe=False,
    keywords='kalman-filter magnetometry spin-squeezing quantum-trajectories',
    classifiers=[
        'Development Status :: 3 - Alpha',
        'Intended Audience :: Science/Research',
        'License :: OSI Approved :: MIT License',
        'Natural Language :: English',
        'Programming Language :: Python :: 3',
        'Programming Language :: Python :: 3.7',
        'Programming Language :: Python :: 3.8',
        'Programming Language :: Python :: 3.9',
        'Programming Language :: Python :: 3.10',
        'Topic :: Scientific/Engineering :: Physics',
    ],
)
