"""A setuptools based setup module.
See:
https://packaging.python.org/en/latest/distributing.html
https://github.com/pypa/sampleproject
"""

# Always prefer setuptools over distutils
from setuptools import setup, find_packages
from os import path
from io import open

here = path.abspath(path.dirname(__file__))

# Get the long description from the README file
with open(path.join(here, 'README.md'), encoding='utf-8') as f:
    long_description = f.read()

requirements = [
    'numpy>=1.22',
    'scipy>=1.10',
    'pandas',
    'xarray',
    'joblib',
    'tqdm',
    'scikit-learn',
    'matplotlib',
    'seaborn',
]
setup_requirements = []
test_requirements = ['pytest']

setup(
    name='dc_bdl_tools',
    version=0.1,
    description="Bayesian deep learning with discrete-continuous likelihoods for precipitation downscaling",
    long_description=long_description,
    long_description_content_type='text/markdown',
    packages=find_packages(exclude=["tests", "tests.*"]),
    include_package_data=True,
    install_requires=requirements,
    extras_require={'test': test_requirements},
    entry_points={'console_scripts': ['dc-bdl = dc_bdl_tools.cli:main']},
    zip_safe=False,
    keywords='downscaling precipitation concrete-dropout',
    setup_requires=setup_requirements,
)
