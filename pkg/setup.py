import os
from setuptools import setup, find_packages

# Utility function to read the README file.
def read(fname):
    return open(os.path.join(os.path.dirname(__file__), fname)).read()

setup(
    name = 'ctxforge',
    version = '0.1.0',
    author = 'the ctxforge developers',
    description = ('Train versioned agent contexts by beam search over '
                   'context edits'),
    license = 'GPLv3',
    keywords = 'agents llm context optimization beam-search',
    packages = find_packages(),
    python_requires = '>=3.9',
    include_package_data=True,
    package_data = {'ctxforge': ['templates/*.j2', 'fixtures/*/*']},
    long_description = read('README.rst'),
    install_requires = [
        'numpy',
        'scipy',
        'pandas',
        'jinja2',
        'requests',
        'sacrebleu',
        'beautifulsoup4',
        'parameterized',
    ],
    entry_points = {
        'console_scripts': ['ctxforge = ctxforge.cli:main'],
    },
    test_suite = 'ctxforge.test'
)
