"""Build hook for the optional compiled n-gram kernel.

The extension is marked optional: if Cython or a C compiler is missing the
install still succeeds and the package falls back to the pure-Python kernel
at import time.
"""

from setuptools import Extension, setup

try:
    from Cython.Build import cythonize

    ext_modules = cythonize(
        [
            Extension(
                "capsift._kernels._ngram_cy",
                ["src/capsift/_kernels/_ngram_cy.pyx"],
                optional=True,
            )
        ],
        language_level=3,
    )
except ImportError:
    ext_modules = []

setup(ext_modules=ext_modules)
