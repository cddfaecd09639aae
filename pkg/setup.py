"""Build script: compiles the CTC lattice kernel extension when Cython is available.

The package works without the extension (a pure-numpy fallback is selected at
import time), so a missing compiler or Cython only costs speed, not function.
"""

from setuptools import Extension, setup

try:
    import numpy
    from Cython.Build import cythonize

    ext_modules = cythonize(
        [
            Extension(
                "ctcmt._ctclat",
                ["src/ctcmt/_ctclat.pyx"],
                include_dirs=[numpy.get_include()],
                define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
            )
        ],
        language_level=3,
    )
except ImportError:
    ext_modules = []

setup(ext_modules=ext_modules)
