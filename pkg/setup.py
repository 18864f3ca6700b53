"""Build script for the optional compiled kernels.

The Cython extension is optional: if the compiler toolchain or Cython is
missing, the package installs without it and falls back to the numpy
kernels at import time.
"""
import os

from setuptools import setup

ext_modules = []
if os.environ.get("FEDWMSAM_NO_EXT") != "1":
    try:
        import numpy
        from Cython.Build import cythonize
        from setuptools import Extension

        ext_modules = cythonize(
            [
                Extension(
                    "fedwmsam._kernels._ckernels",
                    ["src/fedwmsam/_kernels/_ckernels.pyx"],
                    include_dirs=[numpy.get_include()],
                    extra_compile_args=["-O3", "-ffp-contract=off"],
                    define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
                )
            ],
            compiler_directives={"language_level": "3"},
        )
    except ImportError:
        ext_modules = []

setup(ext_modules=ext_modules)
