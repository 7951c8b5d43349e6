"""Optional compiled-kernel build.

The package works without the extension (a numpy fallback is selected at
import time); building it just makes the dual-solver inner loop and the
CuSum crossing scans faster. Any build failure is non-fatal.
"""
import sys

from setuptools import setup

ext_modules = []
try:
    import numpy
    from Cython.Build import cythonize
    from setuptools.extension import Extension

    ext_modules = cythonize(
        [
            Extension(
                "drcusum.kernels._core",
                ["src/drcusum/kernels/_core.pyx"],
                include_dirs=[numpy.get_include()],
                extra_compile_args=["-O3"],
                define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
            )
        ],
        language_level=3,
    )
except ImportError as exc:
    sys.stderr.write(f"cython/numpy unavailable ({exc}); building pure-python only\n")

setup(ext_modules=ext_modules)
