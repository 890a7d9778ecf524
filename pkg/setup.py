"""Build the optional Cython kernels.

The package works without them; ``epolab.kernels`` falls back to the
pure-Python implementations when the extension is missing.
"""
import os

from setuptools import setup

ext_modules = []
if os.environ.get("EPOLAB_NO_EXT") != "1":
    try:
        import numpy as np
        from Cython.Build import cythonize
        from setuptools import Extension

        ext_modules = cythonize(
            [
                Extension(
                    "epolab._kernels",
                    ["src/epolab/_kernels.pyx"],
                    include_dirs=[np.get_include()],
                    # no FMA contraction: keeps results bit-identical to the Python fallback
                    extra_compile_args=["-O3", "-ffp-contract=off"],
                )
            ],
            compiler_directives={"language_level": "3"},
        )
    except ImportError:
        ext_modules = []

setup(ext_modules=ext_modules)
