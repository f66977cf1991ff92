"""Build script for the optional Cython kernels.

The package works without the compiled module: ``plaqueseg.kernels`` falls
back to numpy/pure-Python implementations when ``plaqueseg._ckernels`` is
missing.
"""
import os

from setuptools import setup

ext_modules = []
if os.environ.get("PLAQUESEG_NO_EXT") != "1":
    try:
        import numpy as np
        from Cython.Build import cythonize
        from setuptools import Extension
    except ImportError:
        pass
    else:
        ext_modules = cythonize(
            [
                Extension(
                    "plaqueseg._ckernels",
                    ["src/plaqueseg/_ckernels.pyx"],
                    include_dirs=[np.get_include()],
                    extra_compile_args=["-O3"],
                    define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
                )
            ],
            compiler_directives={
                "language_level": "3",
                "boundscheck": False,
                "wraparound": False,
                "cdivision": True,
                "initializedcheck": False,
            },
        )

setup(ext_modules=ext_modules)
