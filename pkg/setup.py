"""Build script for the optional Cython kernel extension.

The package is fully functional without the extension; if Cython or a C
compiler is unavailable the numpy fallback kernels are used instead.
"""
import os

from setuptools import setup

ext_modules = []
if os.environ.get("FPCONVLSTM_NO_EXT") != "1":
    try:
        import numpy as np
        from Cython.Build import cythonize
        from setuptools import Extension

        ext_modules = cythonize(
            [
                Extension(
                    "fpconvlstm._kernels",
                    ["src/fpconvlstm/_kernels.pyx"],
                    include_dirs=[np.get_include()],
                    extra_compile_args=["-O3"],
                    define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
                )
            ],
            compiler_directives={"language_level": "3"},
        )
    except ImportError:
        ext_modules = []

setup(ext_modules=ext_modules)
