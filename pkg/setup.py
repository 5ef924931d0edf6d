import os

from setuptools import setup

ext_modules = []
if not os.environ.get("SIMBRIDGE_NO_EXT"):
    try:
        import numpy as np
        from Cython.Build import cythonize
        from setuptools import Extension

        ext_modules = cythonize(
            [Extension(
                "simbridge.kernels._ckernels",
                ["src/simbridge/kernels/_ckernels.pyx"],
                include_dirs=[np.get_include()],
                define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
                # no FMA contraction: results must match the numpy backend bit for bit
                extra_compile_args=["-O2", "-ffp-contract=off"],
                optional=True,
            )],
            compiler_directives={"language_level": "3"},
        )
    except ImportError:
        ext_modules = []

setup(ext_modules=ext_modules)
