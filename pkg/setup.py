"""Build script: compiles the optional Cython kernel core.

The extension is optional -- if Cython or a C compiler is missing, the
install still succeeds and the package falls back to the pure-numpy
kernels in ``abisens._kernels._fallback``.
"""

from setuptools import Extension, setup

import numpy as np

# -ffp-contract=off keeps the compiled kernels bit-identical to the numpy
# fallback (no FMA contraction of a*b+c patterns).
EXT_ARGS = ["-O3", "-ffp-contract=off"]

try:
    from Cython.Build import cythonize

    extensions = cythonize(
        [
            Extension(
                "abisens._kernels._core",
                sources=["src/abisens/_kernels/_core.pyx"],
                include_dirs=[np.get_include()],
                extra_compile_args=EXT_ARGS,
                optional=True,
            )
        ],
        language_level=3,
    )
except ImportError:
    extensions = []

setup(ext_modules=extensions)
