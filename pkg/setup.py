"""Builds the compiled selective-scan kernel.

The package works without the extension (a numpy fallback is selected at
import time), so a missing compiler only costs speed.
"""

import numpy as np
from setuptools import Extension, setup

try:
    from Cython.Build import cythonize
except ImportError:
    cythonize = None

ext_modules = []
if cythonize is not None:
    # No -ffast-math: the kernel must match the per-step recurrence oracle
    # to 1e-9, which fused/reordered float ops would not guarantee.
    ext_modules = cythonize(
        [
            Extension(
                "anomamba._scan",
                ["src/anomamba/_scan.pyx"],
                include_dirs=[np.get_include()],
                extra_compile_args=["-O3"],
            )
        ],
        language_level=3,
    )

setup(ext_modules=ext_modules)
