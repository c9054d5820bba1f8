"""Build script: compiles the optional Cython attention kernel.

The package works without the extension (a numpy fallback is selected at
import time); building it just makes training and sampling faster.
"""

import numpy as np
from setuptools import Extension, setup

try:
    from Cython.Build import cythonize
except ImportError:
    ext_modules = []
else:
    ext_modules = cythonize(
        [
            Extension(
                "toyedit.kernels._attn_cy",
                ["src/toyedit/kernels/_attn_cy.pyx"],
                extra_compile_args=["-O3"],
                define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
            )
        ],
        compiler_directives={"language_level": "3"},
    )

setup(ext_modules=ext_modules, include_dirs=[np.get_include()])
