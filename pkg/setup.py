"""Build script for the optional compiled kernel core.

The package is pure Python plus one Cython extension holding the im2col /
col2im hot loops. The extension is marked optional: if it fails to build or
import, stpl falls back to the numpy stride-tricks implementation with
identical semantics.
"""

import numpy
from Cython.Build import cythonize
from setuptools import Extension, setup

extensions = [
    Extension(
        "stpl._kernels._core",
        ["src/stpl/_kernels/_core.pyx"],
        include_dirs=[numpy.get_include()],
        define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
        optional=True,
    )
]

setup(ext_modules=cythonize(extensions, language_level=3))
