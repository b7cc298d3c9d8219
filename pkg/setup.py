"""Build script for the optional compiled kernel core.

The package works without the extension (a numpy fallback is selected at
import time); building it just makes the sampler inner loops faster.
"""

from setuptools import Extension, setup

ext_modules = []
try:
    import numpy
    from Cython.Build import cythonize

    ext_modules = cythonize(
        [
            Extension(
                "pinnuq.kernels._core",
                ["src/pinnuq/kernels/_core.pyx"],
                include_dirs=[numpy.get_include()],
                extra_compile_args=["-O3", "-march=native", "-funroll-loops"],
                define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
            )
        ],
        language_level=3,
    )
except ImportError:
    # No Cython available: install the pure-Python package only.
    pass

setup(ext_modules=ext_modules)
