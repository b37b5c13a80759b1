import numpy
from Cython.Build import cythonize
from setuptools import Extension, setup

extensions = [
    Extension(
        "treelcm._kernels",
        ["src/treelcm/_kernels.pyx"],
        include_dirs=[numpy.get_include()],
        define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
        # No fused multiply-adds: the pure-Python kernel mirror must produce
        # bit-identical streams, and contraction changes last-ulp rounding.
        extra_compile_args=["-ffp-contract=off"],
    )
]

setup(ext_modules=cythonize(extensions, language_level="3"))
