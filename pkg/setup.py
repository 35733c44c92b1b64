import numpy
from setuptools import Extension, setup
from Cython.Build import cythonize

setup(
    ext_modules=cythonize(
        [
            Extension(
                "wfpg._kernels",
                ["src/wfpg/_kernels.pyx"],
                extra_compile_args=["-O3", "-march=native", "-fopenmp"],
                extra_link_args=["-fopenmp"],
                include_dirs=[numpy.get_include()],
            )
        ],
        language_level=3,
    )
)
