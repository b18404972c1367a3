import os

import numpy as np
from Cython.Build import cythonize
from setuptools import Extension, setup

numpy_random_lib = os.path.join(os.path.dirname(np.__file__), "random", "lib")

# No fast-math and no FMA contraction: the compiled kernel must reproduce the
# pure-Python fallback bit for bit.
ext = Extension(
    "collusim._ckernel",
    ["src/collusim/_ckernel.pyx"],
    include_dirs=[np.get_include()],
    library_dirs=[numpy_random_lib],
    libraries=["npyrandom", "m"],
    define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
    extra_compile_args=["-O2", "-ffp-contract=off", "-fno-fast-math"],
)

setup(ext_modules=cythonize([ext], compiler_directives={"language_level": 3}))
