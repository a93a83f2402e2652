import os

import numpy as np
from setuptools import Extension, setup

try:
    from Cython.Build import cythonize
except ImportError:  # source build without Cython: the numpy fallback is used
    cythonize = None

# -ffp-contract=off: no fused multiply-add, so the compiled kernel rounds
# exactly like the numpy fallback.
compile_args = ["-O3", "-ffp-contract=off", "-fno-fast-math"]

ext_modules = []
if cythonize is not None and not os.environ.get("MSDEM_NO_EXT"):
    ext_modules = cythonize(
        [
            Extension(
                "msdem._kernels",
                ["src/msdem/_kernels.pyx"],
                include_dirs=[np.get_include()],
                define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
                extra_compile_args=compile_args,
            )
        ],
        compiler_directives={"language_level": "3"},
    )

setup(ext_modules=ext_modules)
