import os

import numpy as np
from setuptools import Extension, setup

# OPWATT_NO_EXT=1 skips the compiled SMO core; the package then runs on
# the pure-Python solver.
ext_modules = []
if not os.environ.get("OPWATT_NO_EXT"):
    from Cython.Build import cythonize

    ext_modules = cythonize(
        [
            Extension(
                "opwatt.regress._smo",
                ["src/opwatt/regress/_smo.pyx"],
                include_dirs=[np.get_include()],
                define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
                extra_compile_args=["-O3"],
            )
        ],
        compiler_directives={"language_level": "3"},
    )

setup(ext_modules=ext_modules)
