import os

import numpy as np
from setuptools import setup

ext_modules = []
if os.environ.get("SUPERRES_NO_EXT", "") != "1":
    try:
        from Cython.Build import cythonize
        ext_modules = cythonize(
            ["src/superres/_kernels.pyx"],
            compiler_directives={"language_level": "3"},
            quiet=True,
        )
        for ext in ext_modules:
            ext.include_dirs.append(np.get_include())
            ext.define_macros.append(("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION"))
    except ImportError:
        ext_modules = []

setup(ext_modules=ext_modules)
