from setuptools import Extension, setup

import numpy as np

try:
    from Cython.Build import cythonize
except ImportError:
    cythonize = None

extensions = [
    Extension(
        "mentionlink._kernels._core",
        ["src/mentionlink/_kernels/_core.pyx"],
        include_dirs=[np.get_include()],
        # -march=native is safe here: the extension is always compiled from
        # source on the machine that runs it (no binary wheels are shipped).
        extra_compile_args=["-O3", "-march=native", "-funroll-loops"],
        define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
    )
]

setup(
    ext_modules=cythonize(extensions, language_level=3) if cythonize else [],
)
