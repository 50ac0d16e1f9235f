"""Build script for the optional compiled kernel extension.

The package works without the extension (selm.backend falls back to the
NumPy kernels); building it just makes the hot inner loops faster.
"""

from setuptools import Extension, setup


def extensions():
    try:
        from Cython.Build import cythonize
        import numpy as np
    except ImportError:
        return []
    ext = Extension(
        "selm._kernels_c",
        ["src/selm/_kernels_c.pyx"],
        include_dirs=[np.get_include()],
        extra_compile_args=["-O3"],
        define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
    )
    return cythonize([ext], compiler_directives={"language_level": "3"})


setup(ext_modules=extensions())
