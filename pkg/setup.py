"""Builds the compiled mutex-watershed kernel.

The extension is optional: if Cython or a C++ toolchain is missing the
package installs anyway and falls back to the pure-Python kernel at import.
"""

from setuptools import Extension, setup

ext_modules = []
try:
    import numpy
    from Cython.Build import cythonize

    ext_modules = cythonize(
        [
            Extension(
                "cellseg._mwscy",
                ["src/cellseg/_mwscy.pyx"],
                include_dirs=[numpy.get_include()],
                language="c++",
                extra_compile_args=["-O2", "-std=c++11"],
            )
        ],
        language_level=3,
    )
except ImportError:
    pass

setup(ext_modules=ext_modules)
