"""Build script: compiles the optional Cython event-loop core.

If Cython or a C compiler is unavailable the package installs anyway and
falls back to the pure numpy kernels at import time.
"""

import warnings

from setuptools import Extension, setup
from setuptools.command.build_ext import build_ext


class optional_build_ext(build_ext):
    """Build the extension if possible, otherwise install pure-Python."""

    def run(self):
        try:
            super().run()
        except Exception as exc:  # compiler missing, etc.
            warnings.warn(f"compiled kernels skipped: {exc}")

    def build_extension(self, ext):
        try:
            super().build_extension(ext)
        except Exception as exc:
            warnings.warn(f"compiled kernels skipped ({ext.name}): {exc}")


def extensions():
    try:
        import numpy
        from Cython.Build import cythonize
    except Exception as exc:
        warnings.warn(f"compiled kernels skipped: {exc}")
        return []
    try:
        return cythonize(
            [
                Extension(
                    "bdmf._kernels._core",
                    ["src/bdmf/_kernels/_core.pyx"],
                    include_dirs=[numpy.get_include()],
                    define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
                    extra_compile_args=["-O3"],
                )
            ],
            language_level=3,
        )
    except Exception as exc:
        warnings.warn(f"compiled kernels skipped: {exc}")
        return []


setup(ext_modules=extensions(), cmdclass={"build_ext": optional_build_ext})
