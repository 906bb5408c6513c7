"""Builds the optional Cython kernel; the package works without it."""

import os
import sys

from setuptools import setup
from setuptools.command.build_ext import build_ext


class OptionalBuildExt(build_ext):
    def run(self):
        try:
            super().run()
        except Exception as exc:  # no compiler or no Cython
            print(f"warning: compiled kernels not built ({exc}); using the NumPy fallback", file=sys.stderr)

    def build_extension(self, ext):
        try:
            super().build_extension(ext)
        except Exception as exc:
            print(f"warning: failed to build {ext.name} ({exc}); using the NumPy fallback", file=sys.stderr)


def extensions():
    if os.environ.get("JUMPBRIDGE_NO_EXT") == "1":
        return []
    try:
        from Cython.Build import cythonize
    except ImportError:
        return []
    from setuptools import Extension
    # no FMA contraction: the fallback must reproduce every rounding step
    args = ["-O3", "-ffp-contract=off", "-fno-fast-math"]
    ext = Extension("jumpbridge._kernels", ["src/jumpbridge/_kernels.pyx"], extra_compile_args=args)
    return cythonize([ext], language_level=3)


setup(ext_modules=extensions(), cmdclass={"build_ext": OptionalBuildExt})
