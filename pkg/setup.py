"""Build script: compiles the optional lattice extension when Cython + a C
compiler are available, and degrades to the pure-Python backend otherwise."""

import os

from setuptools import Extension, setup
from setuptools.command.build_ext import build_ext


class optional_build_ext(build_ext):
    """Build the accelerator if possible; never fail the install over it."""

    def run(self):
        try:
            super().run()
        except Exception as exc:  # missing compiler, broken toolchain, ...
            self._warn(exc)

    def build_extension(self, ext):
        try:
            super().build_extension(ext)
        except Exception as exc:
            self._warn(exc)

    @staticmethod
    def _warn(exc):
        print(f"warning: compiled lattice kernels skipped ({exc}); "
              "falling back to the pure-Python backend")


def extensions():
    if os.environ.get("DESKLM_SKIP_EXT"):
        return []
    try:
        from Cython.Build import cythonize
    except ImportError:
        return []
    ext = Extension(
        "desklm.tokenizer._lattice_cy",
        ["src/desklm/tokenizer/_lattice_cy.pyx"],
    )
    return cythonize([ext], compiler_directives={"language_level": 3})


setup(ext_modules=extensions(), cmdclass={"build_ext": optional_build_ext})
