import numpy
from setuptools import Extension, setup
from setuptools.command.build_ext import build_ext


class optional_build_ext(build_ext):
    """Build the Cython kernels if possible; the package falls back to the
    pure-numpy kernels at import time when the extension is missing."""

    def run(self):
        try:
            super().run()
        except Exception as exc:  # no compiler, etc.
            print(f"WARNING: skipping compiled kernels ({exc}); "
                  "lsphase will use the numpy fallback")

    def build_extension(self, ext):
        try:
            super().build_extension(ext)
        except Exception as exc:
            print(f"WARNING: could not build {ext.name} ({exc}); "
                  "lsphase will use the numpy fallback")


try:
    from Cython.Build import cythonize
    extensions = cythonize(
        [Extension(
            "lsphase._kernels_cy",
            ["src/lsphase/_kernels_cy.pyx"],
            extra_compile_args=["-O3"],
            include_dirs=[numpy.get_include()],
        )],
        language_level=3,
    )
except ImportError:
    extensions = []

setup(ext_modules=extensions, cmdclass={"build_ext": optional_build_ext})
