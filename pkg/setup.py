"""Build script: compiles the fast-iterative eikonal kernel when a C toolchain
is available. Installation falls back to the pure-Python kernel otherwise."""

import sys

import numpy
from setuptools import Extension, setup
from setuptools.command.build_ext import build_ext


class optional_build_ext(build_ext):
    """Build the extension if possible; warn and continue otherwise."""

    def run(self):
        try:
            super().run()
        except Exception as exc:  # compiler missing or broken
            sys.stderr.write(
                "WARNING: could not build the compiled eikonal kernel (%s); "
                "the pure-Python fallback will be used.\n" % exc
            )

    def build_extension(self, ext):
        try:
            super().build_extension(ext)
        except Exception as exc:
            sys.stderr.write(
                "WARNING: skipping extension %s (%s)\n" % (ext.name, exc)
            )


def extensions():
    try:
        from Cython.Build import cythonize
    except ImportError:
        return []
    ext = Extension(
        "purkinje_ecg._fim",
        ["src/purkinje_ecg/_fim.pyx"],
        include_dirs=[numpy.get_include()],
        define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
    )
    return cythonize([ext], language_level="3")


setup(ext_modules=extensions(), cmdclass={"build_ext": optional_build_ext})
