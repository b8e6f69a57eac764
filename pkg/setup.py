"""Build script for the optional compiled QP kernel.

The extension is optional: if Cython or a C compiler is missing the
package installs anyway and falls back to the pure-Python kernel.
"""
from setuptools import setup
from setuptools.command.build_ext import build_ext

try:
    import numpy
    from Cython.Build import cythonize
    from setuptools import Extension
except ImportError:  # pragma: no cover - depends on build environment
    ext_modules = []
else:
    ext_modules = cythonize(
        [
            Extension(
                "prsmpc._core._qpcore",
                ["src/prsmpc/_core/_qpcore.pyx"],
                include_dirs=[numpy.get_include()],
                define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
                extra_compile_args=["-O3"],
            )
        ],
        compiler_directives=dict(language_level="3", boundscheck=False, wraparound=False),
    )


class OptionalBuildExt(build_ext):
    def run(self):
        try:
            super().run()
        except Exception as exc:  # pragma: no cover
            print(f"warning: compiled kernel not built ({exc}); using pure-Python fallback")

    def build_extension(self, ext):
        try:
            super().build_extension(ext)
        except Exception as exc:  # pragma: no cover
            print(f"warning: failed to build {ext.name} ({exc}); using pure-Python fallback")


setup(ext_modules=ext_modules, cmdclass={"build_ext": OptionalBuildExt})
