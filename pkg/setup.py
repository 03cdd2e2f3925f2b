"""Build script: compiles the optional conv kernel extension when Cython and a
C compiler are available. The package works without it (numpy fallback)."""

from setuptools import setup
from setuptools.command.build_ext import build_ext


def _extensions():
    try:
        import numpy
        from Cython.Build import cythonize
        from setuptools import Extension
    except ImportError:
        return []
    ext = Extension(
        "growprune.kernels._convcore",
        sources=["src/growprune/kernels/_convcore.pyx"],
        include_dirs=[numpy.get_include()],
        extra_compile_args=["-O3", "-fopenmp"],
        extra_link_args=["-fopenmp"],
        define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
    )
    return cythonize([ext], compiler_directives={"language_level": "3"})


class optional_build_ext(build_ext):
    # a failed extension build must not fail the install
    def run(self):
        try:
            super().run()
        except Exception as exc:
            print(f"conv extension build skipped ({exc}); numpy fallback will be used")

    def build_extension(self, ext):
        try:
            super().build_extension(ext)
        except Exception as exc:
            print(f"conv extension build skipped ({exc}); numpy fallback will be used")


setup(ext_modules=_extensions(), cmdclass={"build_ext": optional_build_ext})
