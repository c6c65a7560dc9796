from setuptools import Extension, setup

try:
    from Cython.Build import cythonize

    ext_modules = cythonize(
        [
            Extension(
                "cdcnet.kernels._native",
                ["src/cdcnet/kernels/_native.pyx"],
                extra_compile_args=["-O3", "-funroll-loops"],
            )
        ],
        language_level=3,
    )
except ImportError:
    # No Cython: the package still works on the NumPy fallback backend.
    ext_modules = []

setup(ext_modules=ext_modules)
