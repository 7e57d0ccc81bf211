from setuptools import setup, Extension

try:
    from Cython.Build import cythonize
    import numpy as np
except ImportError:
    # no Cython/numpy at build time: install the pure-Python fallback only
    ext_modules = []
else:
    ext_modules = cythonize(
        [Extension("floodlag._ckernels", ["src/floodlag/_ckernels.pyx"],
                   include_dirs=[np.get_include()],
                   define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")])],
        compiler_directives={"language_level": "3"},
    )

setup(ext_modules=ext_modules)
