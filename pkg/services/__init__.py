"""
Services package for fraclab
Numerical services: interpolation bounds, free kernels, grid operators,
operator norms, Davies-Gaffney checks, verification suites and reports
"""
