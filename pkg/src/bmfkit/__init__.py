"""Boolean matrix factorization with bit-packed kernels."""
