"""Packing and Bowen entropy of fixed-point-free flows via reparametrization balls."""
