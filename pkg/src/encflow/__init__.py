"""Encryption-type inference and partitioning for LSQL programs."""
