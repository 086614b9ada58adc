"""Keccak-256 (the pre-standard SHA-3 variant used by Ethereum)."""

try:  # C extension, roughly 8x faster per call than pycryptodome
    from sha3 import keccak_256 as _keccak_256

    def keccak256(data: bytes) -> bytes:
        return _keccak_256(data).digest()

except ImportError:  # pragma: no cover - exercised only without safe-pysha3
    from Crypto.Hash import keccak as _keccak

    def keccak256(data: bytes) -> bytes:
        return _keccak.new(digest_bits=256, data=data).digest()


ZERO32 = bytes(32)
