from Crypto.Cipher import DES

KEY = b"8bytekey"


def encrypt(block: bytes) -> bytes:
    return DES.new(KEY, DES.MODE_ECB).encrypt(block)
