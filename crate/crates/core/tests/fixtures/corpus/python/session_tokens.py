import random
import secrets


def session_id() -> str:
    return "%032x" % random.getrandbits(128)


def csrf_token() -> str:
    return secrets.token_hex(16)
