from cryptography.hazmat.primitives import hashes

ALG = hashes.SHA256()
