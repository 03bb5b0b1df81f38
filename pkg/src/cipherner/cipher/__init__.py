from .b64 import Base64Error, base64_decode, base64_encode
from .classical import (CJK, UPPER_ASCII, Alphabet, CipherError, NonInvertibleA, OutOfAlphabet,
                        affine_decrypt, affine_encrypt, shift_decrypt, shift_encrypt)
from .codebook import (BundleInvalid, CipherScheme, Codebook, CollisionDetected, EncryptedBundle,
                       FingerprintMismatch, SchemeSyntaxError, UnknownCiphertext, UnknownToken,
                       build_codebook, decrypt_bundle, encrypt_corpus, encrypt_tokens,
                       load_codebook, loads_codebook, parse_scheme)
from .digests import MD5, SHA256, md5_digest, md5_hex, sha256_digest, sha256_hex
