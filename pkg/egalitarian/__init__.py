"""Memory-hard proof of work (MTP), memory-hard encryption (MHE) and attacker cost analysis."""

from .argon2m import InvalidParameterError, MBlock, MemoryArray, MemParams, fill_memory
from .merkle import MerkleTree, build_tree, verify_opening
from .mhe import IntegrityError, MalformedContainerError, MheParams, decrypt_file, encrypt_file
from .mtp import MalformedProofError, PowParams, Proof, RejectReason, VerifyResult, deserialize, prove, serialize, verify

__all__ = [
    "InvalidParameterError",
    "MBlock",
    "MemoryArray",
    "MemParams",
    "fill_memory",
    "MerkleTree",
    "build_tree",
    "verify_opening",
    "IntegrityError",
    "MalformedContainerError",
    "MheParams",
    "decrypt_file",
    "encrypt_file",
    "MalformedProofError",
    "PowParams",
    "Proof",
    "RejectReason",
    "VerifyResult",
    "deserialize",
    "prove",
    "serialize",
    "verify",
]
