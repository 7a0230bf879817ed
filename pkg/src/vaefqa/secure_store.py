"""Envelope-encrypted storage of selected crops.

Each crop is encrypted with a fresh AES-256-GCM key; that key is wrapped
with RSA-OAEP (SHA-256) to the authority's public key.  The capture side
holds only the public key and therefore cannot read what it stored.  Clear
metadata, the wrapped key and the nonce are authenticated as GCM associated
data, so altering any of them makes :func:`open_record` fail.

Record layout (little-endian), documented in ``docs/record_format.md``::

    magic b"VFQS" | u16 version | u32 meta_len | meta (JSON)
    | u16 wk_len | wrapped_key | nonce (12) | u32 ct_len | ciphertext | tag (16)
"""

import hashlib
import io
import json
import os
import secrets
import struct
import tempfile
import threading
import time
import uuid
from dataclasses import dataclass

import numpy as np
from cryptography.exceptions import InvalidTag
from cryptography.hazmat.primitives import hashes, serialization
from cryptography.hazmat.primitives.asymmetric import padding, rsa
from cryptography.hazmat.primitives.ciphers.aead import AESGCM

MAGIC = b"VFQS"
VERSION = 1
NONCE_LEN = 12
TAG_LEN = 16
_PREFIX = struct.Struct("<4sHI")
_WK_LEN = struct.Struct("<H")
_CT_LEN = struct.Struct("<I")
_FILE_LEN = struct.Struct("<Q")
_CROP_HEAD = struct.Struct("<4sII")
_CROP_MAGIC = b"CRP8"
_OAEP = padding.OAEP(mgf=padding.MGF1(algorithm=hashes.SHA256()), algorithm=hashes.SHA256(), label=None)


class StoreError(Exception):
    pass


class RecordFormatError(StoreError):
    pass


class WrongKeyError(StoreError):
    pass


class IntegrityError(StoreError):
    pass


class AuthorityPublicKey:
    """Public half of the authority keypair: can seal, never open."""

    def __init__(self, key):
        if not isinstance(key, rsa.RSAPublicKey):
            raise TypeError("expected an RSA public key")
        self._key = key

    @property
    def fingerprint(self):
        der = self._key.public_bytes(
            serialization.Encoding.DER, serialization.PublicFormat.SubjectPublicKeyInfo
        )
        return hashlib.sha256(der).hexdigest()

    def to_pem(self):
        return self._key.public_bytes(
            serialization.Encoding.PEM, serialization.PublicFormat.SubjectPublicKeyInfo
        )

    @classmethod
    def from_pem(cls, data):
        return cls(serialization.load_pem_public_key(data))

    def wrap(self, dek):
        return self._key.encrypt(dek, _OAEP)

    def __eq__(self, other):
        return isinstance(other, AuthorityPublicKey) and self.fingerprint == other.fingerprint


class AuthorityPrivateKey:
    """Private half, held by the authority only."""

    def __init__(self, key):
        if not isinstance(key, rsa.RSAPrivateKey):
            raise TypeError("expected an RSA private key")
        self._key = key

    def public(self):
        return AuthorityPublicKey(self._key.public_key())

    def to_pem(self, password=None):
        enc = (serialization.BestAvailableEncryption(password) if password
               else serialization.NoEncryption())
        return self._key.private_bytes(
            serialization.Encoding.PEM, serialization.PrivateFormat.PKCS8, enc
        )

    @classmethod
    def from_pem(cls, data, password=None):
        return cls(serialization.load_pem_private_key(data, password=password))

    def unwrap(self, wrapped):
        return self._key.decrypt(wrapped, _OAEP)


def keygen(key_size=3072):
    """Fresh authority keypair ``(public, private)``."""
    priv = rsa.generate_private_key(public_exponent=65537, key_size=key_size)
    p = AuthorityPrivateKey(priv)
    return p.public(), p


def write_keypair(public, private, directory, name="authority", password=None):
    """Write ``<name>.pub.pem`` and ``<name>.key.pem`` (mode 0600)."""
    os.makedirs(directory, exist_ok=True)
    pub_path = os.path.join(directory, name + ".pub.pem")
    key_path = os.path.join(directory, name + ".key.pem")
    with io.open(pub_path, "wb") as fh:
        fh.write(public.to_pem())
    fd = os.open(key_path, os.O_WRONLY | os.O_CREAT | os.O_TRUNC, 0o600)
    with os.fdopen(fd, "wb") as fh:
        fh.write(private.to_pem(password))
    os.chmod(key_path, 0o600)
    return pub_path, key_path


def load_public_key(path):
    with io.open(path, "rb") as fh:
        data = fh.read()
    try:
        return AuthorityPublicKey.from_pem(data)
    except (ValueError, TypeError) as exc:
        raise WrongKeyError(f"{path} is not an authority public key: {exc}") from exc


def load_private_key(path, password=None):
    with io.open(path, "rb") as fh:
        data = fh.read()
    try:
        return AuthorityPrivateKey.from_pem(data, password)
    except (ValueError, TypeError) as exc:
        raise WrongKeyError(f"{path} is not an authority private key: {exc}") from exc


def serialize_crop(crop):
    a = np.ascontiguousarray(crop, dtype="<f8")
    if a.ndim != 2:
        raise ValueError("crop must be a 2-D image")
    return _CROP_HEAD.pack(_CROP_MAGIC, a.shape[0], a.shape[1]) + a.tobytes()


def deserialize_crop(data):
    magic, h, w = _CROP_HEAD.unpack_from(data)
    if magic != _CROP_MAGIC or len(data) != _CROP_HEAD.size + 8 * h * w:
        raise IntegrityError("decrypted payload is not a crop")
    return np.frombuffer(data, dtype="<f8", offset=_CROP_HEAD.size).reshape(h, w).astype(np.float64)


@dataclass(frozen=True)
class SealedCrop:
    record_id: str
    created_at: float
    metadata: dict
    wrapped_key: bytes
    nonce: bytes
    ciphertext: bytes
    tag: bytes
    meta_bytes: bytes

    def associated_data(self):
        return _associated_data(self.meta_bytes, self.wrapped_key, self.nonce, len(self.ciphertext))

    def to_bytes(self):
        return self.associated_data() + self.ciphertext + self.tag

    @classmethod
    def from_bytes(cls, data):
        data = bytes(data)
        try:
            magic, version, meta_len = _PREFIX.unpack_from(data, 0)
            if magic != MAGIC:
                raise RecordFormatError("not a sealed record (bad magic)")
            if version != VERSION:
                raise RecordFormatError(f"unsupported record version {version}")
            pos = _PREFIX.size
            meta_bytes = data[pos:pos + meta_len]
            pos += meta_len
            (wk_len,) = _WK_LEN.unpack_from(data, pos)
            pos += _WK_LEN.size
            wrapped = data[pos:pos + wk_len]
            pos += wk_len
            nonce = data[pos:pos + NONCE_LEN]
            pos += NONCE_LEN
            (ct_len,) = _CT_LEN.unpack_from(data, pos)
            pos += _CT_LEN.size
            ct = data[pos:pos + ct_len]
            pos += ct_len
            tag = data[pos:pos + TAG_LEN]
            pos += TAG_LEN
        except struct.error as exc:
            raise RecordFormatError(f"truncated record: {exc}") from exc
        if len(meta_bytes) != meta_len or len(wrapped) != wk_len or len(nonce) != NONCE_LEN \
                or len(ct) != ct_len or len(tag) != TAG_LEN:
            raise RecordFormatError("truncated record")
        if pos != len(data):
            raise RecordFormatError("trailing bytes after record")
        try:
            meta = json.loads(meta_bytes.decode("utf-8"))
            record_id, created_at = meta["record_id"], float(meta["created_at"])
        except (UnicodeDecodeError, ValueError, KeyError, TypeError) as exc:
            raise RecordFormatError(f"malformed metadata block: {exc}") from exc
        return cls(record_id, created_at, meta, wrapped, nonce, ct, tag, meta_bytes)


def _associated_data(meta_bytes, wrapped_key, nonce, ct_len):
    return b"".join([
        _PREFIX.pack(MAGIC, VERSION, len(meta_bytes)),
        meta_bytes,
        _WK_LEN.pack(len(wrapped_key)),
        wrapped_key,
        nonce,
        _CT_LEN.pack(ct_len),
    ])


def _canonical_json(obj):
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), allow_nan=False).encode("utf-8")


def seal(crop, metadata, authority_public, created_at=None, record_id=None):
    """Encrypt ``crop`` for the holder of the matching private key."""
    if not isinstance(authority_public, AuthorityPublicKey):
        raise TypeError("seal requires an AuthorityPublicKey")
    plaintext = serialize_crop(crop)
    meta = dict(metadata or {})
    meta["record_id"] = record_id or uuid.uuid4().hex
    meta["created_at"] = float(time.time() if created_at is None else created_at)
    meta["key_fingerprint"] = authority_public.fingerprint
    meta_bytes = _canonical_json(meta)
    dek = AESGCM.generate_key(bit_length=256)
    nonce = secrets.token_bytes(NONCE_LEN)
    wrapped = authority_public.wrap(dek)
    # GCM ciphertext is exactly as long as the plaintext.
    aad = _associated_data(meta_bytes, wrapped, nonce, len(plaintext))
    out = AESGCM(dek).encrypt(nonce, plaintext, aad)
    return SealedCrop(meta["record_id"], meta["created_at"], meta, wrapped, nonce,
                      out[:-TAG_LEN], out[-TAG_LEN:], meta_bytes)


def open_record(record, authority_private):
    """Authenticated decryption; returns ``(crop, metadata)``."""
    if not isinstance(authority_private, AuthorityPrivateKey):
        raise TypeError("opening a record requires the AuthorityPrivateKey")
    if isinstance(record, (bytes, bytearray)):
        record = SealedCrop.from_bytes(record)
    if record.metadata.get("key_fingerprint") != authority_private.public().fingerprint:
        raise WrongKeyError("record was sealed to a different authority key")
    try:
        dek = authority_private.unwrap(record.wrapped_key)
    except ValueError as exc:
        raise IntegrityError("wrapped key failed to decrypt") from exc
    try:
        plaintext = AESGCM(dek).decrypt(
            record.nonce, record.ciphertext + record.tag, record.associated_data()
        )
    except (InvalidTag, ValueError) as exc:
        raise IntegrityError("record failed authentication") from exc
    return deserialize_crop(plaintext), dict(record.metadata)


class SecureStore:
    """Directory of length-prefixed record files plus an append-only index.

    Writes go through one owner (guarded by a lock); reads are lock-free.
    """

    INDEX = "index.jsonl"

    def __init__(self, directory, clock=time.time):
        self.directory = directory
        self.clock = clock
        self._lock = threading.Lock()
        os.makedirs(directory, exist_ok=True)

    def _path(self, record_id):
        if not record_id or any(c in record_id for c in "/\\."):
            raise RecordFormatError(f"invalid record id {record_id!r}")
        return os.path.join(self.directory, record_id + ".rec")

    def put(self, record):
        data = record.to_bytes()
        path = self._path(record.record_id)
        with self._lock:
            fd, tmp = tempfile.mkstemp(dir=self.directory, suffix=".tmp")
            with os.fdopen(fd, "wb") as fh:
                fh.write(_FILE_LEN.pack(len(data)))
                fh.write(data)
                fh.flush()
                os.fsync(fh.fileno())
            os.replace(tmp, path)
            with io.open(os.path.join(self.directory, self.INDEX), "a", encoding="utf-8") as fh:
                fh.write(json.dumps({"record_id": record.record_id,
                                     "created_at": record.created_at}) + "\n")
                fh.flush()
                os.fsync(fh.fileno())
        return record.record_id

    def seal_and_put(self, crop, metadata, authority_public):
        rec = seal(crop, metadata, authority_public, created_at=self.clock())
        self.put(rec)
        return rec

    def index(self):
        """``[(record_id, created_at)]`` for records present on disk."""
        path = os.path.join(self.directory, self.INDEX)
        if not os.path.exists(path):
            return []
        seen = {}
        with io.open(path, encoding="utf-8") as fh:
            for line in fh:
                line = line.strip()
                if not line:
                    continue
                try:
                    e = json.loads(line)
                except ValueError:
                    continue  # torn final line after a crash
                seen[e["record_id"]] = float(e["created_at"])
        return [(rid, ts) for rid, ts in seen.items() if os.path.exists(self._path(rid))]

    def __len__(self):
        return len(self.index())

    def get(self, record_id):
        try:
            with io.open(self._path(record_id), "rb") as fh:
                raw = fh.read()
        except FileNotFoundError:
            raise KeyError(record_id) from None
        if len(raw) < _FILE_LEN.size:
            raise RecordFormatError("record file truncated")
        (n,) = _FILE_LEN.unpack_from(raw)
        if len(raw) != _FILE_LEN.size + n:
            raise RecordFormatError("record file length prefix does not match contents")
        return SealedCrop.from_bytes(raw[_FILE_LEN.size:])

    def records(self):
        return [self.get(rid) for rid, _ in self.index()]

    def purge(self, ttl, now=None):
        """Delete records whose age ``now - created_at`` is at least ``ttl``; return how many."""
        if ttl < 0:
            raise ValueError("ttl must be >= 0")
        cutoff = (self.clock() if now is None else now) - ttl
        with self._lock:
            entries = self.index()
            doomed = [rid for rid, ts in entries if ts <= cutoff]
            for rid in doomed:
                os.remove(self._path(rid))
            keep = [(rid, ts) for rid, ts in entries if ts > cutoff]
            fd, tmp = tempfile.mkstemp(dir=self.directory, suffix=".tmp")
            with os.fdopen(fd, "w", encoding="utf-8") as fh:
                for rid, ts in keep:
                    fh.write(json.dumps({"record_id": rid, "created_at": ts}) + "\n")
                fh.flush()
                os.fsync(fh.fileno())
            os.replace(tmp, os.path.join(self.directory, self.INDEX))
        return len(doomed)


def purge(store, ttl, now=None):
    return store.purge(ttl, now)
