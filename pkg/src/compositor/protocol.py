"""Length-prefixed JSON framing for registry and compose traffic.

A frame is a 4-byte big-endian unsigned body length followed by a UTF-8 JSON
body ``{"op", "req_id", "payload"}``.
"""

from __future__ import annotations

import asyncio
import logging
import socket
import struct
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Dict

from pydantic import BaseModel, ConfigDict, Field, StrictInt, ValidationError

from .errors import CompositorError, FrameError
from .serialization import canonical_json, load_json_document, pydantic_parse_error

logger = logging.getLogger(__name__)

HEADER = struct.Struct(">I")
HEADER_SIZE = HEADER.size
DEFAULT_MAX_FRAME_BYTES = 1 << 20


class Op(str, Enum):
    REGISTER = "REGISTER"
    DEREGISTER = "DEREGISTER"
    FIND = "FIND"
    FIND_RESULT = "FIND_RESULT"
    SYNC_PULL = "SYNC_PULL"
    SYNC_STATE = "SYNC_STATE"
    ERROR = "ERROR"
    ACK = "ACK"
    COMPOSE = "COMPOSE"
    COMPOSE_RESULT = "COMPOSE_RESULT"


@dataclass(frozen=True)
class Message:
    op: Op
    req_id: int
    payload: Dict[str, Any] = field(default_factory=dict)

    def reply(self, op: Op, payload: Dict[str, Any]) -> Message:
        return Message(op, self.req_id, payload)


class _MessageDoc(BaseModel):
    model_config = ConfigDict(extra="forbid")

    op: Op
    req_id: StrictInt = Field(ge=0)
    payload: Dict[str, Any]


def encode_body(message: Message) -> bytes:
    return canonical_json(
        {"op": message.op.value, "req_id": message.req_id, "payload": message.payload}
    ).encode("utf-8")


def frame_encode(message: Message, max_bytes: int = DEFAULT_MAX_FRAME_BYTES) -> bytes:
    """Length prefix plus canonical JSON body.

    Raises:
        FrameError: If the body exceeds ``max_bytes``
    """
    body = encode_body(message)
    if len(body) > max_bytes:
        raise FrameError("oversize", length=len(body), max=max_bytes)
    return HEADER.pack(len(body)) + body


def decode_body(body: bytes) -> Message:
    """Parse a frame body.

    Raises:
        ParseError: If the body is not a valid message document
    """
    document = load_json_document(body)
    try:
        doc = _MessageDoc.model_validate(document)
    except ValidationError as e:
        raise pydantic_parse_error(e) from e
    return Message(doc.op, doc.req_id, doc.payload)


def check_length(length: int, max_bytes: int) -> None:
    if length > max_bytes:
        raise FrameError("oversize", length=length, max=max_bytes)


def frame_decode(data: bytes, max_bytes: int = DEFAULT_MAX_FRAME_BYTES) -> Message:
    """Decode exactly one frame.

    Raises:
        FrameError: Truncated header or body, oversize length, or trailing bytes
        ParseError: If the body is not a valid message document
    """
    if len(data) < HEADER_SIZE:
        raise FrameError("truncated", expected=HEADER_SIZE, received=len(data))
    (length,) = HEADER.unpack_from(data)
    check_length(length, max_bytes)
    body = data[HEADER_SIZE:]
    if len(body) < length:
        raise FrameError("truncated", expected=length, received=len(body))
    if len(body) > length:
        raise FrameError("trailing bytes", expected=length, received=len(body))
    return decode_body(body)


async def read_frame(
    reader: asyncio.StreamReader, max_bytes: int = DEFAULT_MAX_FRAME_BYTES
) -> Message | None:
    """Read one frame from a stream.

    Returns:
        The message, or None on a clean end of stream

    Raises:
        FrameError: On a truncated or oversize frame
        ParseError: On an invalid body
    """
    try:
        header = await reader.readexactly(HEADER_SIZE)
    except asyncio.IncompleteReadError as e:
        if not e.partial:
            return None
        raise FrameError(
            "truncated", expected=HEADER_SIZE, received=len(e.partial)
        ) from e
    (length,) = HEADER.unpack(header)
    check_length(length, max_bytes)
    try:
        body = await reader.readexactly(length)
    except asyncio.IncompleteReadError as e:
        raise FrameError("truncated", expected=length, received=len(e.partial)) from e
    return decode_body(body)


async def write_frame(
    writer: asyncio.StreamWriter,
    message: Message,
    max_bytes: int = DEFAULT_MAX_FRAME_BYTES,
) -> None:
    writer.write(frame_encode(message, max_bytes))
    await writer.drain()


def _recv_exactly(sock: socket.socket, n: int) -> bytes:
    # recv may return fewer bytes than asked for
    chunks = []
    remaining = n
    while remaining > 0:
        chunk = sock.recv(remaining)
        if not chunk:
            raise FrameError("truncated", expected=n, received=n - remaining)
        chunks.append(chunk)
        remaining -= len(chunk)
    return b"".join(chunks)


def send_frame(
    sock: socket.socket, message: Message, max_bytes: int = DEFAULT_MAX_FRAME_BYTES
) -> None:
    sock.sendall(frame_encode(message, max_bytes))


def recv_frame(
    sock: socket.socket, max_bytes: int = DEFAULT_MAX_FRAME_BYTES
) -> Message:
    (length,) = HEADER.unpack(_recv_exactly(sock, HEADER_SIZE))
    check_length(length, max_bytes)
    return decode_body(_recv_exactly(sock, length))


def error_message(request_id: int, error: CompositorError) -> Message:
    """ERROR reply carrying the error code and detail."""
    return Message(Op.ERROR, request_id, error.to_dict())
