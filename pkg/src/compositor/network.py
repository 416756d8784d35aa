"""Registry server, blocking client and the framed compose endpoint.

Each connection is served sequentially, so pipelined requests are answered
in the order they were sent. A framing error loses synchronization with the
stream and closes the connection after an ERROR reply; a malformed body only
fails that one request.
"""

from __future__ import annotations

import asyncio
import contextlib
import logging
import socket
import threading
from typing import TYPE_CHECKING, Any, Callable, Dict, Optional

from pydantic import BaseModel, ConfigDict, StrictStr, ValidationError

from .errors import (
    CompositorError,
    ConfigError,
    FrameError,
    ParseError,
    RegistryUnreachableError,
    RemoteError,
)
from .model import ServiceDescription
from .protocol import (
    DEFAULT_MAX_FRAME_BYTES,
    Message,
    Op,
    error_message,
    read_frame,
    recv_frame,
    send_frame,
    write_frame,
)
from .registry import (
    FindQuery,
    Registry,
    RegistryState,
    state_from_document,
    state_to_document,
)
from .serialization import service_from_document, service_to_document

if TYPE_CHECKING:
    from .gateway import CompositionSystem

logger = logging.getLogger(__name__)


class _FindDoc(BaseModel):
    model_config = ConfigDict(extra="forbid")

    output_concept: Optional[StrictStr] = None
    category_prefix: Optional[StrictStr] = None
    id: Optional[StrictStr] = None


def parse_address(address: str) -> tuple[str, int]:
    """Split ``host:port``; an empty host means localhost.

    Raises:
        ConfigError: If the address has no numeric port
    """
    host, sep, port = address.strip().rpartition(":")
    if not sep or not port.isdigit() or not 0 <= int(port) <= 65535:
        raise ConfigError("address", f"expected host:port, got {address!r}")
    return host or "127.0.0.1", int(port)


def _find_query(payload: Dict[str, Any]) -> FindQuery:
    try:
        doc = _FindDoc.model_validate(payload)
    except ValidationError as e:
        first = e.errors()[0]
        field = ".".join(str(part) for part in first["loc"])
        raise ParseError(first["msg"], field=f"payload.{field}") from e
    return FindQuery(**doc.model_dump(exclude_none=True))


class RegistryServer:
    """Serves one registry (and optionally compose requests) over framed TCP.

    Args:
        registry: The registry answering REGISTER, DEREGISTER, FIND and SYNC_PULL
        system: Composition system answering COMPOSE; COMPOSE is refused without it
        max_frame_bytes: Largest accepted request and reply body
        on_connection: Called with the task serving each accepted connection
    """

    def __init__(
        self,
        registry: Registry,
        system: Optional["CompositionSystem"] = None,
        max_frame_bytes: int = DEFAULT_MAX_FRAME_BYTES,
        on_connection: Optional[Callable[[asyncio.Task], None]] = None,
    ) -> None:
        self.registry = registry
        self.system = system
        self.max_frame_bytes = max_frame_bytes
        self.on_connection = on_connection
        self.address: Optional[tuple[str, int]] = None
        self._server: Optional[asyncio.AbstractServer] = None
        self._handlers: Dict[Op, Callable[[Message], Message]] = {
            Op.REGISTER: self._register,
            Op.DEREGISTER: self._deregister,
            Op.FIND: self._find,
            Op.SYNC_PULL: self._sync_pull,
            Op.COMPOSE: self._compose,
        }

    async def start(self, host: str = "127.0.0.1", port: int = 0) -> tuple[str, int]:
        """Bind and start accepting connections; port 0 picks a free port."""
        self._server = await asyncio.start_server(self._handle_connection, host, port)
        bound = self._server.sockets[0].getsockname()
        self.address = (bound[0], bound[1])
        logger.info(
            f"Registry {self.registry.registry_id} listening on {bound[0]}:{bound[1]}"
        )
        return self.address

    async def stop(self) -> None:
        if self._server is None:
            return
        self._server.close()
        await self._server.wait_closed()
        self._server = None
        logger.info(f"Registry {self.registry.registry_id} stopped listening")

    def stop_accepting(self) -> None:
        """Close the listening socket; connections already accepted keep running."""
        if self._server is not None:
            self._server.close()

    async def _handle_connection(
        self, reader: asyncio.StreamReader, writer: asyncio.StreamWriter
    ) -> None:
        peer = writer.get_extra_info("peername")
        logger.debug(f"Connection from {peer}")
        task = asyncio.current_task()
        if self.on_connection is not None and task is not None:
            self.on_connection(task)
        try:
            while True:
                try:
                    message = await read_frame(reader, self.max_frame_bytes)
                except FrameError as e:
                    logger.warning(f"Closing connection from {peer}: {e.message}")
                    await write_frame(writer, error_message(0, e), self.max_frame_bytes)
                    break
                except ParseError as e:
                    await write_frame(writer, error_message(0, e), self.max_frame_bytes)
                    continue
                if message is None:
                    break
                await self._reply(writer, message, await self.dispatch_async(message))
        except ConnectionError as e:
            logger.debug(f"Connection from {peer} dropped: {e}")
        finally:
            writer.close()
            with contextlib.suppress(ConnectionError):
                await writer.wait_closed()

    async def _reply(
        self, writer: asyncio.StreamWriter, request: Message, reply: Message
    ) -> None:
        try:
            await write_frame(writer, reply, self.max_frame_bytes)
        except FrameError as e:
            error = error_message(request.req_id, e)
            await write_frame(writer, error, self.max_frame_bytes)

    async def dispatch_async(self, message: Message) -> Message:
        # composition is CPU-bound; keep the loop free for other connections
        if message.op is Op.COMPOSE:
            return await asyncio.to_thread(self.dispatch, message)
        return self.dispatch(message)

    def dispatch(self, message: Message) -> Message:
        """Answer one request; domain failures become ERROR replies."""
        handler = self._handlers.get(message.op)
        try:
            if handler is None:
                raise ParseError(f"op {message.op.value} is not a request", field="op")
            return handler(message)
        except CompositorError as e:
            logger.debug(f"{message.op.value} #{message.req_id} failed with {e.code}")
            return error_message(message.req_id, e)
        except Exception as e:
            logger.exception(f"Unexpected failure handling {message.op.value}: {e}")
            internal = CompositorError("internal error", {"message": str(e)})
            return error_message(message.req_id, internal)

    def _register(self, message: Message) -> Message:
        desc = service_from_document(message.payload.get("service"), "payload.service")
        stored = self.registry.register(desc)
        return message.reply(Op.ACK, {"id": stored.id, "version": stored.version})

    def _deregister(self, message: Message) -> Message:
        service_id = message.payload.get("id")
        if not isinstance(service_id, str):
            raise ParseError("id must be a string", field="payload.id")
        self.registry.deregister(service_id)
        return message.reply(Op.ACK, {"id": service_id})

    def _find(self, message: Message) -> Message:
        services = self.registry.find(_find_query(message.payload))
        documents = [service_to_document(s) for s in services]
        return message.reply(Op.FIND_RESULT, {"services": documents})

    def _sync_pull(self, message: Message) -> Message:
        # a pulling peer may push its own state in the same exchange
        if "state" in message.payload:
            self.registry.pull_from(state_from_document(message.payload["state"]))
        return message.reply(Op.SYNC_STATE, state_to_document(self.registry.state))

    def _compose(self, message: Message) -> Message:
        if self.system is None:
            raise ParseError("op COMPOSE is not served by this registry", field="op")
        from .gateway import handle_document

        response, _ = handle_document(message.payload, self.system)
        return message.reply(Op.COMPOSE_RESULT, response)


class RegistryClient:
    """Blocking client over one persistent connection, reconnecting on demand."""

    def __init__(
        self,
        address: str,
        timeout: float = 5.0,
        max_frame_bytes: int = DEFAULT_MAX_FRAME_BYTES,
    ) -> None:
        self.address = address
        self.host, self.port = parse_address(address)
        self.timeout = timeout
        self.max_frame_bytes = max_frame_bytes
        self._sock: Optional[socket.socket] = None
        self._next_id = 1
        self._lock = threading.Lock()

    def connect(self) -> None:
        if self._sock is None:
            self._sock = socket.create_connection(
                (self.host, self.port), timeout=self.timeout
            )

    def close(self) -> None:
        if self._sock is not None:
            with contextlib.suppress(OSError):
                self._sock.close()
            self._sock = None

    def __enter__(self) -> "RegistryClient":
        self.connect()
        return self

    def __exit__(self, *exc_info: object) -> None:
        self.close()

    def call(self, op: Op, payload: Dict[str, Any]) -> Message:
        """Send one request and wait for its reply.

        Raises:
            OSError: If the peer cannot be reached
            FrameError: If the reply stream is broken or out of order
            RemoteError: If the peer answered with ERROR
        """
        with self._lock:
            req_id = self._next_id
            self._next_id += 1
            try:
                self.connect()
                assert self._sock is not None
                message = Message(op, req_id, payload)
                send_frame(self._sock, message, self.max_frame_bytes)
                reply = recv_frame(self._sock, self.max_frame_bytes)
            except (OSError, FrameError):
                self.close()
                raise
        if reply.op is Op.ERROR:
            error = str(reply.payload.get("error", "INTERNAL"))
            raise RemoteError(error, reply.payload.get("detail"))
        if reply.req_id != req_id:
            self.close()
            raise FrameError(
                "reply out of order", expected=req_id, received=reply.req_id
            )
        return reply

    def register(self, desc: ServiceDescription) -> int:
        reply = self.call(Op.REGISTER, {"service": service_to_document(desc)})
        return int(reply.payload["version"])

    def deregister(self, service_id: str) -> None:
        self.call(Op.DEREGISTER, {"id": service_id})

    def find(self, query: FindQuery) -> list[ServiceDescription]:
        reply = self.call(Op.FIND, query.as_dict())
        return [
            service_from_document(doc, f"services[{i}]")
            for i, doc in enumerate(reply.payload.get("services", []))
        ]

    def pull_state(self, push: Optional[RegistryState] = None) -> RegistryState:
        payload = {"state": state_to_document(push)} if push is not None else {}
        return state_from_document(self.call(Op.SYNC_PULL, payload).payload)

    def compose(self, document: Dict[str, Any]) -> Dict[str, Any]:
        return self.call(Op.COMPOSE, document).payload


class RemoteRegistry:
    """A registry reached over the network, usable wherever the matcher expects one.

    Connection failures surface as ``RegistryUnreachableError`` so the matcher
    treats an unreachable peer as DOWN.
    """

    def __init__(
        self, address: str, registry_id: Optional[str] = None, timeout: float = 5.0
    ) -> None:
        self.registry_id = registry_id or address
        self.client = RegistryClient(address, timeout)

    def find(self, query: FindQuery) -> list[ServiceDescription]:
        try:
            return self.client.find(query)
        except (OSError, FrameError) as e:
            logger.warning(f"Registry {self.registry_id} unreachable: {e}")
            raise RegistryUnreachableError(self.registry_id) from e

    def close(self) -> None:
        self.client.close()


async def pull_state(
    address: str,
    push: Optional[RegistryState] = None,
    timeout: float = 5.0,
    max_frame_bytes: int = DEFAULT_MAX_FRAME_BYTES,
) -> RegistryState:
    """One SYNC_PULL exchange with a peer over asyncio streams.

    Raises:
        RegistryUnreachableError: If the peer cannot be reached or breaks the stream
        RemoteError: If the peer answers with ERROR
    """
    host, port = parse_address(address)
    payload = {"state": state_to_document(push)} if push is not None else {}
    try:
        reader, writer = await asyncio.wait_for(
            asyncio.open_connection(host, port), timeout
        )
    except (OSError, asyncio.TimeoutError) as e:
        raise RegistryUnreachableError(address) from e
    try:
        await write_frame(writer, Message(Op.SYNC_PULL, 1, payload), max_frame_bytes)
        reply = await asyncio.wait_for(read_frame(reader, max_frame_bytes), timeout)
    except (OSError, FrameError, asyncio.TimeoutError) as e:
        raise RegistryUnreachableError(address) from e
    finally:
        writer.close()
        with contextlib.suppress(ConnectionError):
            await writer.wait_closed()
    if reply is None:
        raise RegistryUnreachableError(address)
    if reply.op is Op.ERROR:
        error = str(reply.payload.get("error", "INTERNAL"))
        raise RemoteError(error, reply.payload.get("detail"))
    return state_from_document(reply.payload)
