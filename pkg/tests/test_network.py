"""Tests for the framed registry server and its clients."""

import asyncio
import socket
import struct

import pytest

from compositor.errors import ConfigError, RegistryUnreachableError, RemoteError
from compositor.network import (
    RegistryClient,
    RegistryServer,
    RemoteRegistry,
    parse_address,
    pull_state,
)
from compositor.protocol import Message, Op, frame_encode, read_frame
from compositor.registry import FindQuery, Registry, state_to_document

from tests.conftest import make_service, service_document


@pytest.fixture
async def served(cat1, warm_system):
    """A registry server holding CAT-1 on a free local port, with compose enabled."""
    server = RegistryServer(Registry("R1", cat1), system=warm_system)
    host, port = await server.start("127.0.0.1", 0)
    yield server, f"{host}:{port}"
    await server.stop()


def free_port():
    with socket.socket() as sock:
        sock.bind(("127.0.0.1", 0))
        return sock.getsockname()[1]


class TestParseAddress:
    """Test host:port parsing."""

    def test_host_and_port(self):
        """Test a plain host:port."""
        assert parse_address("10.0.0.2:7400") == ("10.0.0.2", 7400)

    def test_empty_host(self):
        """Test a bare :port means localhost."""
        assert parse_address(":7400") == ("127.0.0.1", 7400)

    @pytest.mark.parametrize("address", ["localhost", "host:", "host:http", "host:70000"])
    def test_invalid(self, address):
        """Test malformed addresses are configuration errors."""
        with pytest.raises(ConfigError):
            parse_address(address)


class TestDispatch:
    """Test request handling without sockets."""

    def test_register_ack(self):
        """Test REGISTER answers ACK with the stored version."""
        server = RegistryServer(Registry("R1"))
        reply = server.dispatch(Message(Op.REGISTER, 3, {"service": service_document("S9", version=2)}))
        assert reply == Message(Op.ACK, 3, {"id": "S9", "version": 2})

    def test_version_conflict_is_error_reply(self, cat1):
        """Test domain failures come back as ERROR with the same req_id."""
        server = RegistryServer(Registry("R1", cat1))
        doc = service_document("S1")
        reply = server.dispatch(Message(Op.REGISTER, 5, {"service": doc}))
        assert reply.op is Op.ERROR
        assert reply.req_id == 5
        assert reply.payload["error"] == "VERSION_CONFLICT"

    def test_bad_service_names_payload_field(self):
        """Test schema errors name the payload path."""
        server = RegistryServer(Registry("R1"))
        reply = server.dispatch(Message(Op.REGISTER, 1, {"service": {"id": "S9"}}))
        assert reply.payload["error"] == "PARSE_ERROR"
        assert reply.payload["detail"]["field"].startswith("payload.service")

    def test_oversized_qos_number_is_parse_error(self):
        """Test an integer beyond float range is PARSE_ERROR on its path, not INTERNAL."""
        server = RegistryServer(Registry("R1"))
        doc = service_document("S9")
        doc["qos"]["cost"] = 10**400
        reply = server.dispatch(Message(Op.REGISTER, 2, {"service": doc}))
        assert reply.op is Op.ERROR
        assert reply.payload["error"] == "PARSE_ERROR"
        assert reply.payload["detail"]["field"] == "payload.service.qos.cost"
        assert dict(server.registry.state.catalog) == {}

    def test_deregister_unknown(self):
        """Test DEREGISTER of an unknown id is NOT_FOUND."""
        reply = RegistryServer(Registry("R1")).dispatch(Message(Op.DEREGISTER, 1, {"id": "S404"}))
        assert reply.payload["error"] == "NOT_FOUND"

    def test_find_rejects_unknown_field(self, cat1):
        """Test FIND payloads are strict."""
        reply = RegistryServer(Registry("R1", cat1)).dispatch(Message(Op.FIND, 1, {"output": "C"}))
        assert reply.payload["detail"]["field"] == "payload.output"

    def test_reply_ops_are_not_requests(self):
        """Test a client may not send reply ops."""
        reply = RegistryServer(Registry("R1")).dispatch(Message(Op.ACK, 9, {}))
        assert reply.payload["error"] == "PARSE_ERROR"

    def test_compose_without_system(self):
        """Test COMPOSE is refused when no composition system is attached."""
        reply = RegistryServer(Registry("R1")).dispatch(Message(Op.COMPOSE, 1, {"desired": ["C"]}))
        assert reply.payload["detail"]["field"] == "op"

    def test_sync_pull_merges_pushed_state(self, cat1):
        """Test a pushed state is merged before the reply is built."""
        server = RegistryServer(Registry("R2"))
        peer = Registry("R1", cat1)
        reply = server.dispatch(Message(Op.SYNC_PULL, 1, {"state": state_to_document(peer.state)}))
        assert reply.op is Op.SYNC_STATE
        assert reply.payload["registry_id"] == "R2"
        assert [s["id"] for s in reply.payload["services"]] == ["S1", "S2", "S3", "S4"]


class TestServerOverTcp:
    """Test the server with real connections."""

    async def test_find_over_tcp(self, served):
        """Test a blocking client finds the producers of C."""
        _, address = served

        def query():
            with RegistryClient(address) as client:
                return [s.id for s in client.find(FindQuery(output_concept="C"))]

        assert await asyncio.to_thread(query) == ["S2", "S3"]

    async def test_register_then_find(self, served):
        """Test a registration is visible to the next request on the connection."""
        server, address = served

        def exchange():
            with RegistryClient(address) as client:
                version = client.register(make_service("S9", inputs=("A",), outputs=("Z",), version=3))
                found = client.find(FindQuery(id="S9"))
                client.deregister("S9")
                return version, [s.id for s in found]

        assert await asyncio.to_thread(exchange) == (3, ["S9"])
        assert "S9" not in server.registry.state.catalog

    async def test_remote_error(self, served):
        """Test ERROR replies surface as RemoteError with the peer's code."""
        _, address = served

        def conflict():
            with RegistryClient(address) as client:
                client.register(make_service("S1"))

        with pytest.raises(RemoteError) as exc_info:
            await asyncio.to_thread(conflict)
        assert exc_info.value.code == "VERSION_CONFLICT"

    async def test_pipelined_replies_in_order(self, served):
        """Test several frames sent at once are answered in order."""
        _, address = served
        host, port = address.rsplit(":", 1)
        reader, writer = await asyncio.open_connection(host, int(port))
        for req_id in (1, 2, 3):
            writer.write(frame_encode(Message(Op.FIND, req_id, {"id": f"S{req_id}"})))
        await writer.drain()
        replies = [await read_frame(reader) for _ in range(3)]
        assert [r.req_id for r in replies] == [1, 2, 3]
        assert [r.payload["services"][0]["id"] for r in replies] == ["S1", "S2", "S3"]
        writer.close()
        await writer.wait_closed()

    async def test_bad_body_keeps_connection(self, served):
        """Test a malformed body fails only that request."""
        _, address = served
        host, port = address.rsplit(":", 1)
        reader, writer = await asyncio.open_connection(host, int(port))
        body = b"{oops"
        writer.write(struct.pack(">I", len(body)) + body)
        writer.write(frame_encode(Message(Op.FIND, 8, {"id": "S1"})))
        await writer.drain()
        first = await read_frame(reader)
        second = await read_frame(reader)
        assert first.op is Op.ERROR and first.req_id == 0
        assert second.op is Op.FIND_RESULT and second.req_id == 8
        writer.close()
        await writer.wait_closed()

    async def test_oversize_frame_closes(self, served):
        """Test an oversize length is answered with ERROR and the connection closes."""
        _, address = served
        host, port = address.rsplit(":", 1)
        reader, writer = await asyncio.open_connection(host, int(port))
        writer.write(struct.pack(">I", 1 << 30))
        await writer.drain()
        reply = await read_frame(reader)
        assert reply.payload["error"] == "FRAME_ERROR"
        assert await read_frame(reader) is None
        writer.close()

    async def test_compose_over_tcp(self, served):
        """Test the framed compose endpoint answers R1 with the S1→S2 plan."""
        _, address = served

        def compose():
            with RegistryClient(address) as client:
                return client.compose({"provided": ["A"], "desired": ["C"],
                                       "weights": {"response_time_ms": 1.0}})

        response = await asyncio.to_thread(compose)
        assert [n["id"] for n in response["plan"]["nodes"]] == ["S1", "S2"]
        assert response["latency_ms"] == 45.0

    async def test_async_pull_state(self, served):
        """Test the asyncio SYNC_PULL exchange returns the peer catalog."""
        _, address = served
        state = await pull_state(address)
        assert state.registry_id == "R1"
        assert sorted(state.catalog) == ["S1", "S2", "S3", "S4"]


class TestUnreachable:
    """Test behavior when nobody is listening."""

    def test_remote_registry_maps_to_unreachable(self):
        """Test connection refusal marks the remote registry DOWN."""
        remote = RemoteRegistry(f"127.0.0.1:{free_port()}", registry_id="R9", timeout=0.5)
        with pytest.raises(RegistryUnreachableError) as exc_info:
            remote.find(FindQuery(output_concept="C"))
        assert exc_info.value.detail == {"registry": "R9"}

    async def test_pull_state_unreachable(self):
        """Test the async pull reports REGISTRY_UNREACHABLE."""
        with pytest.raises(RegistryUnreachableError):
            await pull_state(f"127.0.0.1:{free_port()}", timeout=0.5)
