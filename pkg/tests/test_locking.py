"""Tests for per-registry process locking."""

import json
import time
from unittest.mock import patch

import pytest

from compositor.locking import ProcessLock


class TestProcessLock:
    """Test process locking mechanisms."""

    @pytest.fixture
    def lock(self, temp_dir):
        """Create ProcessLock instance for registry R1."""
        return ProcessLock(temp_dir, "R1")

    def test_acquire_lock_success(self, lock, temp_dir):
        """Test successful lock acquisition."""
        assert lock.acquire() is True
        assert (temp_dir / ".registry-R1.lock").exists()
        data = json.loads((temp_dir / ".registry-R1.lock").read_text())
        assert data["registry_id"] == "R1"
        lock.release()

    def test_acquire_lock_already_locked(self, temp_dir):
        """Test lock acquisition when already locked."""
        lock1 = ProcessLock(temp_dir, "R1")
        lock2 = ProcessLock(temp_dir, "R1")
        lock2.current_pid = lock1.current_pid + 1

        assert lock1.acquire() is True
        assert lock2.acquire() is False

        lock1.release()

    def test_locks_are_per_registry(self, temp_dir):
        """Test two registries share a data directory independently."""
        lock1 = ProcessLock(temp_dir, "R1")
        lock2 = ProcessLock(temp_dir, "R2")

        assert lock1.acquire() is True
        assert lock2.acquire() is True

        lock1.release()
        lock2.release()

    def test_release_lock(self, lock, temp_dir):
        """Test lock release."""
        lock.acquire()
        lock.release()
        assert not (temp_dir / ".registry-R1.lock").exists()

    def test_is_locked(self, lock):
        """Test lock status checking."""
        assert lock.is_locked() is False
        lock.acquire()
        assert lock.is_locked() is True
        lock.release()
        assert lock.is_locked() is False

    def test_refresh_updates_heartbeat(self, lock, temp_dir):
        """Test refresh rewrites the timestamp of a held lock."""
        lock_file = temp_dir / ".registry-R1.lock"
        lock.acquire()
        stale = json.loads(lock_file.read_text())
        stale["timestamp"] = time.time() - 100
        lock_file.write_text(json.dumps(stale))

        lock.refresh()

        assert json.loads(lock_file.read_text())["timestamp"] > time.time() - 10
        lock.release()

    def test_refresh_without_lock_is_noop(self, lock, temp_dir):
        """Test refresh does not create a lock it never acquired."""
        lock.refresh()
        assert not (temp_dir / ".registry-R1.lock").exists()

    @patch('compositor.locking.psutil.pid_exists')
    def test_cleanup_dead_process_lock(self, mock_pid_exists, temp_dir):
        """Test a lock held by a dead process is reclaimed."""
        lock = ProcessLock(temp_dir, "R1")
        lock_file = temp_dir / ".registry-R1.lock"
        lock_file.write_text(json.dumps({"pid": 99999, "timestamp": time.time()}))
        mock_pid_exists.return_value = False

        assert lock.acquire() is True
        lock.release()

    @patch('compositor.locking.psutil.pid_exists')
    def test_active_lock_not_cleaned(self, mock_pid_exists, temp_dir):
        """Test that active locks are not cleaned."""
        lock = ProcessLock(temp_dir, "R1")
        lock_file = temp_dir / ".registry-R1.lock"
        lock_file.write_text(json.dumps({"pid": 99999, "timestamp": time.time()}))
        mock_pid_exists.return_value = True

        assert lock.acquire() is False
        assert lock_file.exists()

    def test_cleanup_stale_removes_old_locks(self, temp_dir):
        """Test cleanup_stale removes locks older than max_age_seconds."""
        lock = ProcessLock(temp_dir, "R1", max_age_seconds=300)
        lock_file = temp_dir / ".registry-R1.lock"
        lock_file.write_text(json.dumps({"pid": 99999, "timestamp": time.time() - 600}))

        lock.cleanup_stale()
        assert not lock_file.exists()

    def test_lock_file_corruption_handled(self, temp_dir):
        """Test handling of corrupted lock files."""
        lock = ProcessLock(temp_dir, "R1")
        (temp_dir / ".registry-R1.lock").write_text("corrupted data")

        assert lock.acquire() is True
        lock.release()

    def test_context_manager(self, temp_dir):
        """Test context manager usage."""
        with ProcessLock(temp_dir, "R1"):
            assert (temp_dir / ".registry-R1.lock").exists()

        assert not (temp_dir / ".registry-R1.lock").exists()

    @patch('compositor.locking.psutil.pid_exists')
    def test_context_manager_refuses_when_locked(self, mock_pid_exists, temp_dir):
        """Test entering a held lock raises."""
        mock_pid_exists.return_value = True
        (temp_dir / ".registry-R1.lock").write_text(json.dumps({"pid": 99999, "timestamp": time.time()}))

        with pytest.raises(RuntimeError, match="locked by another process"):
            with ProcessLock(temp_dir, "R1"):
                pass
