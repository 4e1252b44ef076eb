import logging
import os
import threading
from collections import deque
from typing import Dict

import psutil

from .utils import Config, QubitBudgetError

logger = logging.getLogger(__name__)

BYTES_PER_ENTRY = 16  # complex128


class MemoryMonitor:
    """Process memory tracking and dense-register budget checks"""

    def __init__(self, check_from_qubits=10):
        self.process = psutil.Process(os.getpid())
        self.memory_history = deque(maxlen=100)
        self.check_from_qubits = check_from_qubits
        self.largest_register = 0
        self.lock = threading.Lock()

    def get_memory_usage(self) -> float:
        """Get current memory usage in MB"""
        memory_mb = self.process.memory_info().rss / 1024 / 1024
        self.memory_history.append(memory_mb)
        return memory_mb

    def get_detailed_stats(self) -> Dict[str, float]:
        """Get detailed memory statistics"""
        memory_info = self.process.memory_info()
        virtual = psutil.virtual_memory()
        return {
            'current_mb': memory_info.rss / 1024 / 1024,
            'peak_mb': max(self.memory_history, default=memory_info.rss / 1024 / 1024),
            'available_mb': virtual.available / 1024 / 1024,
            'total_mb': virtual.total / 1024 / 1024,
            'usage_percent': virtual.percent,
            'largest_register_qubits': float(self.largest_register),
        }

    @staticmethod
    def register_bytes(num_qubits: int) -> int:
        dim = 2 ** num_qubits
        return dim * dim * BYTES_PER_ENTRY * Config.working_copies

    def check_register(self, num_qubits: int, max_qubits=None):
        """Raise QubitBudgetError when a dense register cannot be afforded"""
        limit = max_qubits if max_qubits is not None else Config.max_qubits
        if num_qubits > limit:
            raise QubitBudgetError(
                f"register of {num_qubits} qubits exceeds the budget of {limit}")
        with self.lock:
            self.largest_register = max(self.largest_register, num_qubits)
        if num_qubits < self.check_from_qubits:
            return
        needed = self.register_bytes(num_qubits)
        available = psutil.virtual_memory().available
        if needed > available:
            raise QubitBudgetError(
                f"{num_qubits}-qubit register needs {needed / 2**20:.0f} MB, "
                f"only {available / 2**20:.0f} MB available")
        logger.debug("%d-qubit register, %.0f MB working set, rss %.0f MB",
                     num_qubits, needed / 2**20, self.get_memory_usage())


# Global monitor instance
memory_monitor = MemoryMonitor()
