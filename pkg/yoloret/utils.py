"""Small helpers shared across modules: executors and integer arithmetic"""
from concurrent.futures import Executor, Future, ThreadPoolExecutor
from threading import Lock


def is_power_of_two(n):
    return isinstance(n, int) and n >= 1 and (n & (n - 1)) == 0


def align_up(n, alignment):
    """Smallest multiple of `alignment` that is >= n"""
    return -(-n // alignment) * alignment


def make_executor(max_workers=1):
    """Thread pool for max_workers > 1, otherwise runs each task inline

    Callers always reduce results in submission order, so the worker count
    never changes what they return.
    """
    if max_workers < 1:
        raise ValueError("max_workers must be >= 1, got %s" % max_workers)
    ExecutorClass = ThreadPoolExecutor if max_workers > 1 else DummyExecutor
    return ExecutorClass(max_workers=max_workers)


class DummyExecutor(Executor):
    """Serial stand-in for a pool: each task runs inside `submit`

    The returned future is already done. Task errors are stored on the
    future and surface from `result()`, as they would from a thread pool.
    """

    def __init__(self, max_workers=1):
        self.max_workers = max_workers
        self._closed = False
        self._lock = Lock()

    def submit(self, fn, *args, **kwargs):
        with self._lock:
            if self._closed:
                raise RuntimeError("executor is shut down; no new tasks accepted")
            future = Future()
            try:
                future.set_result(fn(*args, **kwargs))
            except KeyboardInterrupt:
                raise
            except BaseException as e:
                future.set_exception(e)
            return future

    def shutdown(self, wait=True, **kwargs):
        with self._lock:
            self._closed = True
