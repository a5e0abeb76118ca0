import importlib.util
from pathlib import Path

BENCH = Path(__file__).resolve().parents[1] / "benchmarks" / "bench_kernels.py"


def test_benchmark_runs(capsys):
    spec = importlib.util.spec_from_file_location("bench_kernels", BENCH)
    bench = importlib.util.module_from_spec(spec)
    spec.loader.exec_module(bench)
    bench.main(["--rows", "8", "--width", "4", "--repeat", "1"])
    out = capsys.readouterr().out.splitlines()
    names = [line.split()[0] for line in out[2:]]
    assert names == list(bench.cases(2, 3, __import__("numpy").random.default_rng(0)))
