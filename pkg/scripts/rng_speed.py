"""Pooled versus per-call raw generation time.

    python3 scripts/rng_speed.py --draws 100000000
"""
import argparse
import time

from abcem.rng import RandomStream


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--draws", type=int, default=10**8)
    parser.add_argument("--chunk", type=int, default=10**6)
    args = parser.parse_args()

    stream = RandomStream.from_seed(1, mode="pooled", pool_size=args.chunk)
    stream.raw_array(1)
    start = time.perf_counter()
    for _ in range(args.draws // args.chunk):
        stream.raw_array(args.chunk)
    pooled = time.perf_counter() - start

    stream = RandomStream.from_seed(1, mode="on-the-fly")
    next_raw = stream.next_raw
    next_raw()
    start = time.perf_counter()
    for _ in range(args.draws):
        next_raw()
    per_call = time.perf_counter() - start
    print(f"pooled {pooled:.2f} s, per-call {per_call:.2f} s, "
          f"speedup {per_call / pooled:.1f}x, time saved {100 * (1 - pooled / per_call):.1f}%")


if __name__ == "__main__":
    main()
