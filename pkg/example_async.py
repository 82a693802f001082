import asyncio

from py_hiermap import AsyncBench
from py_hiermap.models import SweepSpec


async def main():
    spec = SweepSpec(
        variant="coordinate",
        n_grid=[128, 256, 512, 1024],
        d=64,
        truth={"kind": "hard-sparse", "s": 3, "amplitude": 5.0},
        etas=[1e-4],
        trials=5,
        master_seed=11,
    )
    async with AsyncBench(threads=4) as bench:
        print("--- Running sweep ---")
        report = await bench.sweeps.run(spec)
        for cell in report.cells:
            print(f"n={cell.n}: median error^2 {cell.median_error_sq:.3e} (theory {cell.theory:.3e})")
        if report.fits:
            print(f"Slope: {report.fits.slope:.3f} [{report.fits.ci_low:.3f}, {report.fits.ci_high:.3f}]")

        print("\n--- Checking duality ---")
        result = await bench.checks.run("duality", cases=300)
        print(f"duality: {result.passed}/{result.cases} passed")


if __name__ == "__main__":
    asyncio.run(main())
