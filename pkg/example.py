import numpy as np

from py_hiermap import Bench
from py_hiermap.models import Hypermodel, SolverConfig, TruthKind, TruthSpec, Variant
from py_hiermap.solver import linear_rate_estimate, solve
from py_hiermap.synth import make_problem
from py_hiermap.theory import lambda_rule, lambda_threshold


def main():
    print("--- Single coordinate-sparse solve ---")
    n, d = 128, 64
    hm = Hypermodel(variant=Variant.COORDINATE, eta=1e-3, lam=lambda_rule(Variant.COORDINATE, n, d), d=d)
    truth = TruthSpec(kind=TruthKind.HARD_SPARSE, s=4, amplitude=1.0)
    p = make_problem(n, d, "identity", truth, hm, seed=7)
    u_hat, theta_hat, trace = solve(p, hm, SolverConfig())
    print(f"Converged: {trace.converged} after {trace.iterations} iterations")
    print(f"Squared error: {np.sum((u_hat - p.u_star) ** 2):.4e}")
    print(f"lambda = {hm.lam:.4f}, noise threshold = {lambda_threshold(p.A, p.eps, hm):.4f}")
    rho, _ = linear_rate_estimate(trace)
    print(f"Estimated linear rate: {rho:.3f}")

    print("\n--- Property suites ---")
    with Bench(threads=2) as bench:
        for suite in ("sandwich", "theta", "gradient"):
            result = bench.checks.run(suite, cases=200, seed=1)
            print(f"{suite}: {result.passed}/{result.cases} passed")


if __name__ == "__main__":
    main()
