"""
Projected SA against the single-anchor baselines
================================================

Runs the desk-scale benchmark (phase sizes divided by 5) on two suite
instances and prints the final gain error of each method.
"""

from poisson_gauge.bench import ExperimentConfig, final_means, run_experiment, suite_spec

cfg = ExperimentConfig.desk(seeds=(0, 1, 2))
for name in ("aperiodic_multichain", "var_branch_2v3"):
    spec = suite_spec(name).scaled(5)
    curves = run_experiment(spec, cfg)
    print(f"{name} (n={spec.n})")
    for (_, method), err in sorted(final_means(curves).items()):
        print(f"  {method:12s} {err:.4f}")
