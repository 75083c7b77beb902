"""Run the bundled teacher-student experiment and print the convergence arc.

The student's relation matrices start far from the teacher's and are
pulled onto them by plain gradient descent on the weighted relation loss.
"""

from geodistill import default_config_path, load_experiment_config, run_experiment

config = load_experiment_config(default_config_path())
print(f"config: {config.iterations} iterations, lr {config.learning_rate}, "
      f"{config.channels} channels, {config.map_cells}x{config.map_cells} map")

report = run_experiment(config)

print(f"\n{'iter':>5} {'weighted loss':>14} {'relation gap':>13} {'param norm':>11}")
marks = [0, 1, 2, 5, 10, 20, 50, 100, 200, 499]
for i in marks:
    s = report.steps[i]
    print(f"{i:>5} {s.l_relation:>14.6f} {s.rel_diff:>13.6f} {s.param_norm:>11.4f}")

series = report.relation_series
print(f"\ninitial loss {series[0]:.4f}, minimum {min(series):.6f}, "
      f"final relation gap {report.rel_diff_series[-1]:.6f}")
print(f"converged: {report.converged}")
