"""Train a small network on sparse vectors and compare it with SBL and OMP.

Four layers with 50 steps per phase train in well under a minute on one core.
SBL runs for the same number of iterations as the network has layers.
"""
from lsbl.core import Rng
from lsbl.datagen import GenConfig, StructureSpec, generate
from lsbl.experiments import SolverSpec, sweep_sparsity
from lsbl.train import TrainConfig, train_layerwise

cfg = GenConfig(m=30, n=50, structure=StructureSpec("unstructured", 0, 15), count=20000)
root = Rng(1)
train_set = generate(cfg, root.child("data"))

result = train_layerwise(train_set, TrainConfig(layers=4, steps_per_phase=50, batch_size=128,
                                                seed=1),
                         verbose=True)
print("batch loss after each layer:",
      [round(float(result.losses(k, 2)[-10:].mean()), 3) for k in range(1, 5)])

solvers = [SolverSpec("lsbl", {"noise_floor": 1e-2}), SolverSpec("sbl", {"iterations": 4}),
           SolverSpec("omp")]
for report in sweep_sparsity(cfg, [4, 8, 12], 500, solvers, root.child("eval"), a=train_set.a,
                             models={"lsbl": result.model}):
    print(f"K={report.sweep:4.0f} {report.solver:6s} rmse={report.rmse:.3e} "
          f"failure={report.failure_rate:.3f}")
