"""An untrained L-SBL network is SBL.

Every layer starts at the embedding ``gamma = x^2 + phi``, so K layers give
the same estimate as K EM iterations of SBL.  Training then moves the weights
away from that starting point.
"""
import numpy as np

from lsbl.bayes import SblConfig, run_sbl
from lsbl.core import Rng
from lsbl.datagen import GenConfig, StructureSpec, generate
from lsbl.network import init_model, predict

cfg = GenConfig(m=30, n=50, structure=StructureSpec("unstructured", 4, 8), count=100)
ds = generate(cfg, Rng(0))

model = init_model("NW1", n=50, l=1, depth=8)
net = predict(model, ds.a, ds.y, 1e-6)
sbl = run_sbl(ds.a, ds.y, 1e-6, SblConfig(iterations=8)).xhat

print("largest |network - SBL| over 100 problems:", np.max(np.abs(net - sbl)))
print("first layer weights (squared-estimate block, top-left corner):")
print(model.layers[0].w[:4, :4])
