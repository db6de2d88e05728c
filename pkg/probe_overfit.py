import sys
import time

import numpy as np

import rdteunet.datasynth as ds
import rdteunet.metrics as mx
import rdteunet.model as M
import rdteunet.tensor as T
from rdteunet.tensor import Tape, Tensor

lr = float(sys.argv[1]) if len(sys.argv) > 1 else 1e-3
variant = sys.argv[2] if len(sys.argv) > 2 else "full"

samples = ds.generate(ds.GenSpec(count=8, seed=123))
images = np.stack([s.image.data for s in samples])
masks = np.stack([np.rint(s.mask.data).astype(np.int64) for s in samples])

cfg = M.ModelConfig(h=64, w=64, base_width=16, variant=variant, seed=0)
model = M.RdteUnet(cfg)
opt = M.Adam(model.store, lr=lr)
rng = np.random.default_rng(99)

t_start = time.time()
for step in range(1, 2001):
    idx = rng.integers(0, 8, size=4)
    x = Tensor(images[idx])
    y = masks[idx]
    with Tape() as tape:
        logits = model(x, training=True)
        loss = M.segmentation_loss(logits, y)
        T.backward(tape, loss, model.store)
    opt.step()
    if step % 25 == 0:
        rep = mx.evaluate(lambda v, training=False: model(v, training=training), samples, 4)
        el = time.time() - t_start
        print(f"step {step:4d}  loss={loss.item():.4f}  fgDSC={rep['mean_dsc']:.4f}  "
              f"hd95={rep['mean_hd95']:.2f}  [{el/60:.1f} min]", flush=True)
        if rep["mean_dsc"] >= 0.95:
            print(f"TARGET at step {step}, {el/60:.1f} min", flush=True)
            break
