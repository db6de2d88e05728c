import sys
import time

import numpy as np

import rdteunet.datasynth as ds
import rdteunet.metrics as mx
import rdteunet.model as M
import rdteunet.tensor as T
from rdteunet.tensor import Tape, Tensor

lr = float(sys.argv[1])
steps = int(sys.argv[2])

samples = ds.generate(ds.GenSpec(count=8, seed=123))
images = np.stack([s.image.data for s in samples])
masks = np.stack([np.rint(s.mask.data).astype(np.int64) for s in samples])

cfg = M.ModelConfig(h=64, w=64, base_width=16, variant="full", seed=0)
model = M.RdteUnet(cfg)
opt = M.Adam(model.store, lr=lr)
rng = np.random.default_rng(99)


def fg_dsc(mode_training):
    vals = []
    for i in range(0, 8, 4):
        x = Tensor(images[i:i + 4])
        logits = model(x, training=mode_training)
        pred = np.argmax(logits.data, axis=-1)
        for j in range(4):
            gt = masks[i + j]
            for c in (1, 2, 3):
                if (gt == c).any():
                    vals.append(mx.dsc(pred[j] == c, gt == c))
    return float(np.mean(vals))


t0 = time.time()
for step in range(1, steps + 1):
    idx = rng.integers(0, 8, size=4)
    x = Tensor(images[idx])
    y = masks[idx]
    with Tape() as tape:
        logits = model(x, training=True)
        ce = M.cross_entropy(logits, y)
        dl = M.soft_dice_loss(logits, y)
        loss = ce * 0.5 + dl * 0.5
        T.backward(tape, loss, model.store)
    M.clip_grad_norm(model.store, 1.0)
    opt.step()
    if step % 10 == 0:
        amax = np.abs(logits.data).max()
        print(f"step {step:4d} loss={loss.item():.4f} ce={ce.item():.4f} dice={dl.item():.4f} "
              f"|logit|max={amax:.1f} trainDSC={fg_dsc(True):.3f} evalDSC={fg_dsc(False):.3f} "
              f"[{(time.time()-t0)/60:.1f}m]", flush=True)
