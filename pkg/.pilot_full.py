import time
import numpy as np
import torch
torch.set_num_threads(2)
import semagen as sg
from semagen import trainer as tr, evalkit
from semagen.sampler import GenerationPipeline
from semagen.quantizer import UsageTracker
from semagen.shapeworld import SceneDataset

T0 = time.time()
def lap(msg):
    print(f"[{time.time()-T0:7.1f}s] {msg}", flush=True)

cfg = sg.desk_config()
print("config:", "iters", cfg.vqvae_opt.iterations, "prior epochs", cfg.prior_opt.epochs,
      "layout epochs", cfg.layout_opt.epochs, flush=True)
ds = sg.build_dataset(cfg.data, seed=0)
lap("dataset 10k built")

res = tr.train_vqvae(cfg, ds, log_every=500)
h = res.history
mse100 = float(np.mean(h["reconstruction"][95:105]))
mse_end = float(np.mean(h["reconstruction"][-50:]))
lap(f"vqvae done: mse@100={mse100:.5f} end={mse_end:.5f} ratio={mse_end/mse100:.4f}")
res.checkpoint.save("/tmp/pilot_vqvae.msgf")

corpus = tr.extract_codes(res.checkpoint, ds)
for name, half in (("vq1", corpus.codes[:, :8]), ("vq2", corpus.codes[:, 8:])):
    t = UsageTracker(256); t.update(torch.from_numpy(half))
    lap(f"{name}: perplexity={t.perplexity():.1f} used={int((t.histogram()>0).sum())}/256 (target >= 64)")
corpus.save("/tmp/pilot_corpus.npz")

res_p = tr.train_latent_prior(cfg, corpus, log_every=400)
lap(f"latent prior done: train nll tail={np.mean(res_p.history['nll'][-30:]):.4f} (target<2.773)")
res_p.checkpoint.save("/tmp/pilot_prior.msgf")

res_l = tr.train_layout_prior(cfg, corpus.layouts, log_every=500)
lap(f"layout prior done: train nll tail={np.mean(res_l.history['nll'][-30:]):.4f} (target<1.282)")
res_l.checkpoint.save("/tmp/pilot_layout.msgf")

# held-out NLL (criterion 4 measurement style)
val_idx = ds.indices("val")[:256]
val_codes = torch.from_numpy(corpus.codes[val_idx])
val_lays = torch.from_numpy(corpus.layouts[val_idx])
prior = tr.build_latent_prior(cfg)
from semagen.checkpoint import unpack_module
unpack_module("model", prior, res_p.checkpoint.tensors); prior.eval()
with torch.no_grad():
    nll_val = float(prior.nll(val_codes, val_lays))
layoutp = tr.build_layout_prior(cfg)
unpack_module("model", layoutp, res_l.checkpoint.tensors); layoutp.eval()
with torch.no_grad():
    nll_lay = float(layoutp.nll(val_lays))
lap(f"held-out NLLs: latent={nll_val:.4f} (<2.773?) layout={nll_lay:.4f} (<1.282?)")

pipe = GenerationPipeline(res.checkpoint, res_p.checkpoint, res_l.checkpoint)
recon = pipe.reconstruct(ds.images[:128])
lap(f"recon MSE 128 scenes: {np.mean((recon-ds.images[:128])**2):.5f}")

# criterion 6 rehearsal
tr_idx = ds.indices("train")[:240]
vl_idx = ds.indices("val")[:120]
real_train, real_val = ds.subset(tr_idx), ds.subset(vl_idx)
t0 = time.time()
pairs = pipe.generate(240, seed=5, mode="layout_given", layouts=real_train.layouts)
lap(f"generated 240 layout-given pairs in {time.time()-t0:.0f}s")
gen = SceneDataset(images=np.stack([p[0].transpose(2,0,1) for p in pairs]).astype(np.float32),
                   layouts=np.stack([p[1] for p in pairs]).astype(np.int64),
                   splits=["g"]*240)
seg = evalkit.SegConfig(steps=400)
proto = evalkit.f1_protocol(real_train, gen, real_val, seg, seeds=(0, 1, 2))
for i, s in enumerate(proto.per_seed):
    lap(f"seed {i}: baseline={s.f1_baseline:.4f} augmented={s.f1_augmented:.4f} "
        f"gen_only={s.f1_generated_only:.4f} ratio={s.f1_generated_only/s.f1_baseline:.3f}")
lap(f"means: baseline={proto.mean('f1_baseline'):.4f} aug={proto.mean('f1_augmented'):.4f} "
    f"gen={proto.mean('f1_generated_only'):.4f}")

# criterion 7 rehearsal: one layout, 8 seeds
ref = real_train.layouts[0]
imgs = []
for s in range(8):
    p = pipe.generate(1, seed=100 + s, mode="layout_given", layouts=ref[None])
    imgs.append(p[0][0])
dists = [float(np.mean((imgs[i]-imgs[j])**2)) for i in range(8) for j in range(i+1, 8)]
lap(f"cond diversity: min pair MSE={min(dists):.6f} mean={np.mean(dists):.6f}")

# full-mode sampling works on non-constraint data too (layout stats)
t0 = time.time()
full_pairs = pipe.generate(64, seed=11, mode="full")
lap(f"full mode 64 pairs in {time.time()-t0:.0f}s")
div = evalkit.layout_divergence([p[1] for p in full_pairs], ds.layouts[ds.indices("val")])
lap(f"full-mode layout divergence: class_js={div.class_js:.4f} count_js={div.count_js:.4f}")
lap("PILOT DONE")
