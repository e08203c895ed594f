import time
import numpy as np
from bladedesk import diffusion as df, oracle as orc, surrogate as sg, nn
from bladedesk.pipeline import generate_dataset, latin_hypercube, regression_metrics, fit_norm
from bladedesk.rngutil import rng

cfg = orc.OracleConfig(seed=23)
orc.calibrate_failure_threshold(cfg, 0.05, 10000)
ds = generate_dataset(2000, cfg, cfg.bounds, seed=11)
print('rows:', len(ds), flush=True)

t0 = time.monotonic()
net, hist = sg.train(ds, seed=0, epochs=100)
print(f'surrogate: {hist["epochs_run"]} epochs {time.monotonic()-t0:.0f}s best val {min(hist["val_mse"]):.4f}', flush=True)

# prepare diffusion training data
s = df.make_schedule()
x_stats = fit_norm(ds.inputs, 'zscore')
cond_stats = fit_norm(ds.labels, 'range')
data_x = x_stats.apply(ds.inputs)
targets_norm = cond_stats.apply(ds.labels)
pooled = net.pooled_repr(ds.inputs)
latents, _ = df.fit_guidance_latents(pooled)
guide = df.GuidanceNet.create(0)
gl = guide.train(targets_norm, latents, 0)
print(f'guidance final loss {gl[-1]:.4f}', flush=True)
guidance = guide.forward_batch(targets_norm)
data_cond = np.concatenate([targets_norm, guidance], axis=1)

dcfg = df.DenoiserConfig(cond_dim=data_cond.shape[1])
dnet = df.DenoiserNet.create(dcfg, 0)
opt = nn.AdamState(lr=2e-3)

# 100 feasible targets: oracle outputs of random in-bounds designs
probe = latin_hypercube(400, cfg.bounds, 313)
labels = cfg.evaluate_batch(probe)
ok = np.all(np.isfinite(labels), axis=1)
targets = labels[ok][:100]
print('targets ready:', targets.shape, flush=True)

def closed_loop_eval(tag):
    t1 = time.monotonic()
    t_norm = cond_stats.apply(targets)
    g_emb = guide.forward_batch(t_norm)
    conds = np.concatenate([t_norm, g_emb], axis=1)
    designs = df.sample_vectors(dnet, s, conds, len(conds), seed=202)
    raw = x_stats.invert(designs)
    clamped = cfg.bounds.clamp(raw)
    clamp_frac = float(np.mean(raw != clamped))
    achieved = cfg.evaluate_batch(clamped)
    conv = np.all(np.isfinite(achieved), axis=1)
    rate = conv.mean()
    msg = f'[{tag}] success {rate:.2f} clamp {clamp_frac:.3f}'
    for j, name in enumerate(orc.METRIC_NAMES):
        m = regression_metrics(targets[conv][:, j], achieved[conv][:, j])
        msg += f' | {name}: r2={m["r2"]:.3f} nrmse={m["nrmse"]:.3f}'
    msg += f' ({time.monotonic()-t1:.0f}s)'
    print(msg, flush=True)

t0 = time.monotonic()
for epoch in range(400):
    loss = df.train_epoch(data_x, data_cond, dnet, s, opt,
                          seed=int(rng(0, 4100, epoch).integers(0, 2**63 - 1)))
    if (epoch + 1) % 50 == 0:
        print(f'epoch {epoch+1} loss {loss:.3f} ({time.monotonic()-t0:.0f}s)', flush=True)
    if (epoch + 1) in (100, 200, 300, 400):
        closed_loop_eval(f'ep{epoch+1}')
