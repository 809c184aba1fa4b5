"""Desk-scale calibration: full + ablation runs, probe, flip rates."""
import sys
import time

import torch

from attrfill.data import load_image, load_index, split
from attrfill.fixture import FIXTURE_ATTRIBUTES, generate_fixture
from attrfill.losses import LossWeights
from attrfill.masking import apply_mask, centered_mask, compose_modified, extract_patch
from attrfill.metrics import evaluate_inpainting, flip_report, psnr, to_unit_range, train_probe
from attrfill.trainer import TrainConfig, train

ROOT = sys.argv[1] if len(sys.argv) > 1 else "/tmp/desk_faces"
N_ITER = int(sys.argv[2]) if len(sys.argv) > 2 else 5000

t0 = time.time()
attr = generate_fixture(ROOT, 2000, seed=20)
print(f"fixture: {time.time()-t0:.0f}s", flush=True)
index = load_index(ROOT, attr, list(FIXTURE_ATTRIBUTES))
train_idx, test_idx = split(index, 200, seed=0)

def mk_cfg(ablation):
    return TrainConfig(image_size=64, patch_size=26, n_iter=N_ITER,
                       batch_size=8, base_channels=16, n_res_blocks=2, seed=0,
                       lr_rec=1e-3, lr_gen=5e-4, lr_disc=5e-4,
                       weights=LossWeights(lambda_c=5.0),
                       ablation_bypass_reconstructor=ablation)

def progress(event):
    i = event["iteration"]
    if i % 500 == 0:
        r = event["report"]
        print(f"  iter {i}: ae_ct={r.ae_contour:.4f} ae_p={r.ae_patch:.4f} "
              f"adv_g={r.adv_g:.3f} class_r={r.class_r:.3f} cycle={r.cycle:.4f} "
              f"({time.time()-t0:.0f}s)", flush=True)

def gen_psnr(bundle, idx_, masked_input):
    m = centered_mask(64, 26)
    vals = []
    with torch.no_grad():
        for start in range(0, len(idx_), 16):
            chunk = idx_.entries[start:start + 16]
            x = torch.stack([load_image(p, 64) for p, _ in chunk])
            codes = torch.tensor([b for _, b in chunk], dtype=torch.float32)
            x_bar = apply_mask(x, m)
            if masked_input:
                g_in = x_bar
            else:
                g_in = compose_modified(x_bar, extract_patch(bundle.reconstructor(x_bar), m), m)
            out = bundle.generator(g_in, codes)
            for i in range(x.shape[0]):
                v = psnr(to_unit_range(x[i]), to_unit_range(out[i]))
                if v != float("inf"):
                    vals.append(v)
    return sum(vals) / len(vals)

print("=== full run ===", flush=True)
t0 = time.time()
state_full = train(mk_cfg(False), train_idx, hook=progress)
print(f"full run: {time.time()-t0:.0f}s", flush=True)

report = evaluate_inpainting(state_full.bundle, test_idx)
print(f"psnr={report.psnr_mean:.2f} baseline={report.baseline_psnr_mean:.2f} "
      f"gap={report.psnr_mean-report.baseline_psnr_mean:.2f}", flush=True)
print(f"ssim={report.ssim_mean:.4f} baseline={report.baseline_ssim_mean:.4f} "
      f"gap={report.ssim_mean-report.baseline_ssim_mean:.4f}", flush=True)

t1 = time.time()
probe, acc = train_probe(train_idx, 64, seed=1, epochs=2, batch_size=32, holdout=200)
print(f"probe acc={acc:.3f} ({time.time()-t1:.0f}s)", flush=True)
flips = flip_report(state_full.bundle, probe, test_idx)
for attr_name, dirs in flips.items():
    print(f"flip {attr_name}: 0->1 {dirs['0->1']['rate']:.3f} (n={dirs['0->1']['n']}), "
          f"1->0 {dirs['1->0']['rate']:.3f} (n={dirs['1->0']['n']}), "
          f"overall {dirs['overall']['rate']:.3f}", flush=True)

print("=== ablation run ===", flush=True)
t0 = time.time()
state_abl = train(mk_cfg(True), train_idx, hook=progress)
print(f"ablation run: {time.time()-t0:.0f}s", flush=True)

full_gen_psnr = gen_psnr(state_full.bundle, test_idx, masked_input=False)
abl_gen_psnr = gen_psnr(state_abl.bundle, test_idx, masked_input=True)
print(f"generator-output psnr: full={full_gen_psnr:.2f} ablation={abl_gen_psnr:.2f}", flush=True)
print("DONE", flush=True)
