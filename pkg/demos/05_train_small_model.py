"""End-to-end: train a small model and compare it with interpolation.

Runs a deliberately tiny configuration (a few minutes on a laptop), then
reconstructs a held-out time window and prints the comparison table.  For
the full desk-scale run used by the acceptance suite, see
tests/test_acceptance.py or `iwsr train --help`.
"""

from iwsr.fields import (GenConfig, TopographyProfile, baseline_upsample,
                         downsample, extract_patch, generate_synthetic,
                         normalize, terrain_fill)
from iwsr.metrics import comparison_table, eval_report
from iwsr.train import TrainConfig, superresolve, train

grid = terrain_fill(generate_synthetic(
    GenConfig(nt=32, nz=64, nx=256, seed=7), TopographyProfile("sill")))
normed, stats = normalize(grid)

held_out = 8
train_grid = extract_patch(normed, (0, 0, 0), (grid.nt - held_out, 64, 256))
truth = extract_patch(grid, (grid.nt - held_out, 0, 0), (held_out, 64, 256))

cfg = TrainConfig.desk_scale(epochs=5, blocks_per_epoch=12,
                             hr_block=(8, 64, 128), seed=0)
print(f"training on {train_grid.shape}, holding out the last "
      f"{held_out} frames; {cfg.epochs} epochs x {cfg.blocks_per_epoch} blocks")
state = train(train_grid, cfg, log=print)

truth_norm, _ = normalize(truth.copy(), stats)
lr_norm = downsample(truth_norm, cfg.factors)
recon = superresolve(state.model, lr_norm, cfg.factors,
                     hr_block=cfg.hr_block, hr_terrain=truth.terrain)
reports = {"model": eval_report(recon, truth)}
lr_phys = downsample(truth, cfg.factors)
reports["trilinear"] = eval_report(
    baseline_upsample(lr_phys, cfg.factors, method="trilinear"), truth)
print(comparison_table(reports))
print("five toy epochs are not enough to beat interpolation; the full "
      "desk-scale schedule (20 epochs x 50 blocks) is what the acceptance "
      "suite holds to >= 1 dB over trilinear")
