# %% [markdown]
# # Classical training, transfer across angles, and the hybrid model
# A desk-sized walk through the three protocols. Budgets here are small so
# the script finishes in a few minutes; raise them for real runs.

# %%
from pathlib import Path

from qpinn.export import infer, write_vtk
from qpinn.geometry import MixerSpec, generate_mixer
from qpinn.trainer import TrainConfig, compare, train_classical, train_hybrid, transfer_learn

out = Path("demo_runs")
spec = MixerSpec(alpha=30.0, grid_step=0.15)
cloud = generate_mixer(spec)

# %% [markdown]
# Full-batch Adam followed by L-BFGS, one optimizer step per epoch.

# %%
cfg = TrainConfig(adam_epochs=200, lbfgs_epochs=20, geometry=spec, deterministic=True)
classical = train_classical(cfg, out / "classical", cloud=cloud)
print(f"classical: {classical.history[0].total:.4g} -> {classical.final.total:.4g} in {classical.duration:.0f}s")
print("final terms", {k: f"{v:.2e}" for k, v in classical.final.as_dict().items()})

# %% [markdown]
# Nudge the right inlet up one degree at a time, each step starting from the
# previous checkpoint.

# %%
steps = transfer_learn(classical.params, [31, 32, 33], 20, cfg, out / "transfer")
for alpha, r in zip([31, 32, 33], steps):
    print(f"alpha {alpha}: {r.history[0].total:.4g} -> {r.final.total:.4g}")

# %% [markdown]
# Swap the last dense layer for the quantum layer plus a 4 -> 4 head, and
# train everything with mini-batch Adam.

# %%
hcfg = TrainConfig(variant="hybrid", adam_epochs=10, lbfgs_epochs=0, batch_size=256, geometry=spec)
hybrid = train_hybrid(hcfg, classical.params, out / "hybrid", cloud=cloud)
print(f"hybrid: {hybrid.history[0].total:.4g} -> {hybrid.final.total:.4g}")

# Ten epochs is far too few for the fresh quantum head to catch up; with
# fifty or more the hybrid loss drops below the classical one.
c = compare(classical, hybrid)
print(f"(classical - hybrid) / classical = {100 * c.relative_difference:+.1f}%")

# %%
write_vtk(infer(classical.params, cloud), out / "classical.vtk")
print("open", out / "classical.vtk", "in ParaView")
