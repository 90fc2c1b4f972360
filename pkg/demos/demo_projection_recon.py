"""
Cone-beam projection and OS-SART reconstruction
================================================

Forward project a phantom with the desk geometry, check that the
backprojector is the transpose of the projector, then reconstruct and
watch the data residual fall epoch by epoch.
"""

import numpy as np

from scbct.ossart import OssartParams, residual_history
from scbct.phantoms import unit_phantom
from scbct.xproject import back_array, desk_geometry, forward_array, forward_project

vol = unit_phantom((32, 32, 32))
geom = desk_geometry(60)
proj = forward_project(vol, geom)
print("projections:", proj.data.shape, "max line integral %.2f mm" % proj.data.max())

# <Ax, y> against <x, A^T y> with random vectors
rng = np.random.default_rng(0)
x = rng.standard_normal(vol.dims)
y = rng.standard_normal(proj.data.shape)
ax = forward_array(x, vol.spacing, geom, 0.5)
aty = back_array(y, vol.dims, vol.spacing, geom, 0.5)
print("adjoint mismatch: %.2e" % (abs(np.vdot(ax, y) - np.vdot(x, aty)) / (np.linalg.norm(ax) * np.linalg.norm(y))))

ref = vol.values.astype(np.float64)
rmse = []
hist = residual_history(proj, vol.grid, OssartParams(n_subsets=10, n_epochs=8),
                        callback=lambda e, x: rmse.append(np.linalg.norm(x - ref) / np.linalg.norm(ref)))
for epoch, (r, e) in enumerate(zip(hist, rmse)):
    print(f"epoch {epoch}: residual {r:.4f}  relative error {e:.4f}")
