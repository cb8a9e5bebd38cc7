"""Pure numpy versions of the compiled kernels in ``_ckernels.pyx``."""
import numpy as np


def lj_energy_forces(x, r_m, tau, oscillator, min_distance):
    n = x.shape[0]
    iu, ju = np.triu_indices(n, k=1)
    diff = x[iu] - x[ju]
    d2 = np.einsum("ij,ij->i", diff, diff)
    forces = np.zeros((n, 3))
    bad = np.flatnonzero(d2 < min_distance * min_distance)
    if bad.size:
        k = bad[0]
        return 0.0, forces, int(iu[k]), int(ju[k]), float(np.sqrt(d2[k]))
    inv2 = 1.0 / d2
    s6 = r_m**6 * inv2**3
    s12 = s6 * s6
    energy = float(np.sum(s12 - 2.0 * s6)) / tau
    coef = (12.0 / tau) * (s12 - s6) * inv2
    pair_f = coef[:, None] * diff
    np.add.at(forces, iu, pair_f)
    np.subtract.at(forces, ju, pair_f)
    if oscillator:
        centred = x - x.mean(axis=0)
        energy += 0.5 * float(np.sum(centred * centred))
        forces -= centred
    return energy, forces, -1, -1, 0.0


def pair_distances(frames):
    n = frames.shape[1]
    iu, ju = np.triu_indices(n, k=1)
    diff = frames[:, iu, :] - frames[:, ju, :]
    return np.sqrt(np.einsum("spk,spk->sp", diff, diff))
