"""Hand-written pinch-and-carry controller used as a solvability oracle.

Reads only the observation vector, so it can stand in for an agent in
rollout collection (``act_exploit`` and ``act_explore`` are the same
controller). It restarts its phase machine whenever it sees the effectors
back at their home poses.
"""

import numpy as np

from trajher.env import OBS_CUBE_POS, OBS_EFFECTOR_POS, EnvParams, home_positions

SIDE_GAP = 0.008
STEP = 0.01
APPROACH_STEP = 0.018
CLEARANCE = 0.035
TOL = 0.003


class ScriptedPinch:
    def __init__(self, params: EnvParams | None = None):
        self.params = params or EnvParams()
        self.home = home_positions(self.params)
        self.phase = "approach"
        self.axis = None

    def _restart(self, cube):
        # pinch across the pair of faces whose normal is most tangential, so
        # both side targets stay inside the arena
        self.axis = np.array([0.0, 1.0]) if abs(cube[0]) >= abs(cube[1]) else np.array([1.0, 0.0])
        self.phase = "approach"

    def act_exploit(self, obs, goal):
        p = self.params
        h = p.cube_half_extent
        eff = obs[OBS_EFFECTOR_POS].reshape(3, 3)
        cube = obs[OBS_CUBE_POS]
        if self.axis is None or np.allclose(eff, self.home):
            self._restart(cube)
        off = self.axis * (h + SIDE_GAP)
        targets = eff.copy()
        targets[2] = [eff[2, 0], eff[2, 1], p.max_height - 0.02]

        if self.phase == "approach":
            sides = [cube[:2] - off, cube[:2] + off]
            safe_z = cube[2] + h + CLEARANCE
            done = 0
            for i in (0, 1):
                gap = np.linalg.norm(eff[i, :2] - sides[i])
                if gap < TOL:
                    targets[i] = np.append(sides[i], cube[2])
                    done += abs(eff[i, 2] - cube[2]) < TOL
                elif eff[i, 2] < safe_z - TOL:
                    targets[i] = np.append(eff[i, :2], safe_z)
                else:
                    targets[i] = np.append(sides[i], safe_z)
            if done == 2:
                self.phase = "carry"
        if self.phase == "carry":
            centre = np.array([goal[0], goal[1], goal[2] + h])
            targets[0] = np.append(centre[:2] - off, centre[2])
            targets[1] = np.append(centre[:2] + off, centre[2])

        delta = targets - eff
        norms = np.linalg.norm(delta, axis=1, keepdims=True)
        step = APPROACH_STEP if self.phase == "approach" else STEP
        scale = np.minimum(1.0, step / np.maximum(norms, 1e-12))
        return np.clip((delta * scale / (p.v_max * p.dt)).ravel(), -1.0, 1.0)

    def act_explore(self, obs, goal, rng=None, cfg=None):
        return self.act_exploit(obs, goal)
