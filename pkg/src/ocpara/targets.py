"""Reference values used by ``ocpara reproduce``."""

J_TABLE = (2, 4, 16, 64, 128)
FP_TABLE = ("lobatto2", "lobatto3", "lobatto4", "radau3")

# (cp, fp) -> [(phi_star, s_star)] over J_TABLE
TABLE1 = {
    ("be", "lobatto2"): [(0.264, 1.65), (0.287, 1.74), (0.298, 1.79), (0.298, 1.79), (0.298, 1.79)],
    ("sdirk22", "lobatto2"): [(0.269, 7.65), (0.263, 8.01), (0.262, 8.16), (0.262, 8.17), (0.262, 8.17)],
    ("ocp", "lobatto2"): [(0.020, 0.73), (0.014, 0.44), (0.013, 10.02), (0.014, 2.37), (0.014, 2.37)],
    ("be", "lobatto3"): [(0.299, 1.80), (0.299, 1.79), (0.298, 1.79), (0.298, 1.79), (0.298, 1.79)],
    ("sdirk22", "lobatto3"): [(0.261, 8.26), (0.261, 8.18), (0.262, 8.17), (0.262, 8.17), (0.262, 8.17)],
    ("ocp", "lobatto3"): [(0.014, 2.45), (0.014, 0.39), (0.014, 0.39), (0.014, 0.39), (0.014, 0.39)],
    ("be", "lobatto4"): [(0.298, 1.79)] * 5,
    ("sdirk22", "lobatto4"): [(0.262, 8.17)] * 5,
    ("ocp", "lobatto4"): [(0.014, 10.01), (0.014, 10.02), (0.014, 10.02), (0.014, 10.02), (0.014, 10.02)],
    ("be", "radau3"): [(0.298, 1.79)] * 5,
    ("sdirk22", "radau3"): [(0.262, 8.18), (0.262, 8.17), (0.262, 8.17), (0.262, 8.17), (0.262, 8.17)],
    ("ocp", "radau3"): [(0.014, 10.26), (0.014, 10.00), (0.014, 10.00), (0.014, 10.00), (0.014, 10.00)],
}
PHI_TOL = 0.002
S_REL_TOL = 0.02
S_ABS_TOL = 0.1  # used instead of the relative tolerance when s* < 2

# 112 * sup|h|; the 3-stage Lobatto IIIC function changes sign and is excluded
H_BOUND = {"lobatto2": 1.10e-2, "lobatto4": 2.20e-8, "radau3": 5.20e-7}
H_REL_TOL = {"lobatto2": 0.10}  # the others only need the right order of magnitude
K_SUP = {"lobatto2": 1.35e-2, "lobatto3": 1.40e-2, "lobatto4": 1.35e-2, "radau3": 1.36e-2}
K_REL_TOL = 0.05

# parareal iteration counts (BE, OCP) per fine propagator and step
TABLE2 = {
    "problem": "diffusion-c", "T": 100.0, "J": 100, "eta": 1e-7, "substeps": 1,
    "columns": [("lobatto3", 1 / 150, 10, 4), ("radau3", 1 / 45, 11, 4), ("lobatto4", 1 / 30, 10, 4)],
}
TABLE3 = {
    "problem": "allen-cahn:eps2=1", "T": 10.0, "J": 20, "eta": 1e-6, "substeps": 5,
    "columns": [("lobatto3", 1 / 300, 6, 3), ("radau3", 1 / 100, 11, 5), ("lobatto4", 1 / 80, 11, 3)],
}
ITER_TOL = 1
