scenarios = {
    "illustration": {"a": 0.01, "Q": 0.1, "R": 0.1, "prior_mean": [3.0], "prior_cov": [4.0], "y": [1.25], "max_iters": 2, "grid_lo": -10.0, "grid_hi": 10.0, "grid_points": 4001},
    "example1d": {"Q": 0.1, "R": 1.0, "prior_mean": [-2.9], "prior_cov": [1.0], "true_x0": [-3.2], "max_iters": 10, "grid_lo": -6.0, "grid_hi": 2.0, "grid_points": 401},
    "tracking": {"T": 1.0, "q1": 1e-1, "q2": 1e-2, "sigma_sq": 1.0, "true_x0": [0.0, 10.0, 0.0, 10.0, 0.1], "prior_cov": [1.0, 1.0, 1.0, 1.0, 1e-2], "steps": 100, "seed": 2024},
    "tdoa": {
        "T": 1.0,
        "q1": 1e-2,
        "q2": 1e-2,
        "sigma_sq_1": 1e-2,
        "sigma_sq_2": 1e-2,
        "sigma_sq_3": 1e-2,
        "sigma_sq_4": 1e-2,
        "mic_1_x": 0.0,
        "mic_1_y": 0.0,
        "mic_2_x": 4.0,
        "mic_2_y": 0.0,
        "mic_3_x": 4.0,
        "mic_3_y": 4.0,
        "mic_4_x": 0.0,
        "mic_4_y": 4.0,
        "true_x0": [2.0, 0.25, 2.0, 0.0, 0.3],
        "prior_cov": [0.1, 0.01, 0.1, 0.01, 0.01],
        "steps": 60,
        "seed": 2024,
    },
}

sweep_grids = {
    # q2 fixed by the scenario, 5 x 5 grid over q1 and sigma^2; mc_runs scaled down from 200
    "tracking": {"q1_values": [1e-3, 1e-2, 1e-1, 1.0, 10.0], "sigma_sq_values": [1e-2, 1e-1, 1.0, 10.0, 1e2], "mc_runs": 20},
    # q1 = 10^-j, q2 = 10^-l for j = 0..6, l = 0..5
    "tdoa": {"q1_values": [10.0**-j for j in range(7)], "q2_values": [10.0**-j for j in range(6)], "mc_runs": 10},
}

filter_defaults = {
    "max_iters": 10,
    "gamma": 1e-6,
    "outer_max": 5,
    "tracking_variants": ["EKF", "IEKF", "DIEKF", "UKF", "IUKF", "DIUKF", "IPLF", "DIPLF"],
    "tdoa_variants": ["EKF", "IEKF", "LS_IEKF", "DIEKF", "LS_DIEKF"],
    "example1d_variants": ["IEKF", "DIEKF", "LS_DIEKF"],
    # TDOA divergence threshold on position RMSE; tracking runs use sqrt(sigma^2)
    "tdoa_threshold": 1.0,
}

# (iterated, baseline) pairs reported as RMSE ratio matrices
ratio_pairs = {
    "tracking": [("DIEKF", "EKF"), ("DIUKF", "UKF"), ("DIPLF", "IPLF")],
    "tdoa": [("LS_DIEKF", "EKF"), ("DIEKF", "EKF"), ("IEKF", "EKF"), ("LS_IEKF", "EKF")],
}

# key = value registry for --config files and --set overrides
config_keys = {
    "a": "float",
    "Q": "float",
    "R": "float",
    "T": "float",
    "q1": "float",
    "q2": "float",
    "sigma_sq": "float",
    "sigma_sq_1": "float",
    "sigma_sq_2": "float",
    "sigma_sq_3": "float",
    "sigma_sq_4": "float",
    "mic_1_x": "float",
    "mic_1_y": "float",
    "mic_2_x": "float",
    "mic_2_y": "float",
    "mic_3_x": "float",
    "mic_3_y": "float",
    "mic_4_x": "float",
    "mic_4_y": "float",
    "prior_mean": "floats",
    "prior_cov": "floats",
    "true_x0": "floats",
    "y": "floats",
    "seed": "int",
    "steps": "int",
    "mc_runs": "int",
    "q1_values": "floats",
    "q2_values": "floats",
    "sigma_sq_values": "floats",
    "max_iters": "int",
    "gamma": "float",
    "outer_max": "int",
    "grid_points": "int",
    "grid_lo": "float",
    "grid_hi": "float",
}
