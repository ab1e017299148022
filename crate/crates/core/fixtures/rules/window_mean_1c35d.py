import numpy as np


def inference(sample: np.ndarray) -> np.ndarray:
    values = sample[:, 0]
    labels = np.zeros(sample.shape[0])
    window_small = 5
    window_large = 20
    for i in range(window_large, len(values)):
        last_N = values[i - window_small:i]
        last_M = values[i - window_large:i]
        avg_N = np.mean(last_N)
        avg_M = np.mean(last_M)
        # Abnormal Rule 1: A value differs from the mean of last N values by over 20%
        if values[i] > 1.2 * avg_N or values[i] < 0.8 * avg_N:
            labels[i] = 1
        # Abnormal Rule 2: The mean of last N values differs from the mean of
        # last M values by more than 20%
        elif avg_N > 1.2 * avg_M or avg_N < 0.8 * avg_M:
            labels[i - window_small:i] = 1
    return labels
