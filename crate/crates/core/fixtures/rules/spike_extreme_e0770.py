import numpy as np


def inference(sample: np.ndarray) -> np.ndarray:
    labels = np.zeros(sample.shape[0], dtype=int)
    # Abnormal Rule 1: If there are sudden spikes or drops in values.
    spikes_or_drops = np.abs(np.diff(sample[:, 0]))
    labels[1:][spikes_or_drops > 4000] = 1
    # Abnormal Rule 2: If there is a prolonged period (e.g., more than 10
    # consecutive points) of extreme values.
    extreme_values = (sample[:, 0] < 2000) | (sample[:, 0] > 15000)
    for i in range(len(extreme_values) - 10):
        if np.all(extreme_values[i:i + 10]):
            labels[i:i + 10] = 1
    return labels
