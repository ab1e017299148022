import numpy as np


def rule(sample: np.ndarray, threshold: float) -> np.ndarray:
    # Get values and create labels
    values = sample[:, 0]
    labels = np.zeros(sample.shape[0])
    # Calculate mean and standard deviation
    mean_val = np.mean(values)
    std_val = np.std(values)
    # Abnormal Rule 1: a value more than threshold * standard deviations
    # away from the mean is abnormal
    labels[np.abs(values - mean_val) > threshold * std_val] = 1
    return labels


def inference(sample: np.ndarray) -> np.ndarray:
    return rule(sample, 3.0)
