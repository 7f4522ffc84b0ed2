def median_absolute_deviation(samples):
    """Median absolute deviation used as a robust noise estimate."""
    ordered = sorted(samples)
    median = ordered[len(ordered) // 2]
    deviations = sorted(abs(x - median) for x in samples)
    return deviations[len(deviations) // 2]


def detect_spike_candidates(trace, sampling_rate, factor=5.0, refractory_ms=1.0):
    """Mark samples above the threshold as spike candidates and merge close ones."""
    threshold = factor * median_absolute_deviation(trace)
    min_gap = int(sampling_rate * refractory_ms / 1000.0)
    candidates = []
    last = -min_gap - 1
    for index, value in enumerate(trace):
        if abs(value) > threshold and index - last > min_gap:
            candidates.append(index)
            last = index
    return candidates
