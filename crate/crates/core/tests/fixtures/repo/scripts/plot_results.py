# Raster plot of spike times with a population histogram underneath.
import matplotlib.pyplot as plt
from models import Recording

recording = Recording.load("session01")
figure, (raster_axis, histogram_axis) = plt.subplots(2, 1, sharex=True)
for row, neuron in enumerate(recording.neurons):
    raster_axis.vlines(neuron.spike_times, row, row + 0.8)
raster_axis.set_ylabel("neuron")
all_spikes = [t for neuron in recording.neurons for t in neuron.spike_times]
histogram_axis.hist(all_spikes, bins=50)
histogram_axis.set_xlabel("time (s)")
histogram_axis.set_ylabel("spike count")


# Save the raster figure next to the recording.
output_path = "figures/raster_session01.png"
figure.savefig(output_path, dpi=150)
plt.close(figure)
