#pragma once

#include <functional>
#include <vector>

#include "refblend/dataset.hpp"
#include "refblend/diffusion.hpp"
#include "refblend/unet.hpp"

namespace refblend {

struct TrainOptions {
    int batch_size = 8;
    double lr = 2e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double adam_eps = 1e-8;
    double uncond_prob = 0.1; // chance a sample trains with the null prompt
    std::function<void(int epoch, double mean_loss)> on_epoch;
};

struct TrainStats {
    std::vector<double> epoch_loss;
};

// Noise-prediction MSE training with Adam. Updates the model in place and
// returns per-epoch mean losses. Deterministic given the rng seed. Throws
// NumericError("training_divergence") when the loss stops being finite.
TrainStats train_toy(UNetModel& model, const ShapesDataset& data, const NoiseSchedule& sched,
                     int epochs, Rng& rng, const TrainOptions& opts = {});

} // namespace refblend
