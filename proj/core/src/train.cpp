#include "refblend/train.hpp"

#include <cmath>

#include "refblend/numerics.hpp"

namespace refblend {

TrainStats train_toy(UNetModel& model, const ShapesDataset& data, const NoiseSchedule& sched,
                     int epochs, Rng& rng, const TrainOptions& opts) {
    if (data.items.empty()) throw UsageError("bad_config", "training dataset is empty");
    if (epochs < 0) throw UsageError("bad_config", "epochs must be >= 0");
    if (data.image_size != model.config.image_size)
        throw UsageError("shape_mismatch", "dataset resolution does not match the model");

    size_t n_params = model.params.size();
    std::vector<Tensor> adam_m(n_params), adam_v(n_params), grad_acc(n_params);
    for (size_t i = 0; i < n_params; ++i) {
        adam_m[i] = Tensor(model.params[i].value.shape);
        adam_v[i] = Tensor(model.params[i].value.shape);
        grad_acc[i] = Tensor(model.params[i].value.shape);
    }

    TrainStats stats;
    int64_t adam_t = 0;
    int n = static_cast<int>(data.items.size());
    std::vector<int> order(static_cast<size_t>(n));

    for (int epoch = 0; epoch < epochs; ++epoch) {
        for (int i = 0; i < n; ++i) order[static_cast<size_t>(i)] = i;
        for (int i = n - 1; i > 0; --i) std::swap(order[static_cast<size_t>(i)],
                                                  order[static_cast<size_t>(rng.next_int(0, i))]);

        double epoch_loss = 0.0;
        for (int start = 0; start < n; start += opts.batch_size) {
            int count = std::min(opts.batch_size, n - start);
            for (size_t i = 0; i < n_params; ++i)
                std::fill(grad_acc[i].data.begin(), grad_acc[i].data.end(), 0.0);

            double batch_loss = 0.0;
            for (int b = 0; b < count; ++b) {
                const DatasetItem& item = data.items[static_cast<size_t>(order[static_cast<size_t>(start + b)])];
                int t = rng.next_int(1, sched.T);
                Tensor eps = gaussian(rng, item.image.shape);
                bool drop = rng.next_uniform() < opts.uncond_prob;
                std::vector<int> tokens = drop ? std::vector<int>{vocab::kNull} : item.tokens;

                Tensor z_t = forward_diffuse(item.image, t, eps, sched);
                ag::Tape tape;
                std::vector<int> param_nodes;
                ag::Val pred = forward_train(model, tape, z_t, t, tokens, param_nodes);
                ag::Val loss = ag::mse(&tape, pred, eps);
                batch_loss += loss.v()(0);
                tape.backward(loss.node);
                for (size_t i = 0; i < n_params; ++i) {
                    if (param_nodes[i] < 0 || !tape.has_grad(param_nodes[i])) continue;
                    const Tensor& g = tape.grad(param_nodes[i]);
                    for (int64_t j = 0; j < g.numel(); ++j)
                        grad_acc[i].data[static_cast<size_t>(j)] += g.data[static_cast<size_t>(j)];
                }
            }

            if (!std::isfinite(batch_loss))
                throw NumericError("training_divergence",
                                   "non-finite loss at epoch " + std::to_string(epoch) + ", batch offset " +
                                       std::to_string(start));
            epoch_loss += batch_loss;

            ++adam_t;
            double bc1 = 1.0 - std::pow(opts.beta1, static_cast<double>(adam_t));
            double bc2 = 1.0 - std::pow(opts.beta2, static_cast<double>(adam_t));
            double inv_count = 1.0 / count;
            for (size_t i = 0; i < n_params; ++i) {
                Tensor& p = model.params[i].value;
                for (int64_t j = 0; j < p.numel(); ++j) {
                    double g = grad_acc[i].data[static_cast<size_t>(j)] * inv_count;
                    double& m = adam_m[i].data[static_cast<size_t>(j)];
                    double& v = adam_v[i].data[static_cast<size_t>(j)];
                    m = opts.beta1 * m + (1.0 - opts.beta1) * g;
                    v = opts.beta2 * v + (1.0 - opts.beta2) * g * g;
                    double update = opts.lr * (m / bc1) / (std::sqrt(v / bc2) + opts.adam_eps);
                    p.data[static_cast<size_t>(j)] -= update;
                    if (!std::isfinite(p.data[static_cast<size_t>(j)]))
                        throw NumericError("training_divergence",
                                           "non-finite parameter " + model.params[i].name +
                                               " at epoch " + std::to_string(epoch));
                }
            }
        }
        double mean = epoch_loss / n;
        stats.epoch_loss.push_back(mean);
        if (opts.on_epoch) opts.on_epoch(epoch, mean);
    }
    return stats;
}

} // namespace refblend
