#pragma once

#include <functional>
#include <ostream>

#include "sdfit/supervision.hpp"

// Adam optimization loop with per-step CSV logging, periodic checkpoints,
// and deterministic resume (the sampler RNG rides along in TrainState).

namespace sdfit {

struct AdamConfig {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

struct TrainConfig {
    SupervisionMode mode = SupervisionMode::Sandwich;
    LossWeights weights;
    int steps = 5000;
    double learning_rate = 1e-4;
    AdamConfig adam;
    BatchCounts batch;
    int subgrid_factor = 2;
    std::uint64_t seed = 1;
    int checkpoint_every = 0;  // 0: only the final checkpoint

    void validate() const;
};

struct TrainState {
    FieldParams params;
    std::vector<double> moment1, moment2;
    long step = 0;
    Rng sampler_rng{0};

    static TrainState fresh(const FieldShape& shape, const TrainConfig& cfg);
};

/// One Adam update with bias correction. Throws NonFiniteValue on a
/// non-finite gradient. Advances the step counter.
void adam_step(TrainState& state, const FieldGrad& grad, const TrainConfig& cfg);

/// Invoked after checkpoint-worthy steps; `is_final` marks the last step.
using CheckpointSink = std::function<void(const TrainState&, bool is_final)>;

/// Runs sample -> total_loss -> adam_step until cfg.steps, starting from
/// state.step (so a restored state resumes exactly). Writes one CSV row per
/// step to `log` when given. Aborts with the failing step number on a
/// non-finite loss. `scene` is only required for oracle supervision.
void train_steps(TrainState& state, const std::vector<PointSample>& scans, const OccupancyGrid& grid,
                 const TrainConfig& cfg, std::ostream* log = nullptr,
                 const CheckpointSink& on_checkpoint = {}, const Scene* scene = nullptr);

/// Fresh-state convenience wrapper around train_steps.
TrainState train(const FieldShape& shape, const std::vector<PointSample>& scans, const OccupancyGrid& grid,
                 const TrainConfig& cfg, std::ostream* log = nullptr,
                 const CheckpointSink& on_checkpoint = {}, const Scene* scene = nullptr);

/// Header line written at the top of the training log.
std::string train_log_header(const TrainConfig& cfg);

}  // namespace sdfit
