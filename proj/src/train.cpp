#include "sdfit/train.hpp"

#include <string>

#include "sdfit/kernels.hpp"

namespace sdfit {

void TrainConfig::validate() const {
    weights.validate();
    if (steps < 1) throw ConfigError("steps must be >= 1");
    if (learning_rate <= 0.0) throw ConfigError("learning_rate must be positive");
    if (subgrid_factor < 1) throw ConfigError("subgrid_factor must be >= 1");
    if (checkpoint_every < 0) throw ConfigError("checkpoint_every must be >= 0");
    if (adam.beta1 < 0 || adam.beta1 >= 1 || adam.beta2 < 0 || adam.beta2 >= 1 || adam.eps <= 0)
        throw ConfigError("invalid adam hyperparameters");
}

TrainState TrainState::fresh(const FieldShape& shape, const TrainConfig& cfg) {
    TrainState s;
    s.params = FieldParams::init(shape, cfg.seed);
    s.moment1.assign(s.params.values.size(), 0.0);
    s.moment2.assign(s.params.values.size(), 0.0);
    s.step = 0;
    s.sampler_rng = Rng(cfg.seed, 1);
    return s;
}

void adam_step(TrainState& state, const FieldGrad& grad, const TrainConfig& cfg) {
    if (grad.values.size() != state.params.values.size())
        throw ConfigError("gradient size does not match parameters");
    if (!all_finite(grad.values.data(), grad.values.size()))
        throw NonFiniteValue("non-finite gradient");
    ++state.step;
    kernels::AdamHyper h{cfg.learning_rate, cfg.adam.beta1, cfg.adam.beta2, cfg.adam.eps};
    kernels::active_backend().adam_update(state.params.values.data(), grad.values.data(),
                                          state.moment1.data(), state.moment2.data(),
                                          state.params.values.size(), h, state.step);
}

std::string train_log_header(const TrainConfig& cfg) {
    return std::string("# mode=") + to_string(cfg.mode) +
           "\nstep,eikonal,normal,surface,occupied,free,data,sdf,semantic,joint,total";
}

void train_steps(TrainState& state, const std::vector<PointSample>& scans, const OccupancyGrid& grid,
                 const TrainConfig& cfg, std::ostream* log, const CheckpointSink& on_checkpoint,
                 const Scene* scene) {
    cfg.validate();
    if (log && state.step == 0) *log << train_log_header(cfg) << "\n";

    FieldGrad grad(state.params.shape);
    while (state.step < cfg.steps) {
        SampleBatch batch = sample_batch(scans, grid, cfg.batch, cfg.subgrid_factor, state.sampler_rng);
        grad.zero();
        LossTerms terms;
        try {
            terms = total_loss(state.params, batch, grid, cfg.weights, cfg.mode, &grad, scene);
        } catch (const NonFiniteValue& e) {
            throw NonFiniteValue("step " + std::to_string(state.step + 1) + ": " + e.what());
        }
        adam_step(state, grad, cfg);
        if (log) {
            *log << state.step << ',' << format_double(terms.eikonal) << ',' << format_double(terms.normal)
                 << ',' << format_double(terms.surface) << ',' << format_double(terms.occupied) << ','
                 << format_double(terms.free_space) << ',' << format_double(terms.data) << ','
                 << format_double(terms.sdf) << ',' << format_double(terms.semantic) << ','
                 << (terms.has_joint ? format_double(terms.joint) : std::string("absent")) << ','
                 << format_double(terms.total) << "\n";
        }
        bool is_final = state.step >= cfg.steps;
        if (on_checkpoint && (is_final || (cfg.checkpoint_every > 0 && state.step % cfg.checkpoint_every == 0)))
            on_checkpoint(state, is_final);
    }
}

TrainState train(const FieldShape& shape, const std::vector<PointSample>& scans, const OccupancyGrid& grid,
                 const TrainConfig& cfg, std::ostream* log, const CheckpointSink& on_checkpoint,
                 const Scene* scene) {
    cfg.validate();
    TrainState state = TrainState::fresh(shape, cfg);
    train_steps(state, scans, grid, cfg, log, on_checkpoint, scene);
    return state;
}

}  // namespace sdfit
