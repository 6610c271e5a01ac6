#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include "sdfit/field.hpp"
#include "sdfit/scene.hpp"

// Training objectives. The sandwich SDF loss combines exact zero-level and
// normal constraints from surface scans with signed push terms from occupied
// (minimum over sub-grid probes, pushed negative) and free voxels (pushed
// positive). The siren / lode / oracle variants reproduce the alternative
// supervision paradigms for the ablation, and the semantic cross-entropy and
// joint Dice terms supervise the semantic head and couple it to geometry.

namespace sdfit {

struct LossWeights {
    std::array<double, 8> gamma{1.0, 1.0, 30.0, 0.05, 0.05, 1.0, 1.0, 1.0};
    double alpha = 100.0;  // push-term exponent scale
    double beta = 100.0;   // free-probability softmax scale
    double t = 0.005;      // free-probability threshold (meters)

    void validate() const;
};

enum class SupervisionMode { Sandwich, Siren, Lode, Oracle };

const char* to_string(SupervisionMode m);
SupervisionMode supervision_mode_from(const std::string& name);

struct OccSample {
    std::int64_t voxel = 0;
    int class_id = 0;
    std::vector<Vec3> probes;  // subgrid_factor^3 sub-cell centers
};

struct FreeSample {
    std::int64_t voxel = 0;
    Vec3 position;  // one uniform draw inside the voxel
};

struct SampleBatch {
    std::vector<PointSample> surface;  // scan points
    std::vector<OccSample> occupied;
    std::vector<FreeSample> free_space;
    std::vector<Vec3> uniform;  // positions in observed space
    int subgrid_factor = 2;
};

struct BatchCounts {
    int surface = 2048;
    int occupied = 1024;
    int free_space = 1024;
    int uniform = 1024;
};

/// Draws one optimization step's strata. Surface points and voxels are drawn
/// without replacement while the pool allows; free/uniform positions are
/// uniform inside their voxel. Unobserved voxels are never sampled.
SampleBatch sample_batch(const std::vector<PointSample>& scans, const OccupancyGrid& grid,
                         const BatchCounts& counts, int subgrid_factor, Rng& rng);

/// Per-term loss breakdown. `sdf` is the gamma1..gamma5 weighted SDF loss;
/// `total` additionally applies gamma6..gamma8.
struct LossTerms {
    double eikonal = 0.0;
    double normal = 0.0;
    double surface = 0.0;
    double occupied = 0.0;
    double free_space = 0.0;
    double data = 0.0;  // oracle-mode |phi - SDF| term
    double sdf = 0.0;
    double semantic = 0.0;
    double joint = 0.0;
    double total = 0.0;
    bool has_joint = false;
};

// Each loss adds `grad_scale` times its parameter gradient into `grad`
// (pass nullptr to skip gradients). Throws NonFiniteValue when a term
// overflows (NonFiniteLoss condition).

LossTerms sandwich_sdf_loss(const FieldParams& params, const SampleBatch& batch, const LossWeights& w,
                            FieldGrad* grad = nullptr, double grad_scale = 1.0);

LossTerms siren_sdf_loss(const FieldParams& params, const SampleBatch& batch, const LossWeights& w,
                         FieldGrad* grad = nullptr, double grad_scale = 1.0);

LossTerms lode_sdf_loss(const FieldParams& params, const SampleBatch& batch, const OccupancyGrid& grid,
                        const LossWeights& w, FieldGrad* grad = nullptr, double grad_scale = 1.0);

LossTerms oracle_sdf_loss(const FieldParams& params, const SampleBatch& batch, const Scene& scene,
                          const LossWeights& w, FieldGrad* grad = nullptr, double grad_scale = 1.0);

/// Mean cross-entropy between the semantic logits at each occupied voxel's
/// minimum-phi probe and the voxel class. Throws EmptyPool on an empty
/// occupied stratum.
double semantic_loss(const FieldParams& params, const SampleBatch& batch, FieldGrad* grad = nullptr,
                     double grad_scale = 1.0);

/// Free logit of a voxel's minimum SDF: inverse sigmoid of the two-way
/// softmax free probability, evaluated in log space. Analytically equals
/// beta * (min_phi - t).
double free_logit(double min_phi, double beta, double t);

/// Multi-class soft Dice: 1 - mean over ground-truth-present classes of
/// (2*sum(p*g) + eps) / (sum(p) + sum(g) + eps). `probs` is row-major,
/// num_classes entries per item; `gt` holds one class index per item.
struct SoftDice {
    double loss = 0.0;
    std::vector<double> numerator, denominator;  // per class
    std::vector<std::int64_t> gt_count;
    int present = 0;
};
SoftDice multiclass_soft_dice(std::span<const double> probs, std::span<const int> gt, int num_classes,
                              double eps = 1e-6);

/// Soft Dice between softmax([l_sem, l_free]) and the one-hot voxel labels
/// over the sampled occupied + free voxels (free appended as class s).
double joint_dice_loss(const FieldParams& params, const OccupancyGrid& grid, const SampleBatch& batch,
                       const LossWeights& w, FieldGrad* grad = nullptr, double grad_scale = 1.0);

/// gamma6 * L_sdf(mode) + gamma7 * L_sem + gamma8 * L_joint. Siren mode has
/// no voxel supervision, so its joint term is skipped and reported absent.
/// Oracle mode requires `scene`.
LossTerms total_loss(const FieldParams& params, const SampleBatch& batch, const OccupancyGrid& grid,
                     const LossWeights& w, SupervisionMode mode, FieldGrad* grad = nullptr,
                     const Scene* scene = nullptr);

}  // namespace sdfit
