#pragma once

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "pdro/classifier.hpp"
#include "pdro/cost.hpp"
#include "pdro/image.hpp"

namespace pdro {

enum class AttackMethod { ssim_one_step, pgd_one_step, pgd_iterative, perceptual };

std::string to_string(AttackMethod method);
/// Accepts the CLI spellings: ssim-onestep, pgd-onestep, pgd, perceptual.
AttackMethod parse_attack_method(const std::string& name);

struct AttackConfig {
    AttackMethod method = AttackMethod::perceptual;
    double epsilon = 0.1;       // step size
    double lambda = 1.0;        // cost penalty
    double confidence = 0.0;    // early-stop logit margin a
    int max_iterations = 100;   // N
    CostPtr cost = make_cost("ssim-windowed");
    double hessian_ridge = 1e-6; // ridge = hessian_ridge * trace(H) / n
    HessianPolicy hessian_policy = HessianPolicy::global_ssim_only;

    /// Strict run-level checks: epsilon > 0, N >= 1, lambda >= 0, a >= 0, a cost is set,
    /// and the one-step SSIM method is paired with the ssim-global cost.
    void validate() const;
};

struct Distances {
    double l1 = 0, l2 = 0, linf = 0, one_minus_ssim = 0;
};

/// l1/l2/linf plus 1 - SSIM (windowed when the image fits the 11x11 window, else global).
Distances distances_between(const Image& original, const Image& adversarial);

struct AttackResult {
    Image adversarial;
    bool success = false;        // argmax of the adversarial logits differs from the label
    int iterations_used = 0;
    double margin = 0;           // max_{i != y} logits_i - logits_y at termination
    Distances distances;
    bool degenerate_gradient = false; // iterative PGD stopped on a zero gradient
};

/// Called with x0 and then with every validated iterate.
using IterateObserver = std::function<void(const Image&)>;

AttackResult ssim_one_step_attack(const Model& m, const LabeledExample& ex, const AttackConfig& cfg);
AttackResult pgd_one_step_attack(const Model& m, const LabeledExample& ex, const AttackConfig& cfg);
AttackResult pgd_iterative_attack(const Model& m, const LabeledExample& ex, const AttackConfig& cfg);

/// Penalized ascent x <- clamp(x + eps (grad loss - lambda grad c0(x0, x))), stopping as
/// soon as the logit margin exceeds the confidence.
AttackResult perceptual_attack(const Model& m, const LabeledExample& ex, const AttackConfig& cfg,
                               const IterateObserver& observer = {});

/// Dispatches on cfg.method.
AttackResult run_attack(const Model& m, const LabeledExample& ex, const AttackConfig& cfg);

struct RobustLossValue {
    double value = 0;
    Image attack_point;
};

/// loss(x) - lambda c0(x0, x) at the best point visited by `perceptual_attack`
/// (x0 included), a lower bound on the penalized supremum.
RobustLossValue robust_surrogate(const Model& m, const LabeledExample& ex, const AttackConfig& cfg);

struct IndexedAttack {
    std::size_t index = 0; // position in the dataset
    AttackResult result;
};

struct SuccessSummary {
    double rate = 0;
    std::size_t attacked = 0; // flipped
    std::size_t eligible = 0; // correctly classified before the attack
    Distances mean_distances;  // over flipped examples
    std::vector<IndexedAttack> attacks; // one per eligible example, dataset order
};

/// Attacks every correctly classified example. Throws UndefinedRateError when none is.
SuccessSummary success_rate(const Model& m, const Dataset& d, const AttackConfig& cfg,
                            std::size_t workers = 1);

SuccessSummary summarize(std::vector<IndexedAttack> attacks, std::size_t eligible);

struct Defense {
    enum class Kind { none, bit_depth, jpeg };
    Kind kind = Kind::none;
    int parameter = 0; // bits or quality

    static Defense none() { return {}; }
    static Defense bit_depth(int bits) { return {Kind::bit_depth, bits}; }
    static Defense jpeg(int quality) { return {Kind::jpeg, quality}; }

    Image apply(const Image& x) const;
    std::string name() const;
};

Defense::Kind parse_defense_kind(const std::string& name);

/// Fraction of eligible examples still misclassified after the defense is applied to
/// their adversarial image.
double defense_success_rate(const Model& m, const Dataset& d, const AttackConfig& cfg,
                            const Defense& defense, std::size_t workers = 1);

/// Same rate for precomputed attacks.
double defended_rate(const Model& m, const Dataset& d, const SuccessSummary& attacks,
                     const Defense& defense);

struct DefenseRow {
    int parameter = 0;
    double success_rate = 0;
};

/// Attacks once, then evaluates each defense parameter of `kind` on the same images.
std::vector<DefenseRow> defense_sweep(const Model& m, const Dataset& d, const AttackConfig& cfg,
                                      Defense::Kind kind, const std::vector<int>& parameters,
                                      std::size_t workers = 1);

} // namespace pdro
