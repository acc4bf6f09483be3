#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "pdro/attack.hpp"
#include "pdro/classifier.hpp"
#include "pdro/image.hpp"
#include "pdro/rng.hpp"

namespace pdro {

/// How a drawn entry's weight P scales its SGD step.
/// literal:    alpha * P
/// normalized: alpha * P / mean(current weights)
enum class WeightMode { literal, normalized };

std::string to_string(WeightMode mode);
WeightMode parse_weight_mode(const std::string& name);

struct WeightedExample {
    Image image;
    int label = 0;
    double weight = 1.0;
    std::string provenance; // "original" or "adversarial@k,i"
};

struct RobustDataset {
    std::vector<WeightedExample> entries;
    std::size_t origin_size = 0;
    int outer_steps_used = 0;
    int class_count = 10;

    std::size_t size() const noexcept { return entries.size(); }
    std::vector<double> weights() const;
    Dataset as_dataset() const;
};

struct DroConfig {
    int outer_steps = 2;   // T1
    int epochs = 3;        // T2
    double learning_rate = 0.03;
    AttackConfig attack;
    WeightMode weight_mode = WeightMode::normalized;
    int run_count = 50;    // R
    double radius = 0.0;   // recorded only; the penalty form fixes lambda
    /// Training aborts when a sampled loss is non-finite or exceeds this ceiling.
    double divergence_loss_limit = 1e4;

    void validate() const;
};

/// Draws indices with probability proportional to non-negative weights.
class WeightedSampler {
public:
    explicit WeightedSampler(std::span<const double> weights);

    std::size_t draw(Rng& rng) const;
    std::size_t size() const noexcept { return cumulative_.size(); }
    double total() const noexcept { return cumulative_.empty() ? 0.0 : cumulative_.back(); }

private:
    std::vector<double> cumulative_;
};

/// floor(u * n) for the next uniform u; coincides with `WeightedSampler::draw` when
/// every weight is 1.
std::size_t uniform_index(Rng& rng, std::size_t n);

struct GenerationDiagnostics {
    std::size_t attack_errors = 0;   // attack threw; the clean drawn example was appended
    std::size_t not_flipped = 0;     // N exhausted without reaching the confidence margin
    std::vector<std::size_t> sampled_indices;
};

struct GenerationResult {
    RobustDataset dataset;
    Model model; // theta after the interleaved updates, for diagnostics
    GenerationDiagnostics diagnostics;
};

/// Robust-dataset generation: per outer step, draw N entries proportionally to the current
/// weights, and for each one take an SGD step, attack it against the current model and
/// append the result with weight (k - 1) N + i.
GenerationResult generate_robust_dataset(const Model& m0, const Dataset& d, const DroConfig& cfg,
                                         std::uint64_t seed);

/// Weighted DRO training: T2 passes of M proportional draws, each followed by an SGD step
/// scaled by the drawn weight. `drawn`, when given, receives the sampled indices.
Model dro_train(const Model& m0, const RobustDataset& rd, const DroConfig& cfg, std::uint64_t seed,
                std::vector<std::size_t>* drawn = nullptr);

struct PopulationReport {
    std::vector<std::uint64_t> seeds;  // seed actually used per run
    std::vector<int> retried;          // 1 when the run needed its retry
};

/// R independent `dro_train` runs with seeds derived from (base_seed, run index). A run
/// that fails numerically is retried once with a fresh derived seed.
std::vector<Model> sample_model_population(const Model& m0, const RobustDataset& rd,
                                           const DroConfig& cfg, std::uint64_t base_seed,
                                           std::size_t workers = 1,
                                           PopulationReport* report = nullptr);

std::uint64_t population_seed(std::uint64_t base_seed, std::uint64_t run_index, int attempt = 0);

/// Writes images.idx (IDX doubles), labels.idx and weights.csv
/// (entry_index,weight,provenance) into `dir`.
void save_robust_dataset(const RobustDataset& rd, const std::filesystem::path& dir);
RobustDataset load_robust_dataset(const std::filesystem::path& dir, int class_count = 10);

} // namespace pdro
