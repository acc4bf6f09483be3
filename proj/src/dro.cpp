#include "pdro/dro.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include "pdro/errors.hpp"
#include "pdro/format.hpp"
#include "pdro/parallel.hpp"

namespace pdro {

namespace {

double mean_of(std::span<const double> v) {
    return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

// theta <- theta - step * grad loss(theta; x, y); returns the loss before the step.
double sgd_step(Model& model, const Image& x, int label, double step, double loss_limit,
                const std::string& where) {
    const auto g = loss_and_gradients(model, x, label, false, true);
    if (!std::isfinite(g.loss) || g.loss > loss_limit)
        throw NumericError("training diverged at " + where + " (loss " + format_double(g.loss) + ")");
    auto& p = model.mutable_params();
    for (std::size_t i = 0; i < p.size(); ++i) p[i] -= step * g.param_grad[i];
    return g.loss;
}

double step_scale(WeightMode mode, double weight, double mean_weight) {
    return mode == WeightMode::literal ? weight : weight / mean_weight;
}

} // namespace

std::string to_string(WeightMode mode) { return mode == WeightMode::literal ? "literal" : "normalized"; }

WeightMode parse_weight_mode(const std::string& name) {
    if (name == "literal") return WeightMode::literal;
    if (name == "normalized") return WeightMode::normalized;
    throw ParameterError("unknown weight mode '" + name + "' (expected literal or normalized)");
}

std::vector<double> RobustDataset::weights() const {
    std::vector<double> w(entries.size());
    std::transform(entries.begin(), entries.end(), w.begin(), [](const auto& e) { return e.weight; });
    return w;
}

Dataset RobustDataset::as_dataset() const {
    Dataset d;
    d.class_count = class_count;
    for (const auto& e : entries) d.examples.push_back({e.image, e.label});
    return d;
}

void DroConfig::validate() const {
    if (outer_steps < 0 || epochs < 0) throw ParameterError("T1 and T2 must be non-negative");
    if (!(learning_rate > 0) || !std::isfinite(learning_rate))
        throw ParameterError("DRO learning rate must be positive");
    if (run_count < 1) throw ParameterError("run count must be positive");
    if (!(radius >= 0)) throw ParameterError("DRO radius must be non-negative");
    if (!(divergence_loss_limit > 0)) throw ParameterError("divergence limit must be positive");
}

WeightedSampler::WeightedSampler(std::span<const double> weights) : cumulative_(weights.size()) {
    if (weights.empty()) throw ParameterError("cannot sample from an empty weight vector");
    double total = 0;
    for (std::size_t i = 0; i < weights.size(); ++i) {
        if (!(weights[i] >= 0) || !std::isfinite(weights[i]))
            throw ParameterError("sampling weights must be finite and non-negative");
        cumulative_[i] = total += weights[i];
    }
    if (!(total > 0)) throw ParameterError("sampling weights sum to zero");
}

std::size_t WeightedSampler::draw(Rng& rng) const {
    const double u = rng.uniform() * cumulative_.back();
    const auto it = std::upper_bound(cumulative_.begin(), cumulative_.end(), u);
    return std::min<std::size_t>(static_cast<std::size_t>(it - cumulative_.begin()),
                                 cumulative_.size() - 1);
}

std::size_t uniform_index(Rng& rng, std::size_t n) {
    return std::min<std::size_t>(static_cast<std::size_t>(rng.uniform() * static_cast<double>(n)), n - 1);
}

GenerationResult generate_robust_dataset(const Model& m0, const Dataset& d, const DroConfig& cfg,
                                         std::uint64_t seed) {
    cfg.validate();
    if (d.empty()) throw ParameterError("robust dataset generation needs a non-empty dataset");
    d.check();
    const std::size_t n = d.size();

    GenerationResult out{{}, m0, {}};
    auto& rd = out.dataset;
    rd.origin_size = n;
    rd.class_count = d.class_count;
    for (const auto& ex : d.examples) rd.entries.push_back({ex.image, ex.label, 1.0, "original"});

    Rng rng = Rng::stream(seed, 0);
    for (int k = 1; k <= cfg.outer_steps; ++k) {
        const auto weights = rd.weights();
        const WeightedSampler sampler(weights);
        std::vector<std::size_t> batch(n);
        for (auto& idx : batch) idx = sampler.draw(rng);
        out.diagnostics.sampled_indices.insert(out.diagnostics.sampled_indices.end(), batch.begin(),
                                               batch.end());
        for (std::size_t i = 1; i <= n; ++i) {
            const WeightedExample drawn = rd.entries[batch[i - 1]];
            const double mean_weight = mean_of(rd.weights());
            const std::string where = "outer step " + std::to_string(k) + ", entry " + std::to_string(i);
            sgd_step(out.model, drawn.image, drawn.label,
                     cfg.learning_rate * step_scale(cfg.weight_mode, drawn.weight, mean_weight),
                     cfg.divergence_loss_limit, where);

            Image appended = drawn.image;
            try {
                auto r = run_attack(out.model, {drawn.image, drawn.label}, cfg.attack);
                if (!r.success || r.margin <= cfg.attack.confidence) ++out.diagnostics.not_flipped;
                appended = std::move(r.adversarial);
            } catch (const Error&) {
                ++out.diagnostics.attack_errors;
            }
            const double weight = static_cast<double>((k - 1) * n + i);
            rd.entries.push_back({std::move(appended), drawn.label, weight,
                                  "adversarial@" + std::to_string(k) + "," + std::to_string(i)});
        }
        rd.outer_steps_used = k;
    }
    return out;
}

Model dro_train(const Model& m0, const RobustDataset& rd, const DroConfig& cfg, std::uint64_t seed,
                std::vector<std::size_t>* drawn) {
    cfg.validate();
    if (rd.entries.empty()) throw ParameterError("DRO training needs a non-empty robust dataset");
    const auto weights = rd.weights();
    const WeightedSampler sampler(weights);
    const double mean_weight = mean_of(weights);
    Rng rng = Rng::stream(seed, 0);
    Model model = m0;
    const std::size_t m = rd.size();
    for (int k = 1; k <= cfg.epochs; ++k)
        for (std::size_t i = 1; i <= m; ++i) {
            const std::size_t idx = sampler.draw(rng);
            if (drawn != nullptr) drawn->push_back(idx);
            const auto& e = rd.entries[idx];
            sgd_step(model, e.image, e.label,
                     cfg.learning_rate * step_scale(cfg.weight_mode, e.weight, mean_weight),
                     cfg.divergence_loss_limit,
                     "epoch " + std::to_string(k) + ", step " + std::to_string(i));
        }
    return model;
}

std::uint64_t population_seed(std::uint64_t base_seed, std::uint64_t run_index, int attempt) {
    Rng r = Rng::stream(base_seed, run_index * 2 + static_cast<std::uint64_t>(attempt));
    return r.next();
}

std::vector<Model> sample_model_population(const Model& m0, const RobustDataset& rd,
                                           const DroConfig& cfg, std::uint64_t base_seed,
                                           std::size_t workers, PopulationReport* report) {
    cfg.validate();
    const auto runs = static_cast<std::size_t>(cfg.run_count);
    std::vector<Model> models(runs, m0);
    std::vector<std::uint64_t> seeds(runs);
    std::vector<int> retried(runs, 0);
    parallel_for(runs, workers, [&](std::size_t r) {
        seeds[r] = population_seed(base_seed, r);
        try {
            models[r] = dro_train(m0, rd, cfg, seeds[r]);
        } catch (const NumericError&) {
            retried[r] = 1;
            seeds[r] = population_seed(base_seed, r, 1);
            try {
                models[r] = dro_train(m0, rd, cfg, seeds[r]);
            } catch (const NumericError& e) {
                throw NumericError("population run " + std::to_string(r) + " failed twice: " + e.what());
            }
        }
    });
    if (report != nullptr) *report = {std::move(seeds), std::move(retried)};
    return models;
}

void save_robust_dataset(const RobustDataset& rd, const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir);
    Dataset d = rd.as_dataset();
    save_idx(d, dir / "images.idx", dir / "labels.idx", IdxPixelType::f64);
    std::ofstream csv(dir / "weights.csv");
    if (!csv) throw IoError("cannot write " + (dir / "weights.csv").string());
    csv << "entry_index,weight,provenance\n";
    for (std::size_t i = 0; i < rd.entries.size(); ++i)
        csv << i << ',' << format_double(rd.entries[i].weight) << ",\"" << rd.entries[i].provenance
            << "\"\n";
    std::ofstream meta(dir / "robust_meta.csv");
    meta << "origin_size,outer_steps_used\n" << rd.origin_size << ',' << rd.outer_steps_used << '\n';
}

RobustDataset load_robust_dataset(const std::filesystem::path& dir, int class_count) {
    const Dataset d = load_idx(dir / "images.idx", dir / "labels.idx", class_count);
    RobustDataset rd;
    rd.class_count = class_count;
    std::ifstream csv(dir / "weights.csv");
    if (!csv) throw IoError("cannot open " + (dir / "weights.csv").string());
    std::string line;
    std::getline(csv, line);
    if (line != "entry_index,weight,provenance") throw FormatError("unexpected weights.csv header");
    while (std::getline(csv, line)) {
        if (line.empty()) continue;
        std::istringstream row(line);
        std::string index, weight, provenance;
        std::getline(row, index, ',');
        std::getline(row, weight, ',');
        std::getline(row, provenance);
        if (provenance.size() >= 2 && provenance.front() == '"' && provenance.back() == '"')
            provenance = provenance.substr(1, provenance.size() - 2);
        const auto i = static_cast<std::size_t>(std::stoull(index));
        if (i != rd.entries.size() || i >= d.size())
            throw ConsistencyError("weights.csv rows do not match the image file");
        rd.entries.push_back({d.examples[i].image, d.examples[i].label, std::stod(weight), provenance});
    }
    if (rd.entries.size() != d.size()) throw ConsistencyError("weights.csv is missing entries");
    std::ifstream meta(dir / "robust_meta.csv");
    if (meta && std::getline(meta, line) && std::getline(meta, line)) {
        std::istringstream row(line);
        std::string origin, steps;
        std::getline(row, origin, ',');
        std::getline(row, steps);
        rd.origin_size = std::stoull(origin);
        rd.outer_steps_used = std::stoi(steps);
    }
    return rd;
}

} // namespace pdro
